import json

import pytest

from cmfnet.cli import RunConfig, UsageError, cmd_eval, main
from cmfnet.core import read_manifest
from cmfnet.metrics import PSNR_CAP
from cmfnet.trainer import load_split

TINY = {
    "data": {"n_per_scene": 10, "size": [32, 32], "satellites": ["GF2", "LC8"], "stratify_by": []},
    "model": {"base_channels": 4, "cascade_levels": 2},
    "train": {"batch_size": 8, "max_epochs": 2},
    "eval": {"worst_n": 3},
    "ablation": {"seeds": [0]},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["datagen", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root, cfg, root / "data" / "manifest.jsonl"


def test_datagen_outputs(workspace):
    root, _, manifest = workspace
    m = read_manifest(manifest)
    assert len(m.entries) == 60
    assert {e.native_ratio for e in m.entries} == {2, 4}
    saved = json.loads((root / "data" / "config.json").read_text())
    assert saved["model"]["base_channels"] == 4 and saved["data"]["size"] == [32, 32]


def test_train_and_eval(workspace, capsys):
    root, cfg, manifest = workspace
    assert main(["train", "--config", str(cfg), "--manifest", str(manifest), "--out", str(root / "runs"),
                 "--seed", "4"]) == 0
    (run_dir,) = (root / "runs").iterdir()
    assert run_dir.name.endswith("seed4")
    assert {p.name for p in run_dir.iterdir()} == {"config.json", "checkpoint.pt", "train_log.jsonl",
                                                   "summary.json"}
    assert len((run_dir / "train_log.jsonl").read_text().splitlines()) == 2
    out = capsys.readouterr().out
    assert "final train PSNR" in out

    ckpt = str(run_dir / "checkpoint.pt")
    for name in ("e1", "e2"):
        assert main(["eval", "--config", str(cfg), "--manifest", str(manifest), "--checkpoint", ckpt,
                     "--out", str(root / name)]) == 0
    for f in ("report.txt", "report.jsonl", "samples.jsonl"):
        assert (root / "e1" / f).read_bytes() == (root / "e2" / f).read_bytes()
    assert len(list((root / "e1" / "mae").glob("*.png"))) == 3
    strata = [json.loads(l)["stratum"] for l in (root / "e1" / "report.jsonl").read_text().splitlines()]
    assert strata[0] == "overall" and "satellite=GF2" in strata and "satellite=LC8" in strata


def test_eval_bicubic_baseline(workspace):
    root, cfg, manifest = workspace
    assert main(["eval", "--manifest", str(manifest), "--baseline", "bicubic", "--worst-n", "1",
                 "--out", str(root / "bic")]) == 0
    assert len(list((root / "bic" / "mae").glob("*.png"))) == 1


def test_eval_gt_echo_stub(workspace, tmp_path):
    _, _, manifest = workspace
    m = read_manifest(manifest)
    gt = load_split(m, "test").gt.double().numpy()
    paths = cmd_eval(lambda ms, pan: gt, m, tmp_path, worst_n=0)
    overall = json.loads(paths["rows"].read_text().splitlines()[0])
    assert overall["psnr"] == PSNR_CAP and overall["mse_scaled"] == 0.0
    assert abs(overall["ssim"] - 1) <= 1e-6


def test_exit_codes(workspace, tmp_path, capsys):
    root, _, manifest = workspace
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", str(tmp_path)])
    assert exc.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"width": 3}}))
    assert main(["datagen", "--config", str(bad), "--out", str(tmp_path / "d")]) == 1
    assert main(["train", "--manifest", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 2
    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    assert main(["eval", "--manifest", str(manifest), "--checkpoint", str(tmp_path / "junk.pt"),
                 "--out", str(tmp_path / "e")]) == 2
    boom = tmp_path / "boom.json"
    boom.write_text(json.dumps({**TINY, "train": {"lr": 1e30, "max_epochs": 3, "batch_size": 8}}))
    assert main(["train", "--config", str(boom), "--manifest", str(manifest), "--out", str(tmp_path)]) == 3
    assert "training failed" in capsys.readouterr().err


def test_run_config_validation():
    with pytest.raises(UsageError):
        RunConfig.from_dict({"optim": {}})
    with pytest.raises(UsageError):
        RunConfig.from_dict({"train": {"lr": -1}})
    cfg = RunConfig.from_dict(TINY).with_seed(9)
    assert cfg.train.seed == 9 and cfg.data.seed == 9
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_ablate_command(workspace):
    root, cfg, manifest = workspace
    assert main(["ablate", "--suite", "injection", "--config", str(cfg), "--manifest", str(manifest),
                 "--out", str(root / "abl")]) == 0
    rows = (root / "abl" / "ablation_injection.jsonl").read_text(encoding="utf-8").splitlines()
    assert [json.loads(r)["arm"] for r in rows] == ["✗", "✓"]
