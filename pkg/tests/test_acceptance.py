"""Acceptance suite: the ten release criteria at their stated tolerances.

Each test records a PASS/FAIL line that is printed at the end of the session
(see ``conftest.py``). Run just this module with ``pytest tests/test_acceptance.py``.
The ablation trend criteria (6-8) share one dataset and one trained-arm cache,
so the arms common to several suites are trained once.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
import torch

import cmfnet.metrics as M
from cmfnet.baselines import bicubic_baseline
from cmfnet.core import ManifestEntry, SplitSpec, read_manifest
from cmfnet.datagen import SceneRecipe, build_dataset, default_recipes, generate_scene, make_pair
from cmfnet.model import CMFNet, ModelConfig, forward
from cmfnet.trainer import (
    TrainConfig,
    evaluate_model,
    load_split,
    pairs_to_tensors,
    run_ablation,
    train,
)

import oracles
from acceptance_log import verdict
from gradcheck import gradient_check

# desk-scale ablation protocol shared by criteria 6-8 (see README); 100 epochs
# is enough for the full model to clear bicubic interpolation on the val split
ABLATION_MODEL = ModelConfig(base_channels=8)
ABLATION_TRAIN = TrainConfig(batch_size=16, max_epochs=100)
ABLATION_SEEDS = (0, 1, 2)

# Overfit smoke: batch 2 gives 4 steps per epoch on 8 pairs. The default
# patience of 10 epochs means thousands of optimizer steps on a full-size
# split; its step equivalent here (750 epochs) lies beyond the 2000-step
# budget, so the lr stays at 0.002 and the best-monitor weights are kept.
OVERFIT_TRAIN = TrainConfig(batch_size=2, max_epochs=10**6, max_steps=2000, plateau_patience=750)


def _rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


@pytest.mark.criterion(1)
def test_metric_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = dict.fromkeys(["psnr", "ssim", "sam", "ergas", "scc", "mse", "mae"], 0.0)
    for _ in range(100):
        y, gt = rng.random((2, 4, 8, 8))
        worst["psnr"] = max(worst["psnr"], _rel(M.psnr(y, gt), oracles.psnr(y, gt)))
        worst["ssim"] = max(worst["ssim"], _rel(M.ssim(y, gt), oracles.ssim(y, gt)))
        worst["sam"] = max(worst["sam"], _rel(M.sam(y, gt), oracles.sam(y, gt)))
        worst["ergas"] = max(worst["ergas"], _rel(M.ergas(y, gt, 4), oracles.ergas(y, gt, 4)))
        worst["scc"] = max(worst["scc"], _rel(M.scc(y, gt), oracles.scc(y, gt)))
        worst["mse"] = max(worst["mse"], _rel(M.mse(y, gt), oracles.mse(y, gt)))
        worst["mae"] = max(worst["mae"], _rel(M.mae_map(y, gt), oracles.mae_map(y, gt)))
    elapsed = time.perf_counter() - t0
    tol = {"ssim": 1e-6, "mae": 1e-6}
    ok = all(v <= tol.get(k, 1e-9) for k, v in worst.items()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    verdict(1, ok, detail)


@pytest.mark.criterion(2)
def test_identity_suite():
    gts = [generate_scene(SceneRecipe(kind, (64, 64), seed=s)).data
           for s, kind in enumerate(["water", "urban", "ice_snow", "crops", "vegetation", "barren"])]
    gts.append(np.random.default_rng(1).random((4, 32, 32)))
    entries = [ManifestEntry(f"id{i}", "", "", "", "GF2", "urban") for i in range(len(gts))]
    ev = M.evaluate(((e, g, g) for e, g in zip(entries, gts)), split=None)
    reports = [M.compute_all(g, g) for g in gts] + list(ev.rows.values())
    ok = all(r.psnr == M.PSNR_CAP and abs(r.ssim - 1) <= 1e-6 and r.sam <= 1e-6 and r.ergas <= 1e-9
             and abs(r.scc - 1) <= 1e-6 and r.mse_scaled == 0 for r in reports)
    worst_ssim = max(abs(r.ssim - 1) for r in reports)
    worst_scc = max(abs(r.scc - 1) for r in reports)
    verdict(2, ok, f"{len(reports)} reports; max |SSIM-1| {worst_ssim:.1e}, max |SCC-1| {worst_scc:.1e}, "
                   f"max SAM {max(r.sam for r in reports):.1e}")


def _closed_form(c, h, w):
    # stage i = 1..3; MS pyramid runs coarse to fine, PAN/fusion fine to coarse
    s = [(c * 2 ** (3 - i), h // 2 ** (3 - i), w // 2 ** (3 - i)) for i in (1, 2, 3)]
    p = [(c * 2 ** (i - 1), h // 2 ** (i - 1), w // 2 ** (i - 1)) for i in (1, 2, 3)]
    return s, p


@pytest.mark.criterion(3)
@torch.no_grad()
def test_shape_algebra():
    failures, n = [], 0
    for c in (8, 32):
        model = CMFNet(ModelConfig(base_channels=c)).eval()
        for h in (64, 128, 256):
            for w in (64, 128, 256):
                ms, pan = torch.rand(1, 4, h // 4, w // 4), torch.rand(1, 1, h, w)
                f = model.features(ms, pan)
                s, p = _closed_form(c, h, w)
                got = ([tuple(x.shape[1:]) for x in f["S"]], [tuple(x.shape[1:]) for x in f["P"]],
                       [tuple(x.shape[1:]) for x in f["E"]], tuple(f["F_o"].shape[1:]))
                y = forward(ms[0], pan[0], model=model)
                n += 1
                if got != (s, p, p, (c, h, w)) or tuple(y.shape) != (4, h, w):
                    failures.append((c, h, w))
    verdict(3, not failures, f"{n} configurations" + (f", mismatches at {failures}" if failures else " match"))


@pytest.mark.criterion(4)
def test_gradient_check():
    g = torch.Generator().manual_seed(11)
    model = CMFNet(ModelConfig(base_channels=4), seed=3)
    ms, pan = torch.rand(2, 4, 4, 4, generator=g), torch.rand(2, 1, 16, 16, generator=g)
    gt = torch.rand(2, 4, 16, 16, generator=g)
    errs = gradient_check(model, (ms, pan), gt, n_params=6, seed=5)
    worst = max(e for _, e in errs)
    verdict(4, worst <= 1e-3, f"{len(errs)} parameters, all gradients defined, max rel err {worst:.1e}")


@pytest.mark.criterion(5)
def test_overfit_smoke():
    recipes = default_recipes(2, (64, 64), seed=7)[:8]
    entries = [ManifestEntry(f"o{i}", "", "", "", "GF2", r.kind) for i, r in enumerate(recipes)]
    data = pairs_to_tensors(entries, [make_pair(r) for r in recipes])
    t0 = time.perf_counter()
    ckpt, log = train(ModelConfig(base_channels=16, cascade_levels=3), OVERFIT_TRAIN, (data, data))
    got = evaluate_model(ckpt.model(best=True), data, split=None).rows["overall"].psnr
    elapsed = time.perf_counter() - t0
    best = max(log.records, key=lambda r: r.val_psnr)
    verdict(5, got >= 38 and ckpt.step <= 2000 and elapsed < 900,
            f"train PSNR {got:.2f} dB (best weights at step {best.steps} of {ckpt.step}) in {elapsed:.0f}s")


@pytest.fixture(scope="module")
def ablation_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    recipes = default_recipes(34, (32, 32), seed=0)[:200]
    build_dataset(recipes, None, SplitSpec(seed=0, stratify_by=("scene",)), out)
    manifest = read_manifest(out / "manifest.jsonl")
    return load_split(manifest, "train"), load_split(manifest, "val")


@pytest.fixture(scope="module")
def arm_cache():
    return {}


def _suite(name, data, cache):
    return run_ablation(name, ABLATION_MODEL, ABLATION_TRAIN, data, seeds=ABLATION_SEEDS, cache=cache)


def _arms(table):
    return ", ".join(f"{k} {table.mean_psnr(k):.3f}" for k in table.rows)


@pytest.mark.criterion(6)
def test_cascade_trend(ablation_data, arm_cache):
    t = _suite("cascade", ablation_data, arm_cache)
    print("\n" + t.format())
    verdict(6, t.mean_psnr("3") >= t.mean_psnr("1"), f"mean val PSNR by L: {_arms(t)}")


@pytest.mark.criterion(7)
def test_injection_trend(ablation_data, arm_cache):
    t = _suite("injection", ablation_data, arm_cache)
    print("\n" + t.format())
    verdict(7, t.mean_psnr("✓") >= t.mean_psnr("✗"), f"mean val PSNR off/on: {_arms(t)}")


@pytest.mark.criterion(8)
def test_scalability_ordering(ablation_data, arm_cache):
    t = _suite("scalability", ablation_data, arm_cache)
    print("\n" + t.format())
    ps, sr, co = (t.mean_psnr(k) for k in ("PS (MS+PAN)", "SR (w/o PAN)", "CO (w/o MS)"))
    verdict(8, ps > sr > co, f"mean val PSNR: {_arms(t)}")


def test_cmfnet_beats_bicubic_on_ablation_set(ablation_data, arm_cache):
    """Sanity check beside the trends: the trained full model beats interpolation."""
    t = _suite("scalability", ablation_data, arm_cache)
    _, val = ablation_data
    y = bicubic_baseline(val.ms.double().numpy(), 4)
    gt = val.gt.double().numpy()
    bic = float(np.mean([M.psnr(y[i], gt[i]) for i in range(len(val))]))
    assert t.mean_psnr("PS (MS+PAN)") > bic


@pytest.mark.criterion(9)
def test_plateau_schedule(ablation_data):
    train_set, val_set = ablation_data
    small = (replace(train_set, entries=train_set.entries[:16], ms=train_set.ms[:16],
                     pan=train_set.pan[:16], gt=train_set.gt[:16]), val_set)
    _, log = train(ModelConfig(base_channels=4, cascade_levels=1), TrainConfig(max_epochs=14), small,
                   on_epoch=lambda epoch, monitor: 25.0)
    lrs = log.lrs
    first_drop = next(i for i, lr in enumerate(lrs, 1) if lr != 0.002)
    ok = lrs[:11] == [0.002] * 11 and all(abs(lr - 0.0002) <= 1e-15 for lr in lrs[11:])
    verdict(9, ok, f"lr 0.002 for epochs 1-11 (1 baseline + 10 stagnant), "
                   f"{lrs[first_drop - 1]:g} from epoch {first_drop}")


@pytest.mark.criterion(10)
def test_determinism(tmp_path):
    recipes = default_recipes(10, (32, 32), seed=4)
    spec = SplitSpec(seed=1, stratify_by=("scene",))
    logs, reports = [], []
    for run in ("a", "b"):
        build_dataset(recipes, None, spec, tmp_path / run / "data")
        manifest = read_manifest(tmp_path / run / "data" / "manifest.jsonl")
        ckpt, log = train(ModelConfig(base_channels=4, cascade_levels=2), TrainConfig(batch_size=8, max_epochs=3,
                                                                                      seed=5), manifest)
        ev = evaluate_model(ckpt.model(), load_split(manifest, "test"), manifest, keep_mae=True)
        paths = M.write_report(ev, tmp_path / run / "report", worst_n=2)
        logs.append(log.to_jsonl(with_wall=False))
        reports.append(b"".join(p.read_bytes() for p in paths.values()) +
                       b"".join(p.read_bytes() for p in sorted((tmp_path / run / "report" / "mae").iterdir())))
    same_manifest = ((tmp_path / "a/data/manifest.jsonl").read_bytes()
                     == (tmp_path / "b/data/manifest.jsonl").read_bytes())
    ok = logs[0] == logs[1] and reports[0] == reports[1] and same_manifest
    verdict(10, ok, f"TrainLog {len(logs[0])} bytes, reports {len(reports[0])} bytes, byte-identical: {ok}")
