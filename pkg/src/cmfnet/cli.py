"""Command-line entry point: ``cmfnet {datagen,train,eval,ablate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable


from .baselines import bicubic_baseline
from .core import CmfnetError, DataError, Manifest, SplitSpec, ensure_dir, read_manifest
from .datagen import DegradationSpec, build_dataset, default_recipes
from .metrics import evaluate, write_report
from .model import ModelConfig
from .trainer import (
    ConfigMismatch,
    CorruptCheckpoint,
    TrainConfig,
    TrainingFailure,
    evaluate_model,
    load_checkpoint,
    load_split,
    run_ablation,
    save_checkpoint,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(CmfnetError):
    pass


@dataclass(frozen=True)
class DataSection:
    n_per_scene: int = 10
    size: tuple[int, int] = (64, 64)
    seed: int = 0
    satellites: tuple[str, ...] = ("GF2",)
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    stratify_by: tuple[str, ...] = ("scene",)
    blur_sigma: float | None = None
    pan_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)


@dataclass(frozen=True)
class EvalSection:
    worst_n: int = 8
    split: str = "test"


@dataclass(frozen=True)
class AblationSection:
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {f.name: f.default_factory for f in fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        built = {}
        for name, factory in sections.items():
            sec_cls = type(factory())
            body = d.get(name, {})
            allowed = {f.name for f in fields(sec_cls)}
            bad = set(body) - allowed
            if bad:
                raise UsageError(f"unknown keys in [{name}]: {sorted(bad)}")
            body = {k: tuple(v) if isinstance(v, list) else v for k, v in body.items()}
            try:
                built[name] = sec_cls(**body)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"bad [{name}] section: {exc}") from exc
        return cls(**built)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, data=replace(self.data, seed=seed), train=replace(self.train, seed=seed))


def load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(d)


def write_run_config(cfg: RunConfig, out_dir: Path) -> None:
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")


# --------------------------------------------------------------------------
# commands


def cmd_datagen(cfg: RunConfig, out_dir) -> Manifest:
    d = cfg.data
    out = ensure_dir(out_dir)
    recipes = default_recipes(d.n_per_scene, d.size, d.seed, d.satellites)
    spec = DegradationSpec(4, d.blur_sigma) if d.blur_sigma is not None else None
    split = SplitSpec(d.fractions, d.seed, d.stratify_by)
    manifest = build_dataset(recipes, spec, split, out, d.pan_weights)
    write_run_config(cfg, out)
    for key in ("scene", "satellite", "split"):
        print(f"{key}: " + ", ".join(f"{k}={v}" for k, v in manifest.counts(key).items()))
    return manifest


def cmd_train(cfg: RunConfig, manifest_path, out_root) -> dict[str, Path]:
    manifest = read_manifest(manifest_path)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = ensure_dir(Path(out_root) / f"run-{stamp}-seed{cfg.train.seed}")
    write_run_config(cfg, run_dir)
    ckpt, log = train(cfg.model, cfg.train, manifest)
    paths = {"run_dir": run_dir, "checkpoint": run_dir / "checkpoint.pt", "log": run_dir / "train_log.jsonl"}
    save_checkpoint(ckpt, paths["checkpoint"])
    log.write(paths["log"])
    train_eval = evaluate_model(ckpt.model(best=True), load_split(manifest, "train"), split=None)
    summary = {"final_train_psnr": train_eval.rows["overall"].psnr, "best_val_psnr": ckpt.best_monitor,
               "epochs": ckpt.epoch, "steps": ckpt.step}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"run directory: {run_dir}")
    print(f"final train PSNR {summary['final_train_psnr']:.4f} dB, best val PSNR {ckpt.best_monitor:.4f} dB")
    return paths


def cmd_eval(predict: Callable | None, manifest: Manifest, out_dir, worst_n: int = 8, split: str = "test",
             checkpoint=None) -> dict[str, Path]:
    """Evaluate ``predict(ms, pan) -> y`` (numpy, batched) or a checkpoint on ``split``."""
    data = load_split(manifest, split)
    if checkpoint is not None:
        ev = evaluate_model(checkpoint.model(best=True), data, manifest, split=split, keep_mae=True)
    else:
        y = predict(data.ms.double().numpy(), data.pan.double().numpy())
        gt = data.gt.double().numpy()
        ev = evaluate(((e, y[i], gt[i]) for i, e in enumerate(data.entries)), manifest,
                      keep_mae=True, split=split)
    paths = write_report(ev, out_dir, worst_n)
    print(paths["table"].read_text(), end="")
    return paths


def bicubic_predict(ms, pan):
    return bicubic_baseline(ms, 4)


def cmd_ablate(suite: str, cfg: RunConfig, manifest_path, out_dir) -> Path:
    manifest = read_manifest(manifest_path)
    out = ensure_dir(out_dir)
    write_run_config(cfg, out)
    table = run_ablation(suite, cfg.model, cfg.train, manifest, seeds=cfg.ablation.seeds)
    path = out / f"ablation_{suite}.txt"
    path.write_text(table.format(), encoding="utf-8")
    with open(out / f"ablation_{suite}.jsonl", "w", encoding="utf-8") as fh:
        for label, rep in table.rows.items():
            fh.write(json.dumps({"arm": label, **asdict(rep), "per_seed_psnr": table.per_seed_psnr[label]},
                                sort_keys=True, ensure_ascii=False) + "\n")
    print(table.format(), end="")
    return path


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cmfnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int, help="override data and training seeds")
        sp.add_argument("--out", required=out_required, help="output directory")

    common(sub.add_parser("datagen", help="synthesize a dataset and manifest"))
    sp = sub.add_parser("train", help="train a model on a manifest")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp = sub.add_parser("eval", help="stratified evaluation and MAE maps")
    common(sp)
    sp.add_argument("--manifest", required=True)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--baseline", choices=["bicubic"])
    sp.add_argument("--worst-n", type=int)
    sp = sub.add_parser("ablate", help="run an ablation suite")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--suite", required=True, choices=["cascade", "injection", "scalability"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "datagen":
            cmd_datagen(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.manifest, args.out)
        elif args.command == "eval":
            manifest = read_manifest(args.manifest)
            worst_n = cfg.eval.worst_n if args.worst_n is None else args.worst_n
            out = ensure_dir(args.out)
            write_run_config(cfg, out)
            if args.checkpoint:
                cmd_eval(None, manifest, out, worst_n, cfg.eval.split, checkpoint=load_checkpoint(args.checkpoint))
            else:
                cmd_eval(bicubic_predict, manifest, out, worst_n, cfg.eval.split)
        elif args.command == "ablate":
            cmd_ablate(args.suite, cfg, args.manifest, args.out)
    except UsageError as exc:
        print(f"cmfnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingFailure as exc:
        print(f"cmfnet: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (DataError, ConfigMismatch, CorruptCheckpoint, FileNotFoundError) as exc:
        print(f"cmfnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
