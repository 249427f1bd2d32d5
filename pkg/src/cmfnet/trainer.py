"""Training loop (MSE, Adam, plateau schedule), checkpoints, resumption and ablations."""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .baselines import PNN, PnnConfig
from .core import CmfnetError, DataError, Manifest, ManifestEntry, harmonize_ratio, load_pair
from .metrics import Evaluation, MetricReport, aggregate, evaluate, format_table
from .model import CMFNet, ModelConfig

CHECKPOINT_FORMAT = "cmfnet-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingFailure(CmfnetError):
    pass


class EmptySplit(DataError):
    pass


class Divergence(TrainingFailure):
    pass


class ConfigMismatch(CmfnetError):
    pass


class CorruptCheckpoint(CmfnetError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 0.002
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    max_epochs: int = 200
    max_steps: int | None = None
    seed: int = 0
    monitor: str = "val_psnr"
    grad_clip: float | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.monitor not in ("val_psnr", "val_loss"):
            raise ValueError(f"unknown monitor {self.monitor!r}")


# --------------------------------------------------------------------------
# data


@dataclass
class TensorSet:
    """Stacked ratio-4 model inputs and targets for one split."""

    entries: list[ManifestEntry]
    ms: torch.Tensor
    pan: torch.Tensor
    gt: torch.Tensor

    def __len__(self) -> int:
        return len(self.entries)

    def to(self, dtype: torch.dtype) -> "TensorSet":
        return TensorSet(self.entries, self.ms.to(dtype), self.pan.to(dtype), self.gt.to(dtype))


def pairs_to_tensors(entries: Sequence[ManifestEntry], pairs) -> TensorSet:
    pairs = [harmonize_ratio(p) for p in pairs]
    if not pairs:
        raise EmptySplit("no samples")
    stack = lambda name: torch.from_numpy(np.stack([getattr(p, name).data for p in pairs])).float()
    return TensorSet(list(entries), stack("ms"), stack("pan"), stack("gt"))


def load_split(manifest: Manifest, split: str) -> TensorSet:
    entries = manifest.split(split)
    if not entries:
        raise EmptySplit(f"split {split!r} is empty")
    return pairs_to_tensors(entries, [load_pair(manifest, e) for e in entries])


# --------------------------------------------------------------------------
# model construction and checkpoints


def config_from_dict(d: dict):
    kind = d.get("kind", "cmfnet")
    body = {k: v for k, v in d.items() if k != "kind"}
    if kind == "cmfnet":
        return ModelConfig(**body)
    if kind == "pnn":
        return PnnConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in body.items()})
    raise ConfigMismatch(f"unknown model kind {kind!r}")


def config_to_dict(config) -> dict:
    kind = "pnn" if isinstance(config, PnnConfig) else "cmfnet"
    return {"kind": kind, **asdict(config)}


def build_model(config, seed: int = 0) -> torch.nn.Module:
    if isinstance(config, PnnConfig):
        torch.manual_seed(seed)
        return PNN(config)
    return CMFNet(config, seed=seed)


class PlateauSchedule:
    """Multiply the lr by ``factor`` once ``patience`` epochs pass without improvement."""

    def __init__(self, lr: float, factor: float = 0.1, patience: int = 10, mode: str = "max"):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.mode = mode
        self.best = -math.inf if mode == "max" else math.inf
        self.bad_epochs = 0

    def improved(self, value: float) -> bool:
        return value > self.best if self.mode == "max" else value < self.best

    def step(self, value: float) -> bool:
        """Record one epoch's monitor value; returns True when the lr was reduced."""
        if self.improved(value):
            self.best = value
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0
            return True
        return False

    def state_dict(self) -> dict:
        return dict(lr=self.lr, factor=self.factor, patience=self.patience, mode=self.mode,
                    best=self.best, bad_epochs=self.bad_epochs)

    def load_state_dict(self, state: dict) -> None:
        self.__dict__.update(state)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_psnr: float
    val_mse_scaled: float
    lr: float
    steps: int
    step_losses: list[float] = field(default_factory=list)
    wall: float = 0.0


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    @property
    def step_losses(self) -> list[float]:
        return [x for r in self.records for x in r.step_losses]

    @property
    def lrs(self) -> list[float]:
        return [r.lr for r in self.records]

    def to_jsonl(self, with_wall: bool = True) -> str:
        lines = []
        for r in self.records:
            d = asdict(r)
            if not with_wall:
                d.pop("wall")
            lines.append(json.dumps(d, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_records(cls, recs: list[dict]) -> "TrainLog":
        return cls([EpochRecord(**r) for r in recs])


@dataclass
class Checkpoint:
    model_config: object
    train_config: TrainConfig
    state: dict
    best_state: dict
    optimizer: dict
    schedule: dict
    epoch: int
    step: int
    best_monitor: float
    log: TrainLog
    rng_state: torch.Tensor

    def model(self, best: bool = True, dtype: torch.dtype = torch.float32) -> torch.nn.Module:
        m = build_model(self.model_config, seed=self.train_config.seed).to(dtype)
        m.load_state_dict(self.best_state if best else self.state)
        return m.eval()

    def to_payload(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model_config": config_to_dict(self.model_config),
            "train_config": asdict(self.train_config),
            "state": self.state,
            "best_state": self.best_state,
            "optimizer": self.optimizer,
            "schedule": self.schedule,
            "counters": {"epoch": self.epoch, "step": self.step, "best_monitor": self.best_monitor},
            "log": [asdict(r) for r in self.log.records],
            "rng_state": self.rng_state,
        }


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    buf = io.BytesIO()
    torch.save(ckpt.to_payload(), buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises several unrelated types on bad bytes
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{path} is not a {CHECKPOINT_FORMAT} file")
    try:
        c = payload["counters"]
        return Checkpoint(
            model_config=config_from_dict(payload["model_config"]),
            train_config=TrainConfig(**payload["train_config"]),
            state=payload["state"], best_state=payload["best_state"],
            optimizer=payload["optimizer"], schedule=payload["schedule"],
            epoch=int(c["epoch"]), step=int(c["step"]), best_monitor=float(c["best_monitor"]),
            log=TrainLog.from_records(payload["log"]), rng_state=payload["rng_state"],
        )
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: missing or malformed field {exc}") from exc


# --------------------------------------------------------------------------
# training


def _dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


@torch.no_grad()
def predict(model: torch.nn.Module, data: TensorSet, batch_size: int = 16) -> torch.Tensor:
    was_training = model.training
    model.eval()
    outs = [model(data.ms[i : i + batch_size], data.pan[i : i + batch_size])
            for i in range(0, len(data), batch_size)]
    model.train(was_training)
    return torch.cat(outs)


def _fast_val(model, data: TensorSet, batch_size: int) -> tuple[float, float]:
    """Mean per-sample PSNR (capped) and MSE x 1e4 of clamped predictions."""
    y = predict(model, data, batch_size).clamp(0, 1).double()
    per = ((y - data.gt.double()) ** 2).mean(dim=(1, 2, 3))
    psnr = torch.where(per < 1e-10, torch.full_like(per, 100.0), -10 * torch.log10(per.clamp_min(1e-30)))
    return float(psnr.mean()), float(per.mean() * 1e4)


def _epoch_order(seed: int, epoch: int, n: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
    return torch.randperm(n, generator=gen)


def _run(model_config, cfg: TrainConfig, train_set: TensorSet, val_set: TensorSet,
         ckpt: Checkpoint | None = None, until_epoch: int | None = None,
         on_epoch=None) -> Checkpoint:
    dtype = _dtype(cfg.dtype)
    train_set, val_set = train_set.to(dtype), val_set.to(dtype)
    model = build_model(model_config, seed=cfg.seed).to(dtype)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauSchedule(cfg.lr, cfg.plateau_factor, cfg.plateau_patience,
                            "max" if cfg.monitor == "val_psnr" else "min")
    log, epoch, step = TrainLog(), 0, 0
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    torch.manual_seed(cfg.seed)
    if ckpt is not None:
        model.load_state_dict(ckpt.state)
        opt.load_state_dict(ckpt.optimizer)
        sched.load_state_dict(ckpt.schedule)
        log = TrainLog(list(ckpt.log.records))
        epoch, step, best_state = ckpt.epoch, ckpt.step, ckpt.best_state
        torch.set_rng_state(ckpt.rng_state)
    last_epoch = min(cfg.max_epochs, until_epoch or cfg.max_epochs)
    model.train()
    while epoch < last_epoch and (cfg.max_steps is None or step < cfg.max_steps):
        epoch += 1
        t0 = time.perf_counter()
        for g in opt.param_groups:
            g["lr"] = sched.lr
        lr_used = sched.lr
        order = _epoch_order(cfg.seed, epoch, len(train_set))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            idx = order[i : i + cfg.batch_size]
            opt.zero_grad(set_to_none=True)
            y = model(train_set.ms[idx], train_set.pan[idx])
            loss = F.mse_loss(y, train_set.gt[idx])
            if not torch.isfinite(loss):
                raise Divergence(f"non-finite loss at epoch {epoch}, step {step + 1}")
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            step += 1
            losses.append(float(loss.detach()))
        val_psnr, val_mse = _fast_val(model, val_set, cfg.batch_size)
        monitor = val_psnr if cfg.monitor == "val_psnr" else val_mse
        if on_epoch is not None:
            monitor = on_epoch(epoch, monitor)
        if sched.improved(monitor):
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        sched.step(monitor)
        log.records.append(EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"),
                                       val_psnr, val_mse, lr_used, step, losses,
                                       time.perf_counter() - t0))
    return Checkpoint(
        model_config=model_config, train_config=cfg,
        state={k: v.detach().clone() for k, v in model.state_dict().items()},
        best_state=best_state, optimizer=opt.state_dict(), schedule=sched.state_dict(),
        epoch=epoch, step=step, best_monitor=sched.best, log=log, rng_state=torch.get_rng_state(),
    )


def _splits(manifest_or_data):
    if isinstance(manifest_or_data, Manifest):
        return load_split(manifest_or_data, "train"), load_split(manifest_or_data, "val")
    train_set, val_set = manifest_or_data
    if not len(train_set) or not len(val_set):
        raise EmptySplit("train and val splits must be nonempty")
    return train_set, val_set


def train(model_config, train_config: TrainConfig, manifest, *, until_epoch: int | None = None,
          on_epoch=None) -> tuple[Checkpoint, TrainLog]:
    """Train from scratch on the manifest's train split, monitoring the val split.

    ``manifest`` may also be a ``(train_set, val_set)`` pair of preloaded
    :class:`TensorSet`. ``on_epoch(epoch, monitor) -> monitor`` may rewrite the
    monitored value (used to drive the schedule in tests).
    """
    train_set, val_set = _splits(manifest)
    ckpt = _run(model_config, train_config, train_set, val_set, until_epoch=until_epoch,
                on_epoch=on_epoch)
    return ckpt, ckpt.log


def resume(checkpoint, manifest, model_config=None, *, train_config: TrainConfig | None = None,
           until_epoch: int | None = None) -> tuple[Checkpoint, TrainLog]:
    """Continue a run from a checkpoint (object or path) exactly where it stopped."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if model_config is not None and config_to_dict(model_config) != config_to_dict(checkpoint.model_config):
        raise ConfigMismatch(f"checkpoint config {checkpoint.model_config} != {model_config}")
    cfg = train_config or checkpoint.train_config
    frozen = ("seed", "batch_size", "dtype", "monitor")
    if any(getattr(cfg, k) != getattr(checkpoint.train_config, k) for k in frozen):
        raise ConfigMismatch(f"cannot change {frozen} when resuming")
    train_set, val_set = _splits(manifest)
    ckpt = _run(checkpoint.model_config, cfg, train_set, val_set, ckpt=checkpoint,
                until_epoch=until_epoch)
    return ckpt, ckpt.log


def evaluate_model(model: torch.nn.Module, data: TensorSet, manifest: Manifest | None = None,
                   split: str | None = "test", keep_mae: bool = False) -> Evaluation:
    dtype = next(model.parameters()).dtype
    data = data.to(dtype)
    y = predict(model, data).double().numpy()
    gt = data.gt.double().numpy()
    triples = ((e, y[i], gt[i]) for i, e in enumerate(data.entries))
    return evaluate(triples, manifest, keep_mae=keep_mae, split=split)


# --------------------------------------------------------------------------
# ablations

ABLATION_SUITES = ("cascade", "injection", "scalability")


def ablation_arms(suite: str, base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    if suite == "cascade":
        return [(str(n), replace(base, cascade_levels=n)) for n in (1, 2, 3)]
    if suite == "injection":
        return [("✗", replace(base, injection=False)), ("✓", replace(base, injection=True))]
    if suite == "scalability":
        return [("SR (w/o PAN)", replace(base, mode="sr_no_pan")),
                ("CO (w/o MS)", replace(base, mode="colorize_no_ms")),
                ("PS (MS+PAN)", replace(base, mode="pansharpen"))]
    raise ValueError(f"unknown ablation suite {suite!r}; expected one of {ABLATION_SUITES}")


@dataclass
class AblationTable:
    suite: str
    rows: dict[str, MetricReport]
    per_seed_psnr: dict[str, list[float]]

    def mean_psnr(self, label: str) -> float:
        return self.rows[label].psnr

    def format(self) -> str:
        title = {"cascade": "Cascade", "injection": "Injection", "scalability": "Task"}[self.suite]
        return format_table(self.rows, label=title)


def run_ablation(suite: str, base: ModelConfig, train_config: TrainConfig, manifest,
                 seeds: Sequence[int] = (0, 1, 2), cache: dict | None = None) -> AblationTable:
    """Train every arm of ``suite`` for each seed; rows are seed-means of val-split metrics.

    ``cache`` (keyed by config and seed) lets suites sharing an arm train it once.
    """
    train_set, val_set = _splits(manifest)
    cache = {} if cache is None else cache
    rows, per_seed = {}, {}
    for label, cfg in ablation_arms(suite, base):
        reports = []
        for seed in seeds:
            tc = replace(train_config, seed=seed)
            key = (json.dumps(config_to_dict(cfg), sort_keys=True), json.dumps(asdict(tc), sort_keys=True))
            if key not in cache:
                ckpt, _ = train(cfg, tc, (train_set, val_set))
                model = ckpt.model(best=True, dtype=_dtype(tc.dtype))
                cache[key] = evaluate_model(model, val_set, split=None).rows["overall"]
            reports.append(cache[key])
        rows[label] = aggregate(reports)
        per_seed[label] = [r.psnr for r in reports]
    return AblationTable(suite, rows, per_seed)
