"""Domain types, tile/manifest I/O, normalization and pair validation."""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SATELLITES = ("GF1", "GF2", "GF6", "LC7", "LC8", "WV2", "WV3", "WV4", "QB", "IN")
SCENES = ("water", "urban", "ice_snow", "crops", "vegetation", "barren")
SPLITS = ("train", "val", "test")
RATIO2_SATELLITES = ("LC7", "LC8")
MS_BANDS = ("R", "G", "B", "NIR")
SCHEMA_VERSION = 1


class CmfnetError(Exception):
    """Base class for every error raised by this package."""


class DataError(CmfnetError):
    """Bad input data (values, shapes, files)."""


class NegativeValue(DataError):
    pass


class DepthOverflow(DataError):
    pass


class BadShape(DataError):
    pass


class StratumTooSmall(DataError):
    pass


class IoFailure(DataError):
    pass


def native_ratio(satellite: str) -> int:
    return 2 if satellite in RATIO2_SATELLITES else 4


def default_band_names(n: int) -> tuple[str, ...]:
    if n == 4:
        return MS_BANDS
    if n == 1:
        return ("PAN",)
    return tuple(f"B{i}" for i in range(n))


@dataclass(frozen=True)
class RasterTile:
    """A bands x height x width tile with values normalized to [0, 1]."""

    data: np.ndarray
    bit_depth: int = 16
    band_names: tuple[str, ...] | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise BadShape(f"tile must be bands x H x W, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        names = self.band_names or default_band_names(data.shape[0])
        object.__setattr__(self, "band_names", tuple(names))
        if len(self.band_names) != data.shape[0]:
            raise BadShape(
                f"{len(self.band_names)} band names for {data.shape[0]} bands"
            )

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def problems(self) -> list[str]:
        """Invariant violations of this tile alone (empty when valid)."""
        out = []
        if not np.all(np.isfinite(self.data)):
            out.append("NonFinite")
        elif self.data.min() < 0.0 or self.data.max() > 1.0:
            out.append("OutOfUnitRange")
        if self.height < 8 or self.width < 8:
            out.append("TooSmall")
        if self.height % 4 or self.width % 4:
            out.append("NotDivisibleBy4")
        return out


def normalize(raw, bit_depth: int, band_names: Sequence[str] | None = None) -> RasterTile:
    """Scale an integer tensor of the given bit depth to [0, 1]."""
    raw = np.asarray(raw)
    if raw.ndim == 2:
        raw = raw[None]
    if raw.size and raw.min() < 0:
        raise NegativeValue(f"raw minimum {raw.min()} is negative")
    full = 2**bit_depth - 1
    if raw.size and raw.max() > full:
        raise DepthOverflow(f"raw maximum {raw.max()} exceeds {full} for {bit_depth}-bit data")
    data = np.clip(raw.astype(np.float64) / full, 0.0, 1.0)
    return RasterTile(data, bit_depth, band_names)


def denormalize(tile: RasterTile) -> np.ndarray:
    """Inverse of :func:`normalize`: integer tensor at the tile's bit depth."""
    full = 2**tile.bit_depth - 1
    dtype = np.uint8 if tile.bit_depth <= 8 else np.uint16 if tile.bit_depth <= 16 else np.uint32
    return np.rint(tile.data * full).astype(dtype)


@dataclass(frozen=True)
class SamplePair:
    ms: RasterTile
    pan: RasterTile
    gt: RasterTile
    ratio: int
    satellite: str = "GF2"
    scene: str = "urban"


@dataclass
class ValidationResult:
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def validate_pair(pair: SamplePair) -> ValidationResult:
    """Check every SamplePair invariant; violations are collected, never raised."""
    v = []
    for name in ("ms", "pan", "gt"):
        v.extend(f"{name}:{p}" for p in getattr(pair, name).problems())
    if pair.ratio not in (2, 4):
        v.append("BadRatio")
    if pair.pan.bands != 1:
        v.append("PanNotSingleBand")
    if (pair.pan.height, pair.pan.width) != (pair.ratio * pair.ms.height, pair.ratio * pair.ms.width):
        v.append("RatioMismatch")
    if (pair.gt.height, pair.gt.width) != (pair.pan.height, pair.pan.width):
        v.append("GtSizeMismatch")
    if pair.gt.bands != pair.ms.bands:
        v.append("GtBandMismatch")
    if pair.satellite not in SATELLITES:
        v.append("UnknownSatellite")
    elif pair.ratio in (2, 4) and pair.ratio != native_ratio(pair.satellite):
        v.append("RatioSatelliteMismatch")
    if pair.scene not in SCENES:
        v.append("UnknownScene")
    return ValidationResult(v)


# --------------------------------------------------------------------------
# Manifest and splits


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    stratify_by: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.fractions) != 3 or min(self.fractions) <= 0:
            raise ValueError("fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions sum to {sum(self.fractions)}, not 1")
        bad = set(self.stratify_by) - {"satellite", "scene"}
        if bad:
            raise ValueError(f"cannot stratify by {sorted(bad)}")


@dataclass
class ManifestEntry:
    sample_id: str
    ms_path: str
    pan_path: str
    gt_path: str
    satellite: str
    scene: str
    split: str = ""
    native_ratio: int = 4


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    schema_version: int = SCHEMA_VERSION
    root: Path | None = None

    def __post_init__(self):
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample_id in manifest")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self, key: str) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for e in self.entries:
            out[getattr(e, key)] += 1
        return dict(sorted(out.items()))

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def records(self) -> list[dict]:
        return [{"schema_version": self.schema_version, **asdict(e)} for e in self.entries]


def _split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    # Largest-remainder rounding so sizes sum to n and each is within 1 of n*f.
    exact = [n * f for f in fractions]
    sizes = [int(np.floor(x)) for x in exact]
    order = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return tuple(sizes)


def make_splits(entries: Iterable[ManifestEntry], spec: SplitSpec) -> Manifest:
    """Assign train/val/test deterministically; stratified when requested."""
    entries = [ManifestEntry(**{**asdict(e)}) for e in entries]
    strata: dict[tuple, list[int]] = defaultdict(list)
    for i, e in enumerate(entries):
        strata[tuple(getattr(e, k) for k in spec.stratify_by)].append(i)
    rng = np.random.default_rng(spec.seed)
    for key in sorted(strata):
        idx = strata[key]
        if spec.stratify_by and len(idx) < 10:
            raise StratumTooSmall(f"stratum {key} has {len(idx)} entries (< 10)")
        perm = rng.permutation(len(idx))
        n_train, n_val, _ = _split_sizes(len(idx), spec.fractions)
        for rank, j in enumerate(perm):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            entries[idx[j]].split = split
    return Manifest(entries)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"manifest not found: {path}")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            version = rec.pop("schema_version", None)
            if version is None:
                raise DataError(f"{path}:{lineno}: missing schema_version")
            if version != SCHEMA_VERSION:
                raise DataError(f"{path}:{lineno}: unsupported schema_version {version}")
            entries.append(ManifestEntry(**rec))
    return Manifest(entries, root=path.parent)


# --------------------------------------------------------------------------
# Tile files


def save_tile(tile: RasterTile, path) -> None:
    """Write a tile as .npz holding the integer tensor, bit depth and band names."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez_compressed(
                fh,
                data=denormalize(tile),
                bit_depth=np.int64(tile.bit_depth),
                band_names=np.array(tile.band_names),
            )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_tile(path) -> RasterTile:
    """Read a tile from .npz, or an 8/16-bit PNG inspection export."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".png":
            from PIL import Image

            with Image.open(path) as im:
                arr = np.array(im)
            depth = 16 if arr.dtype == np.uint16 or arr.dtype == np.int32 else 8
            arr = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
            names = ("PAN",) if arr.shape[0] == 1 else ("R", "G", "B", "A")[: arr.shape[0]]
            return normalize(arr, depth, names)
        with np.load(path, allow_pickle=False) as z:
            return normalize(z["data"], int(z["bit_depth"]), [str(b) for b in z["band_names"]])
    except (OSError, KeyError, ValueError) as exc:
        raise IoFailure(f"cannot read tile {path}: {exc}") from exc


def load_pair(manifest: Manifest, entry: ManifestEntry) -> SamplePair:
    ms = load_tile(manifest.resolve(entry.ms_path))
    pan = load_tile(manifest.resolve(entry.pan_path))
    gt = load_tile(manifest.resolve(entry.gt_path))
    ratio = pan.height // max(ms.height, 1)
    return SamplePair(ms, pan, gt, ratio, entry.satellite, entry.scene)


def harmonize_ratio(pair: SamplePair) -> SamplePair:
    """Resample ratio-2 MS onto the ratio-4 grid (bicubic) so one network serves all pairs.

    The returned pair intentionally carries ratio 4 and is a model input, not a
    stored record; it does not pass :func:`validate_pair` for LC7/LC8 tags.
    """
    if pair.ratio == 4:
        return pair
    if pair.ratio != 2:
        raise BadShape(f"unsupported ratio {pair.ratio}")
    from .baselines import bicubic_resize

    h, w = pair.pan.height // 4, pair.pan.width // 4
    ms = np.clip(bicubic_resize(pair.ms.data, (h, w)), 0.0, 1.0)
    return SamplePair(
        RasterTile(ms, pair.ms.bit_depth, pair.ms.band_names),
        pair.pan, pair.gt, 4, pair.satellite, pair.scene,
    )


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise IoFailure(f"directory not writable: {path}")
    return path
