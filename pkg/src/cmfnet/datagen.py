"""Synthetic scenes, Wald-protocol degradation, simulated PAN and dataset assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (
    MS_BANDS,
    SCENES,
    BadShape,
    DataError,
    Manifest,
    ManifestEntry,
    RasterTile,
    SamplePair,
    SplitSpec,
    ensure_dir,
    make_splits,
    native_ratio,
    save_tile,
    validate_pair,
    write_manifest,
)


class SizeNotDivisible(BadShape):
    pass


class BadWeights(DataError):
    pass


class TileTooLarge(BadShape):
    pass


# Per-kind band (offset, gain) pairs for R, G, B, NIR and the default texture
# frequency band in cycles/pixel. offset + gain <= 1 keeps values in range.
_KIND_STYLE = {
    "water": (((0.20, 0.15), (0.30, 0.15), (0.40, 0.15), (0.05, 0.05)), (0.01, 0.06)),
    "urban": (((0.20, 0.60), (0.20, 0.60), (0.20, 0.60), (0.15, 0.65)), (0.05, 0.35)),
    "ice_snow": (((0.70, 0.25), (0.70, 0.25), (0.72, 0.25), (0.55, 0.30)), (0.01, 0.08)),
    "crops": (((0.30, 0.30), (0.35, 0.35), (0.20, 0.25), (0.50, 0.40)), (0.03, 0.20)),
    "vegetation": (((0.10, 0.20), (0.25, 0.25), (0.10, 0.15), (0.60, 0.35)), (0.04, 0.25)),
    "barren": (((0.45, 0.30), (0.40, 0.25), (0.30, 0.25), (0.45, 0.30)), (0.02, 0.12)),
}
# Fraction of each band's texture shared with the others. The band-specific
# remainder is band-limited below SPECTRAL_MAX_FREQ, so it survives Wald
# degradation in MS but cannot be recovered from PAN alone.
_SHARED = 0.6
SPECTRAL_MAX_FREQ = 0.06


@dataclass(frozen=True)
class SceneRecipe:
    kind: str
    size: tuple[int, int] = (64, 64)
    seed: int = 0
    freq_band: tuple[float, float] | None = None
    contrast: tuple[float, float] = (0.0, 1.0)
    satellite: str = "GF2"

    def __post_init__(self):
        if self.kind not in SCENES:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        h, w = self.size
        if h % 4 or w % 4 or h < 8 or w < 8:
            raise ValueError(f"scene size {self.size} must be >= 8 and divisible by 4")
        lo, hi = self.contrast
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"contrast range {self.contrast} not inside [0, 1]")


@dataclass(frozen=True)
class DegradationSpec:
    ratio: int = 4
    blur_sigma: float | None = None
    kernel_radius: int | None = None

    def __post_init__(self):
        if self.ratio not in (2, 4):
            raise ValueError(f"ratio must be 2 or 4, got {self.ratio}")
        if self.blur_sigma is None:
            object.__setattr__(self, "blur_sigma", self.ratio / 2)
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if self.kernel_radius is None:
            object.__setattr__(self, "kernel_radius", math.ceil(3 * self.blur_sigma))


def _bandlimited_noise(rng, shape, f_lo, f_hi):
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    f = np.hypot(fy, fx)
    mask = ((f >= f_lo) & (f <= f_hi)).astype(float)
    spec = np.fft.fft2(rng.standard_normal(shape)) * mask
    field_ = np.fft.ifft2(spec).real
    return field_


def _unit(x):
    span = x.max() - x.min()
    return (x - x.min()) / span if span > 0 else np.zeros_like(x)


def generate_scene(recipe: SceneRecipe) -> RasterTile:
    """Deterministic 4-band ground-truth tile whose statistics depend on the scene kind."""
    rng = np.random.default_rng(recipe.seed)
    style, default_band = _KIND_STYLE[recipe.kind]
    f_lo, f_hi = recipe.freq_band or default_band
    shape = recipe.size
    shared = _bandlimited_noise(rng, shape, f_lo, f_hi)
    if recipe.kind == "urban":
        # piecewise-constant blocks on top of the noise, like building footprints
        cells = rng.random((shape[0] // 8 + 1, shape[1] // 8 + 1))
        blocks = np.kron(cells, np.ones((8, 8)))[: shape[0], : shape[1]]
        shared = _unit(shared) + blocks
    elif recipe.kind == "crops":
        yy, xx = np.mgrid[: shape[0], : shape[1]]
        theta = rng.uniform(0, np.pi)
        period = rng.uniform(6, 12)
        stripes = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period)
        shared = _unit(shared) + 0.5 * stripes
    shared = _unit(shared)
    lo, hi = recipe.contrast
    bands = []
    for offset, gain in style:
        own = _unit(_bandlimited_noise(rng, shape, min(f_lo, 0.01), min(f_hi, SPECTRAL_MAX_FREQ)))
        t = _unit(_SHARED * shared + (1 - _SHARED) * own)
        bands.append(lo + (hi - lo) * (offset + gain * t))
    return RasterTile(np.clip(np.stack(bands), 0.0, 1.0), 16, MS_BANDS)


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def wald_degrade(gt: RasterTile, spec: DegradationSpec = DegradationSpec()) -> RasterTile:
    """Separable Gaussian blur (reflective borders) then top-left decimation by the ratio."""
    r = spec.ratio
    if gt.height % r or gt.width % r:
        raise SizeNotDivisible(f"{gt.height}x{gt.width} not divisible by ratio {r}")
    k = gaussian_kernel(spec.blur_sigma, spec.kernel_radius)
    blurred = ndimage.correlate1d(gt.data, k, axis=1, mode="reflect")
    blurred = ndimage.correlate1d(blurred, k, axis=2, mode="reflect")
    low = np.clip(blurred[:, ::r, ::r], 0.0, 1.0)
    return RasterTile(low, gt.bit_depth, gt.band_names)


def synth_pan(gt: RasterTile, weights: Sequence[float] = (0.25, 0.25, 0.25, 0.25)) -> RasterTile:
    """Convex band mixture standing in for a PAN sensor's spectral response."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (gt.bands,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise BadWeights(f"weights must be {gt.bands} nonnegative values summing to 1, got {weights}")
    pan = np.tensordot(w, gt.data, axes=1)[None]
    return RasterTile(np.clip(pan, 0.0, 1.0), gt.bit_depth, ("PAN",))


def tile_raster(large: RasterTile, tile_size: int, stride: int) -> list[RasterTile]:
    """Row-major tiles; tiles overrunning the border are dropped."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if tile_size > large.height or tile_size > large.width:
        raise TileTooLarge(f"tile {tile_size} larger than image {large.height}x{large.width}")
    tiles = []
    for y in range(0, large.height - tile_size + 1, stride):
        for x in range(0, large.width - tile_size + 1, stride):
            crop = large.data[:, y : y + tile_size, x : x + tile_size]
            tiles.append(RasterTile(crop.copy(), large.bit_depth, large.band_names))
    return tiles


def make_pair(recipe: SceneRecipe, spec: DegradationSpec | None = None,
              pan_weights: Sequence[float] = (0.25, 0.25, 0.25, 0.25)) -> SamplePair:
    ratio = native_ratio(recipe.satellite)
    if spec is None or spec.ratio != ratio:
        spec = DegradationSpec(ratio)
    gt = generate_scene(recipe)
    return SamplePair(wald_degrade(gt, spec), synth_pan(gt, pan_weights), gt,
                      ratio, recipe.satellite, recipe.kind)


def default_recipes(n_per_scene: int = 10, size: tuple[int, int] = (64, 64), seed: int = 0,
                    satellites: Sequence[str] = ("GF2",)) -> list[SceneRecipe]:
    """``n_per_scene`` recipes for each scene kind, satellites assigned round-robin."""
    recipes = []
    for k, kind in enumerate(SCENES):
        for i in range(n_per_scene):
            sat = satellites[(k * n_per_scene + i) % len(satellites)]
            recipes.append(SceneRecipe(kind, tuple(size), seed * 100003 + k * 1009 + i, satellite=sat))
    return recipes


def build_dataset(recipes: Sequence[SceneRecipe], spec: DegradationSpec | None, split: SplitSpec,
                  out_dir, pan_weights: Sequence[float] = (0.25, 0.25, 0.25, 0.25)) -> Manifest:
    """Generate, degrade and write every recipe, then split and write ``manifest.jsonl``."""
    out = ensure_dir(out_dir)
    tiles = ensure_dir(out / "tiles")
    entries = []
    for i, recipe in enumerate(recipes):
        pair = make_pair(recipe, spec, pan_weights)
        check = validate_pair(pair)
        if not check.valid:
            raise DataError(f"recipe {i} produced an invalid pair: {check.violations}")
        sid = f"{i:05d}_{recipe.satellite}_{recipe.kind}"
        paths = {}
        for name in ("ms", "pan", "gt"):
            rel = f"tiles/{sid}_{name}.npz"
            save_tile(getattr(pair, name), tiles.parent / rel)
            paths[f"{name}_path"] = rel
        entries.append(ManifestEntry(sid, satellite=recipe.satellite, scene=recipe.kind,
                                     native_ratio=pair.ratio, **paths))
    manifest = make_splits(entries, split)
    manifest.root = out
    write_manifest(manifest, out / "manifest.jsonl")
    return manifest
