"""Full-reference quality metrics (PSNR, SSIM, SAM, ERGAS, SCC, MSE) and MAE maps.

All metrics take ``bands x H x W`` arrays on the unit range. SAM is in radians.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .core import BadShape, CmfnetError, DataError, Manifest, ManifestEntry

PSNR_CAP = 100.0
METRIC_NAMES = ("psnr", "ssim", "sam", "ergas", "scc", "mse_scaled")
COLUMN_TITLES = ("PSNR", "SSIM", "SAM(rad)", "ERGAS", "SCC", "MSE(x1e-4)")
LAPLACIAN = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])
MAE_RAMP_MAX = 0.2


class ShapeMismatch(BadShape):
    pass


class TooSmall(BadShape):
    pass


class AllBandsDegenerate(DataError):
    pass


class EmptyStratum(CmfnetError):
    pass


def _pair(y, gt):
    y = np.asarray(y, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if y.shape != gt.shape:
        raise ShapeMismatch(f"shapes differ: {y.shape} vs {gt.shape}")
    if y.ndim == 2:
        y, gt = y[None], gt[None]
    if y.ndim != 3:
        raise ShapeMismatch(f"expected bands x H x W, got {y.shape}")
    return y, gt


def mse(y, gt) -> float:
    y, gt = _pair(y, gt)
    return float(np.mean((y - gt) ** 2))


def mse_scaled(y, gt) -> float:
    """MSE multiplied by 1e4 (the usual "x1e-4" reporting unit)."""
    return mse(y, gt) * 1e4


def psnr(y, gt) -> float:
    err = mse(y, gt)
    if err < 1e-10:
        return PSNR_CAP
    return -10.0 * math.log10(err)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(y, gt, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM per band, averaged over bands.

    Local statistics use a Gaussian window evaluated at every pixel with
    symmetric (reflective) padding, so tiles smaller than the window still work.
    """
    y, gt = _pair(y, gt)
    half = window // 2
    if min(y.shape[1:]) <= half:
        raise TooSmall(f"spatial size {y.shape[1:]} too small for a {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for a, b in zip(y, gt):
        pa = sliding_window_view(np.pad(a, half, mode="symmetric"), (window, window))
        pb = sliding_window_view(np.pad(b, half, mode="symmetric"), (window, window))
        mu_a = np.einsum("ijkl,kl->ij", pa, w)
        mu_b = np.einsum("ijkl,kl->ij", pb, w)
        var_a = np.einsum("ijkl,kl->ij", pa * pa, w) - mu_a**2
        var_b = np.einsum("ijkl,kl->ij", pb * pb, w) - mu_b**2
        cov = np.einsum("ijkl,kl->ij", pa * pb, w) - mu_a * mu_b
        s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def sam(y, gt, eps: float = 1e-8) -> float:
    """Mean spectral angle in radians.

    Uses the half-angle form 2*atan2(|u-v|, |u+v|) on unit vectors, which is
    exact for parallel spectra. Pixels where both spectra are zero count 0;
    a zero spectrum against a nonzero one counts pi/2.
    """
    y, gt = _pair(y, gt)
    if y.shape[0] < 2:
        raise ShapeMismatch("SAM needs at least two bands")
    ny = np.linalg.norm(y, axis=0)
    ng = np.linalg.norm(gt, axis=0)
    u = y / np.maximum(ny, eps)
    v = gt / np.maximum(ng, eps)
    ang = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=0), np.linalg.norm(u + v, axis=0))
    zy, zg = ny < eps, ng < eps
    ang = np.where(zy & zg, 0.0, np.where(zy | zg, np.pi / 2, ang))
    return float(ang.mean())


def ergas_details(y, gt, ratio: int = 4) -> tuple[float, list[int]]:
    """ERGAS value and the indices of bands excluded for a near-zero reference mean."""
    y, gt = _pair(y, gt)
    if ratio not in (2, 4):
        raise ValueError(f"ratio must be 2 or 4, got {ratio}")
    mu = gt.mean(axis=(1, 2))
    rmse = np.sqrt(np.mean((y - gt) ** 2, axis=(1, 2)))
    keep = mu >= 1e-8
    if not keep.any():
        raise AllBandsDegenerate("every reference band has mean < 1e-8")
    val = 100.0 / ratio * math.sqrt(np.mean((rmse[keep] / mu[keep]) ** 2))
    return val, [int(b) for b in np.flatnonzero(~keep)]


def ergas(y, gt, ratio: int = 4) -> float:
    return ergas_details(y, gt, ratio)[0]


def highpass(band: np.ndarray, kernel: np.ndarray = LAPLACIAN) -> np.ndarray:
    return ndimage.correlate(band, kernel, mode="reflect")


def scc(y, gt, kernel: np.ndarray = LAPLACIAN) -> float:
    """Mean per-band Pearson correlation of high-pass filtered bands."""
    y, gt = _pair(y, gt)
    vals = []
    for a, b in zip(y, gt):
        fa = highpass(a, kernel).ravel()
        fb = highpass(b, kernel).ravel()
        fa = fa - fa.mean()
        fb = fb - fb.mean()
        den = math.sqrt(float(fa @ fa) * float(fb @ fb))
        vals.append(float(fa @ fb) / den if den > 1e-30 else 0.0)
    return float(np.mean(vals))


def mae_map(y, gt) -> np.ndarray:
    """Per-pixel mean absolute error across bands, shape H x W."""
    y, gt = _pair(y, gt)
    return np.mean(np.abs(y - gt), axis=0)


def mae_to_rgb(mae: np.ndarray, vmax: float = MAE_RAMP_MAX) -> np.ndarray:
    """False colour: blue at 0 through to red at ``vmax`` (and above)."""
    t = np.clip(np.asarray(mae) / vmax, 0.0, 1.0)
    rgb = np.stack([t, np.zeros_like(t), 1.0 - t], axis=-1)
    return np.rint(rgb * 255).astype(np.uint8)


def save_mae_png(mae: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(mae_to_rgb(mae), mode="RGB").save(path)


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    sam: float
    ergas: float
    scc: float
    mse_scaled: float
    n_samples: int = 1

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in METRIC_NAMES)


def compute_all(y, gt, ratio: int = 4) -> MetricReport:
    """All six metrics on a clamped prediction."""
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
    return MetricReport(psnr(y, gt), ssim(y, gt), sam(y, gt), ergas(y, gt, ratio), scc(y, gt),
                        mse_scaled(y, gt))


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Unweighted mean of per-sample reports."""
    if not reports:
        raise EmptyStratum("no samples to aggregate")
    arr = np.array([r.values() for r in reports])
    n = sum(r.n_samples for r in reports)
    return MetricReport(*arr.mean(axis=0).tolist(), n_samples=n)


@dataclass
class Evaluation:
    rows: dict[str, MetricReport]
    per_sample: list[dict] = field(default_factory=list)
    empty: list[str] = field(default_factory=list)
    maes: dict[str, np.ndarray] = field(default_factory=dict)


def evaluate(outputs: Iterable[tuple[ManifestEntry, np.ndarray, np.ndarray]],
             manifest: Manifest | None = None,
             strata: Sequence[str] = ("satellite", "scene"),
             keep_mae: bool = False, split: str | None = "test") -> Evaluation:
    """Per-sample metrics of ``(entry, y, gt)`` triples, aggregated per stratum.

    Row keys are ``"overall"``, then ``"satellite=<tag>"`` / ``"scene=<tag>"``
    in sorted order. Strata present in ``manifest`` but absent from the outputs
    are listed in ``Evaluation.empty`` rather than raising.
    """
    groups: dict[str, list[MetricReport]] = defaultdict(list)
    overall: list[MetricReport] = []
    per_sample = []
    maes = {}
    seen_ids = set()
    for entry, y, gt in outputs:
        y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
        rep = compute_all(y, gt, entry.native_ratio)
        overall.append(rep)
        seen_ids.add(entry.sample_id)
        for key in strata:
            groups[f"{key}={getattr(entry, key)}"].append(rep)
        rec = {"sample_id": entry.sample_id, "satellite": entry.satellite, "scene": entry.scene,
               **{k: v for k, v in asdict(rep).items() if k != "n_samples"}}
        per_sample.append(rec)
        if keep_mae:
            maes[entry.sample_id] = mae_map(y, gt)
    rows: dict[str, MetricReport] = {}
    empty: list[str] = []
    if overall:
        rows["overall"] = aggregate(overall)
    else:
        empty.append("overall")
    expected = set(groups)
    if manifest is not None:
        for e in manifest.entries:
            if split is None or e.split == split:
                expected.update(f"{k}={getattr(e, k)}" for k in strata)
    for key in strata:
        for label in sorted(k for k in expected if k.startswith(key + "=")):
            if groups.get(label):
                rows[label] = aggregate(groups[label])
            else:
                empty.append(label)
    return Evaluation(rows, per_sample, empty, maes)


def format_table(rows: dict[str, MetricReport], label: str = "Stratum") -> str:
    """Plain-text table in PSNR/SSIM/SAM/ERGAS/SCC/MSE column order."""
    width = max([len(label)] + [len(k) for k in rows])
    head = f"{label:<{width}} | " + " | ".join(f"{t:>10}" for t in COLUMN_TITLES) + " |      N"
    lines = [head, "-" * len(head)]
    for name, rep in rows.items():
        cells = " | ".join(f"{v:>10.4f}" for v in rep.values())
        lines.append(f"{name:<{width}} | {cells} | {rep.n_samples:>6d}")
    lines.append(f"# SAM in radians; PSNR capped at {PSNR_CAP:g} dB; outputs clamped to [0, 1]")
    return "\n".join(lines) + "\n"


def write_report(evaluation: Evaluation, out_dir, worst_n: int = 8) -> dict[str, Path]:
    """Write the stratum table, machine-readable rows, per-sample records and worst-N MAE maps."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "report.txt", "rows": out / "report.jsonl", "samples": out / "samples.jsonl"}
    paths["table"].write_text(format_table(evaluation.rows), encoding="utf-8")
    with open(paths["rows"], "w", encoding="utf-8") as fh:
        for name, rep in evaluation.rows.items():
            fh.write(json.dumps({"stratum": name, **asdict(rep)}, sort_keys=True) + "\n")
        for name in evaluation.empty:
            fh.write(json.dumps({"stratum": name, "empty": True}, sort_keys=True) + "\n")
    with open(paths["samples"], "w", encoding="utf-8") as fh:
        for rec in evaluation.per_sample:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if evaluation.maes and worst_n > 0:
        mae_dir = out / "mae"
        mae_dir.mkdir(exist_ok=True)
        worst = sorted(evaluation.per_sample, key=lambda r: (r["psnr"], r["sample_id"]))[:worst_n]
        for rec in worst:
            save_mae_png(evaluation.maes[rec["sample_id"]], mae_dir / f"{rec['sample_id']}.png")
    return paths
