"""Reference methods: a bicubic upsampler and a three-layer PNN-style CNN."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from torch import nn

from .core import BadShape

CUBIC_A = -0.5


def cubic_kernel(x, a: float = CUBIC_A):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    near = x <= 1
    far = (x > 1) & (x < 2)
    out[near] = (a + 2) * x[near] ** 3 - (a + 3) * x[near] ** 2 + 1
    out[far] = a * x[far] ** 3 - 5 * a * x[far] ** 2 + 8 * a * x[far] - 4 * a
    return out


@lru_cache(maxsize=64)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Half-pixel centres, replicated borders; kernel stretched when shrinking.
    scale = n_out / n_in
    support = 2.0 / min(scale, 1.0)
    centres = (np.arange(n_out) + 0.5) / scale - 0.5
    m = np.zeros((n_out, n_in))
    for o, c in enumerate(centres):
        taps = np.arange(int(np.floor(c - support)), int(np.ceil(c + support)) + 1)
        w = cubic_kernel((c - taps) * min(scale, 1.0))
        w /= w.sum()
        np.add.at(m[o], np.clip(taps, 0, n_in - 1), w)
    m.setflags(write=False)
    return m


def bicubic_resize(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Separable bicubic resize of a bands x H x W array to ``size``."""
    x = np.asarray(x, dtype=np.float64)
    mh = _resize_matrix(x.shape[-2], size[0])
    mw = _resize_matrix(x.shape[-1], size[1])
    return np.einsum("oh,...hw,pw->...op", mh, x, mw)


def bicubic_baseline(x_ms: np.ndarray, ratio: int) -> np.ndarray:
    """Upsample MS by ``ratio`` with bicubic interpolation, clamped to [0, 1]."""
    x_ms = np.asarray(x_ms, dtype=np.float64)
    if ratio not in (2, 4):
        raise BadShape(f"ratio must be 2 or 4, got {ratio}")
    if x_ms.ndim not in (3, 4):
        raise BadShape(f"expected (B,)bands x H x W, got {x_ms.shape}")
    h, w = x_ms.shape[-2:]
    return np.clip(bicubic_resize(x_ms, (ratio * h, ratio * w)), 0.0, 1.0)


def bicubic_torch(x: torch.Tensor, ratio: int) -> torch.Tensor:
    """Differentiable twin of :func:`bicubic_resize` for (B, C, h, w) tensors (no clamp)."""
    h, w = x.shape[-2:]
    mh = torch.tensor(_resize_matrix(h, ratio * h), dtype=x.dtype, device=x.device)
    mw = torch.tensor(_resize_matrix(w, ratio * w), dtype=x.dtype, device=x.device)
    return torch.einsum("oh,bchw,pw->bcop", mh, x, mw)


@dataclass(frozen=True)
class PnnConfig:
    widths: tuple[int, int] = (64, 32)
    kernels: tuple[int, int, int] = (9, 5, 5)
    bands: int = 4
    ratio: int = 4

    def __post_init__(self):
        if len(self.widths) != 2 or len(self.kernels) != 3:
            raise ValueError("PNN has exactly three convolutional layers")


class PNN(nn.Module):
    """Pixel-level fusion: bicubic MS stacked with PAN, then three convolutions."""

    def __init__(self, config: PnnConfig = PnnConfig()):
        super().__init__()
        self.config = config
        (w1, w2), (k1, k2, k3) = config.widths, config.kernels
        self.conv1 = nn.Conv2d(config.bands + 1, w1, k1, padding=k1 // 2)
        self.conv2 = nn.Conv2d(w1, w2, k2, padding=k2 // 2)
        self.conv3 = nn.Conv2d(w2, config.bands, k3, padding=k3 // 2)
        self.act = nn.ReLU()

    def forward(self, x_ms: torch.Tensor, x_pan: torch.Tensor) -> torch.Tensor:
        r = self.config.ratio
        if x_ms.ndim != 4 or x_pan.ndim != 4 or x_pan.shape[1] != 1:
            raise BadShape(f"bad PNN inputs {tuple(x_ms.shape)}, {tuple(x_pan.shape)}")
        if x_pan.shape[-2:] != (r * x_ms.shape[-2], r * x_ms.shape[-1]):
            raise BadShape("PAN size must be ratio x MS size")
        x = torch.cat([bicubic_torch(x_ms, r), x_pan], dim=1)
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        return self.conv3(x)


def pnn_forward(x_ms: torch.Tensor, x_pan: torch.Tensor, params: PNN) -> torch.Tensor:
    return params(x_ms, x_pan)
