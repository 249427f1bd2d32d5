"""CMFNet: multiscale MS and PAN encoders feeding a cascaded fusion autoencoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .core import BadShape, CmfnetError

MODES = ("pansharpen", "sr_no_pan", "colorize_no_ms")
BLOCK_KINDS = ("residual_conv",)


class BadMode(CmfnetError):
    pass


class ShapeMismatch(BadShape):
    pass


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    cascade_levels: int = 3
    injection: bool = True
    mode: str = "pansharpen"
    block_kind: str = "residual_conv"
    bands: int = 4
    ratio: int = 4
    global_residual: bool = False

    def __post_init__(self):
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if self.cascade_levels not in (1, 2, 3):
            raise ValueError("cascade_levels must be 1, 2 or 3")
        if self.mode not in MODES:
            raise BadMode(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.block_kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.block_kind!r}")
        if self.ratio != 4:
            raise ValueError("the network operates on the ratio-4 grid only")

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock(nn.Module):
    """conv3x3 -> SiLU -> conv3x3 plus identity (or 1x1-projected) skip."""

    def __init__(self, c_in: int, c_out: int | None = None):
        super().__init__()
        c_out = c_in if c_out is None else c_out
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.act = nn.SiLU()
        self.skip = nn.Identity() if c_in == c_out else nn.Conv2d(c_in, c_out, 1)

    def forward(self, x):
        return self.skip(x) + self.conv2(self.act(self.conv1(x)))


def make_block(kind: str, c_in: int, c_out: int | None = None) -> nn.Module:
    if kind == "residual_conv":
        return ResidualBlock(c_in, c_out)
    raise ValueError(f"unknown block kind {kind!r}")


class Upsample(nn.Module):
    """Bilinear x2 then a 1x1 conv halving the channels."""

    def __init__(self, c_in: int):
        super().__init__()
        self.proj = nn.Conv2d(c_in, c_in // 2, 1)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.proj(x)


class Downsample(nn.Module):
    """2x2 average pool then a 1x1 conv doubling the channels."""

    def __init__(self, c_in: int):
        super().__init__()
        self.proj = nn.Conv2d(c_in, c_in * 2, 1)

    def forward(self, x):
        return self.proj(F.avg_pool2d(x, 2))


def pan_channels(c: int, i: int) -> int:
    """Channels of PAN-convention pyramid level ``i`` (1-based): C * 2^(i-1)."""
    return c * 2 ** (i - 1)


def pyramid_shapes(c: int, h: int, w: int, convention: str, levels: int = 3) -> list[tuple[int, int, int]]:
    """Closed-form shapes of a 3-level pyramid; ``h, w`` are the PAN (high-res) size."""
    if convention == "pan":
        return [(c * 2 ** (i - 1), h // 2 ** (i - 1), w // 2 ** (i - 1)) for i in range(1, levels + 1)]
    if convention == "ms":
        return [(c * 2 ** (3 - i), h // 2 ** (3 - i), w // 2 ** (3 - i)) for i in range(1, 4)]
    raise ValueError(convention)


def _check_add(*xs):
    shapes = {tuple(x.shape) for x in xs}
    if len(shapes) != 1:
        raise ShapeMismatch(f"cannot add features of shapes {sorted(shapes)}")
    out = xs[0]
    for x in xs[1:]:
        out = out + x
    return out


class MSEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, kind = cfg.base_channels, cfg.block_kind
        self.head = nn.Conv2d(cfg.bands, 4 * c, 3, padding=1)
        self.blocks = nn.ModuleList([make_block(kind, 4 * c), make_block(kind, 2 * c), make_block(kind, c)])
        self.ups = nn.ModuleList([Upsample(4 * c), Upsample(2 * c)])
        self.bands = cfg.bands

    def forward(self, x_ms) -> list[torch.Tensor]:
        """[S_1, S_2, S_3] at H/4, H/2, H with 4C, 2C, C channels."""
        if x_ms.ndim != 4 or x_ms.shape[1] != self.bands:
            raise BadShape(f"MS input must be (B, {self.bands}, h, w), got {tuple(x_ms.shape)}")
        s = [self.blocks[0](self.head(x_ms))]
        for up, block in zip(self.ups, self.blocks[1:]):
            s.append(block(up(s[-1])))
        return s


class PANEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, levels: int = 3):
        super().__init__()
        c, kind = cfg.base_channels, cfg.block_kind
        self.head = nn.Conv2d(1, c, 3, padding=1)
        self.blocks = nn.ModuleList([make_block(kind, pan_channels(c, i)) for i in range(1, levels + 1)])
        self.downs = nn.ModuleList([Downsample(pan_channels(c, i)) for i in range(1, levels)])

    def forward(self, x_pan) -> list[torch.Tensor]:
        """[P_1, ..., P_levels] at H / 2^(i-1) with C * 2^(i-1) channels."""
        if x_pan.ndim != 4 or x_pan.shape[1] != 1:
            raise BadShape(f"PAN input must be (B, 1, H, W), got {tuple(x_pan.shape)}")
        p = [self.blocks[0](self.head(x_pan))]
        for down, block in zip(self.downs, self.blocks[1:]):
            p.append(block(down(p[-1])))
        return p


class FusionEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, n = cfg.base_channels, cfg.cascade_levels
        self.blocks = nn.ModuleList([make_block(cfg.block_kind, pan_channels(c, i)) for i in range(1, n + 1)])
        self.downs = nn.ModuleList([Downsample(pan_channels(c, i)) for i in range(1, n)])

    def forward(self, s, p) -> list[torch.Tensor]:
        # E_1 = Block(S_3 + P_1); E_i = Block(S_{4-i} + P_i + Down(E_{i-1}))
        e = [self.blocks[0](_check_add(s[2], p[0]))]
        for i in range(2, len(self.blocks) + 1):
            x = _check_add(s[3 - i], p[i - 1], self.downs[i - 2](e[-1]))
            e.append(self.blocks[i - 1](x))
        return e


class FusionDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, n = cfg.base_channels, cfg.cascade_levels
        # index i-1 holds the level-i stage, i in 1..L-1
        self.blocks = nn.ModuleList([make_block(cfg.block_kind, pan_channels(c, i)) for i in range(1, n)])
        self.ups = nn.ModuleList([Upsample(pan_channels(c, i + 1)) for i in range(1, n)])

    def forward(self, e, s, p, injection: bool) -> torch.Tensor:
        # D_L = E_L; D_i = Block(Up(D_{i+1}) + E_i + [S_{4-i} + P_i])
        d = e[-1]
        for i in range(len(e) - 1, 0, -1):
            terms = [self.ups[i - 1](d), e[i - 1]]
            if injection:
                terms += [s[3 - i], p[i - 1]]
            d = self.blocks[i - 1](_check_add(*terms))
        return d


class CMFNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int | None = 0):
        super().__init__()
        self.config = config
        self.ms_encoder = MSEncoder(config)
        self.pan_encoder = PANEncoder(config, levels=config.cascade_levels)
        self.fusion_encoder = FusionEncoder(config)
        self.fusion_decoder = FusionDecoder(config)
        self.tail = nn.Conv2d(config.base_channels, config.bands, 3, padding=1)
        if seed is not None:
            init_parameters(self, seed)

    def ms_encode(self, x_ms):
        return self.ms_encoder(x_ms)

    def pan_encode(self, x_pan):
        return self.pan_encoder(x_pan)

    def fusion_encode(self, s, p):
        return self.fusion_encoder(s, p)

    def fusion_decode(self, e, s, p, injection: bool | None = None):
        if injection is None:
            injection = self.config.injection
        return self.fusion_decoder(e, s, p, injection)

    def prepare_inputs(self, x_ms, x_pan):
        cfg = self.config
        if x_ms.ndim != 4 or x_pan.ndim != 4:
            raise BadShape("inputs must be batched (B, C, H, W) tensors")
        h, w = x_pan.shape[-2:]
        if h % 4 or w % 4 or h < 8 or w < 8:
            raise BadShape(f"PAN size {h}x{w} must be >= 8 and divisible by 4")
        if tuple(x_ms.shape[-2:]) != (h // cfg.ratio, w // cfg.ratio) or x_ms.shape[0] != x_pan.shape[0]:
            raise BadShape(f"MS {tuple(x_ms.shape)} does not match PAN {tuple(x_pan.shape)} at ratio {cfg.ratio}")
        if cfg.mode == "sr_no_pan":
            x_pan = torch.zeros_like(x_pan)
        elif cfg.mode == "colorize_no_ms":
            x_ms = torch.zeros_like(x_ms)
        return x_ms, x_pan

    def features(self, x_ms, x_pan) -> dict[str, list[torch.Tensor] | torch.Tensor]:
        """All intermediate pyramids (S, P, E) and the fused features F_o."""
        x_ms, x_pan = self.prepare_inputs(x_ms, x_pan)
        s = self.ms_encode(x_ms)
        p = self.pan_encode(x_pan)
        e = self.fusion_encode(s, p)
        return {"S": s, "P": p, "E": e, "F_o": self.fusion_decode(e, s, p)}

    def forward(self, x_ms, x_pan):
        x_ms_in, _ = self.prepare_inputs(x_ms, x_pan)
        y = self.tail(self.features(x_ms, x_pan)["F_o"])
        if self.config.global_residual:
            y = y + F.interpolate(x_ms_in, scale_factor=self.config.ratio, mode="bicubic", align_corners=False)
        return y


def init_parameters(model: nn.Module, seed: int) -> None:
    """Normal weights with std 1/sqrt(3 * fan_in), zero biases, from a private generator."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, prm in model.named_parameters():
            if name.endswith("bias"):
                prm.zero_()
            else:
                fan_in = prm[0].numel()
                prm.copy_(torch.randn(prm.shape, generator=gen, dtype=prm.dtype) * (1.0 / (3 * fan_in)) ** 0.5)
        # second conv of every residual branch starts small so blocks begin near identity
        for mod in model.modules():
            if isinstance(mod, ResidualBlock):
                mod.conv2.weight.mul_(0.1)
        if isinstance(model, CMFNet):
            model.tail.weight.mul_(0.1)


def forward(x_ms, x_pan, config: ModelConfig | None = None, model: CMFNet | None = None):
    """Run CMFNet on one unbatched (C, H, W) or batched pair."""
    if model is None:
        model = CMFNet(config or ModelConfig())
    unbatched = x_ms.ndim == 3
    if unbatched:
        x_ms, x_pan = x_ms[None], x_pan[None]
    y = model(x_ms, x_pan)
    return y[0] if unbatched else y


def count_params(config: ModelConfig) -> int:
    return sum(p.numel() for p in CMFNet(config, seed=None).parameters())
