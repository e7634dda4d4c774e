"""The PanTiny network: single MS encoder, Pre-LN transformer body, PAN fusion, conv refinement."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, LayerNorm2d, Module, ModuleList
from .ops import ShapeError
from .tensor import Parameter, Tensor, concat, chunk

FUSION_KINDS = ("enhanced_conv", "conv1x1", "channel_attn", "gated_conv")
REFINE_KINDS = ("conv", "channel_attn", "large_conv")
UPSAMPLE_MODES = ("bicubic", "bilinear")


class ConfigError(ValueError):
    """Invalid model or training configuration; the message lists every violation."""


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    num_blocks: int = 2
    ffn_expansion: float = 2.0
    attn_heads: int = 1
    fusion_kind: str = "enhanced_conv"
    refine_kind: str = "conv"
    ms_bands: int = 4
    upsample_scale: int = 4
    global_residual: bool = True
    fuse_before_body: bool = False
    upsample_mode: str = "bicubic"

    @property
    def hidden_channels(self) -> int:
        """GDFN expansion width: ceil(gamma * C), bumped to the next even number."""
        h = math.ceil(self.ffn_expansion * self.channels - 1e-9)
        return h + (h % 2)

    def violations(self) -> list[str]:
        errs = []
        if self.channels < 1:
            errs.append(f"channels must be >= 1 (got {self.channels})")
        if self.num_blocks < 0:
            errs.append(f"num_blocks must be >= 0 (got {self.num_blocks})")
        if not self.ffn_expansion > 0:
            errs.append(f"ffn_expansion must be > 0 (got {self.ffn_expansion})")
        if self.attn_heads < 1:
            errs.append(f"attn_heads must be >= 1 (got {self.attn_heads})")
        elif self.channels >= 1 and self.channels % self.attn_heads:
            errs.append(f"channels ({self.channels}) must be divisible by attn_heads ({self.attn_heads})")
        if self.fusion_kind not in FUSION_KINDS:
            errs.append(f"fusion_kind must be one of {FUSION_KINDS} (got {self.fusion_kind!r})")
        if self.refine_kind not in REFINE_KINDS:
            errs.append(f"refine_kind must be one of {REFINE_KINDS} (got {self.refine_kind!r})")
        if self.ms_bands < 1:
            errs.append(f"ms_bands must be >= 1 (got {self.ms_bands})")
        if self.upsample_scale < 1:
            errs.append(f"upsample_scale must be >= 1 (got {self.upsample_scale})")
        if self.upsample_mode not in UPSAMPLE_MODES:
            errs.append(f"upsample_mode must be one of {UPSAMPLE_MODES} (got {self.upsample_mode!r})")
        return errs

    def validate(self) -> "ModelConfig":
        errs = self.violations()
        if errs:
            raise ConfigError("invalid model config: " + "; ".join(errs))
        return self

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


# (channels, num_blocks) found by search_presets() against 48.3K and 81.7K
PRESETS = {
    "small": ModelConfig(channels=32, num_blocks=2),
    "big": ModelConfig(channels=36, num_blocks=4),
}

BUDGETS = {"small": 48_300, "big": 81_700}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- parameter accounting -----------------------------------------------------------


def _conv(cin: int, cout: int, k: int, groups: int = 1, bias: bool = True) -> int:
    return cout * (cin // groups) * k * k + (cout if bias else 0)


def _ca_params(c: int, heads: int) -> int:
    return _conv(c, 3 * c, 1) + _conv(3 * c, 3 * c, 3, groups=3 * c) + _conv(c, c, 1) + heads


def param_count(config: ModelConfig) -> int:
    """Exact number of scalar parameters of ``build(config)``, computed analytically."""
    config.validate()
    c, hid, heads = config.channels, config.hidden_channels, config.attn_heads
    gdfn = _conv(c, hid, 1) + _conv(hid, hid, 3, groups=hid) + _conv(hid // 2, c, 1)
    block = 2 * (2 * c) + _ca_params(c, heads) + gdfn
    encoder = _conv(config.ms_bands, c, 3)
    pan_proj = _conv(1, c, 3)
    fusion = {
        "enhanced_conv": pan_proj + _conv(2 * c, c, 3) + _conv(c, c, 3),
        "conv1x1": pan_proj + _conv(2 * c, c, 1),
        "channel_attn": pan_proj + _conv(2 * c, c, 1) + _ca_params(c, heads),
        "gated_conv": pan_proj + _conv(2 * c, 2 * c, 1) + _conv(c, c, 3),
    }[config.fusion_kind]
    refine = {
        "conv": _conv(c, config.ms_bands, 3),
        "channel_attn": _ca_params(c, heads) + _conv(c, config.ms_bands, 3),
        "large_conv": _conv(c, config.ms_bands, 7),
    }[config.refine_kind]
    return encoder + config.num_blocks * block + fusion + refine


def search_presets(targets: dict | None = None, channels=range(8, 129, 4), blocks=range(1, 5)) -> dict:
    """Pick (C, N) per target budget with heads=1 and gamma=2, minimising relative error.

    Depth is capped at 4 blocks by default to keep single-core training tractable.
    Ties go to the shallower network.
    """
    targets = targets or BUDGETS
    found = {}
    for name, target in targets.items():
        best = None
        for n in blocks:
            for c in channels:
                cfg = ModelConfig(channels=c, num_blocks=n)
                err = abs(param_count(cfg) - target) / target
                key = (round(err, 6), n, c)
                if best is None or key < best[0]:
                    best = (key, cfg)
        found[name] = best[1]
    return found


# -- blocks ----------------------------------------------------------------------------


class ChannelAttention(Module):
    """Self-attention across channels with L2-normalised Q/K and a learned per-head temperature."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"channels ({channels}) must be divisible by attn_heads ({heads})")
        self.heads = heads
        self.qkv = Conv2d(channels, 3 * channels, 1, rng)
        self.qkv_dwconv = Conv2d(3 * channels, 3 * channels, 3, rng, groups=3 * channels)
        self.temperature = Parameter(np.ones((heads, 1, 1), dtype=np.float32))
        self.project_out = Conv2d(channels, channels, 1, rng)
        self.last_attention: np.ndarray | None = None

    def attend(self, x: Tensor) -> Tensor:
        """Attention output before the output projection."""
        B, C, H, W = x.shape
        h = self.heads
        q, k, v = chunk(self.qkv_dwconv(self.qkv(x)), 3, axis=1)
        q = ops.l2_normalize(q.reshape(B, h, C // h, H * W))
        k = ops.l2_normalize(k.reshape(B, h, C // h, H * W))
        v = v.reshape(B, h, C // h, H * W)
        attn = ops.softmax(q @ k.transpose(0, 1, 3, 2) * self.temperature)
        self.last_attention = attn.data
        return (attn @ v).reshape(B, C, H, W)

    def forward(self, x: Tensor) -> Tensor:
        return self.project_out(self.attend(x))


class GDFN(Module):
    """Gated depthwise-conv feed-forward: out(GELU(dw(x1)) * dw(x2))."""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.project_in = Conv2d(channels, hidden, 1, rng)
        self.dwconv = Conv2d(hidden, hidden, 3, rng, groups=hidden)
        self.project_out = Conv2d(hidden // 2, channels, 1, rng)

    def gate(self, x: Tensor) -> Tensor:
        x1, x2 = chunk(self.dwconv(self.project_in(x)), 2, axis=1)
        return ops.gelu(x1) * x2

    def forward(self, x: Tensor) -> Tensor:
        return self.project_out(self.gate(x))


class TransformerBlock(Module):
    """Pre-LN block: x' = CA(LN(x)) + x ; out = GDFN(LN(x')) + x'."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c = config.channels
        self.norm1 = LayerNorm2d(c)
        self.attn = ChannelAttention(c, config.attn_heads, rng)
        self.norm2 = LayerNorm2d(c)
        self.ffn = GDFN(c, config.hidden_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = self.attn(self.norm1(x)) + x
        return self.ffn(self.norm2(x)) + x


class EnhancedConvFusion(Module):
    """PAN projected to C channels, concatenated, then two 3x3 convs (2C->C->C) with GELU between."""

    def __init__(self, c: int, rng):
        super().__init__()
        self.pan_proj = Conv2d(1, c, 3, rng)
        self.conv1 = Conv2d(2 * c, c, 3, rng)
        self.conv2 = Conv2d(c, c, 3, rng)

    def forward(self, feats: Tensor, pan: Tensor) -> Tensor:
        h = concat([feats, self.pan_proj(pan)], axis=1)
        return self.conv2(ops.gelu(self.conv1(h)))


class Conv1x1Fusion(Module):
    def __init__(self, c: int, rng):
        super().__init__()
        self.pan_proj = Conv2d(1, c, 3, rng)
        self.conv = Conv2d(2 * c, c, 1, rng)

    def forward(self, feats, pan):
        return self.conv(concat([feats, self.pan_proj(pan)], axis=1))


class ChannelAttnFusion(Module):
    def __init__(self, c: int, heads: int, rng):
        super().__init__()
        self.pan_proj = Conv2d(1, c, 3, rng)
        self.reduce = Conv2d(2 * c, c, 1, rng)
        self.attn = ChannelAttention(c, heads, rng)

    def forward(self, feats, pan):
        h = self.reduce(concat([feats, self.pan_proj(pan)], axis=1))
        return self.attn(h) + h


class GatedConvFusion(Module):
    def __init__(self, c: int, rng):
        super().__init__()
        self.pan_proj = Conv2d(1, c, 3, rng)
        self.gate = Conv2d(2 * c, 2 * c, 1, rng)
        self.conv = Conv2d(c, c, 3, rng)

    def forward(self, feats, pan):
        a, b = chunk(self.gate(concat([feats, self.pan_proj(pan)], axis=1)), 2, axis=1)
        return self.conv(ops.gelu(a) * b)


class ConvRefine(Module):
    def __init__(self, c: int, bands: int, rng, k: int = 3):
        super().__init__()
        self.conv = Conv2d(c, bands, k, rng)

    def forward(self, x):
        return self.conv(x)


class ChannelAttnRefine(Module):
    def __init__(self, c: int, bands: int, heads: int, rng):
        super().__init__()
        self.attn = ChannelAttention(c, heads, rng)
        self.conv = Conv2d(c, bands, 3, rng)

    def forward(self, x):
        return self.conv(self.attn(x) + x)


# -- network -----------------------------------------------------------------------------


class PanTiny(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c, bands = config.channels, config.ms_bands
        self.encoder = Conv2d(bands, c, 3, rng)
        self.body = ModuleList(TransformerBlock(config, rng) for _ in range(config.num_blocks))
        self.fusion = {
            "enhanced_conv": lambda: EnhancedConvFusion(c, rng),
            "conv1x1": lambda: Conv1x1Fusion(c, rng),
            "channel_attn": lambda: ChannelAttnFusion(c, config.attn_heads, rng),
            "gated_conv": lambda: GatedConvFusion(c, rng),
        }[config.fusion_kind]()
        self.refine = {
            "conv": lambda: ConvRefine(c, bands, rng),
            "channel_attn": lambda: ChannelAttnRefine(c, bands, config.attn_heads, rng),
            "large_conv": lambda: ConvRefine(c, bands, rng, k=7),
        }[config.refine_kind]()
        names = [n for n, _ in self.named_parameters()]
        assert len(names) == len(set(names))
        for n, p in self.named_parameters():
            p.name = n

    def upsample_ms(self, lrms: Tensor) -> Tensor:
        return ops.upsample(lrms, self.config.upsample_scale, self.config.upsample_mode)

    def encode(self, ms_up: Tensor) -> Tensor:
        if ms_up.ndim != 4 or ms_up.shape[1] != self.config.ms_bands:
            raise ShapeError(f"encoder expects (B, {self.config.ms_bands}, H, W), got {ms_up.shape}")
        return self.encoder(ms_up)

    def fuse(self, feats: Tensor, pan: Tensor) -> Tensor:
        if pan.ndim != 4 or pan.shape[1] != 1 or pan.shape[2:] != feats.shape[2:] or pan.shape[0] != feats.shape[0]:
            raise ShapeError(f"fusion needs pan (B, 1, H, W) matching features {feats.shape}, got {pan.shape}")
        return self.fusion(feats, pan)

    def forward(self, lrms, pan) -> Tensor:
        lrms = lrms if isinstance(lrms, Tensor) else Tensor(lrms)
        pan = pan if isinstance(pan, Tensor) else Tensor(pan)
        r = self.config.upsample_scale
        if (
            lrms.ndim != 4
            or pan.ndim != 4
            or lrms.shape[0] != pan.shape[0]
            or pan.shape[1] != 1
            or pan.shape[2] != lrms.shape[2] * r
            or pan.shape[3] != lrms.shape[3] * r
        ):
            raise ShapeError(f"pan {pan.shape} must be exactly {r}x the lrms {lrms.shape} spatially")
        ms_up = self.upsample_ms(lrms)
        f = self.encode(ms_up)
        if self.config.fuse_before_body:
            f = self.fuse(f, pan)
        for block in self.body:
            f = block(f)
        if not self.config.fuse_before_body:
            f = self.fuse(f, pan)
        out = self.refine(f)
        if self.config.global_residual:
            out = out + ms_up
        return out

    def predict(self, lrms: np.ndarray, pan: np.ndarray, batch: int = 8) -> np.ndarray:
        """Inference on plain arrays, in chunks of ``batch`` samples."""
        from .tensor import no_grad

        outs = []
        with no_grad():
            for i in range(0, len(lrms), batch):
                outs.append(self.forward(Tensor(lrms[i:i + batch]), Tensor(pan[i:i + batch])).data)
        return np.concatenate(outs, axis=0)


def build(config: ModelConfig | str, seed: int = 0) -> PanTiny:
    """Construct a deterministically initialised model; ``config`` may be a preset name."""
    if isinstance(config, str):
        config = preset(config)
    return PanTiny(config, seed)
