"""Training losses: Charbonnier, SSIM, focal regression and their weighted sum."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import ops
from .model import ConfigError
from .ops import ShapeError
from .tensor import Tensor, absolute, as_tensor, concat, narrow, no_grad, sqrt


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.5
    ssim: float = 4.0
    focal: float = 1.5
    r1: float = 1.0
    eps: float = 1e-6
    c1: float = 1e-4
    c2: float = 9e-4
    window_size: int = 11
    window_sigma: float = 1.5

    def violations(self) -> list[str]:
        errs = []
        for name in ("l1", "ssim", "focal"):
            if not getattr(self, name) >= 0:
                errs.append(f"{name} weight must be >= 0 (got {getattr(self, name)})")
        if self.l1 == 0 and self.ssim == 0 and self.focal == 0:
            errs.append("at least one of l1, ssim, focal must be non-zero")
        if not self.r1 > 0:
            errs.append(f"r1 must be > 0 (got {self.r1})")
        if not self.eps > 0:
            errs.append(f"eps must be > 0 (got {self.eps})")
        if not (self.c1 > 0 and self.c2 > 0):
            errs.append(f"c1 and c2 must be > 0 (got {self.c1}, {self.c2})")
        if self.window_size < 1 or self.window_size % 2 == 0:
            errs.append(f"window_size must be a positive odd integer (got {self.window_size})")
        if not self.window_sigma > 0:
            errs.append(f"window_sigma must be > 0 (got {self.window_sigma})")
        return errs

    def validate(self) -> "LossWeights":
        errs = self.violations()
        if errs:
            raise ConfigError("invalid loss weights: " + "; ".join(errs))
        return self


def _check_pair(O: Tensor, G: Tensor) -> None:
    if O.shape != G.shape:
        raise ShapeError(f"prediction {O.shape} and target {G.shape} differ in shape")


def charbonnier(O, G, eps: float = 1e-6) -> Tensor:
    """Mean of sqrt(d^2 + eps^2)."""
    O, G = as_tensor(O), as_tensor(G)
    _check_pair(O, G)
    d = O - G
    return sqrt(d * d + eps * eps).mean()


def focal_regression(O, G, r1: float = 1.0) -> Tensor:
    """Mean of ((255 d)^r1 / 255) * d with d = |O - G|; large errors weigh more."""
    if not r1 > 0:
        raise ConfigError(f"r1 must be > 0 (got {r1})")
    O, G = as_tensor(O), as_tensor(G)
    _check_pair(O, G)
    d = absolute(O - G)
    if r1 == 1.0:
        weighted = d * d
    else:
        weighted = d ** (r1 + 1.0)
    return weighted.mean() * (255.0 ** r1 / 255.0)


@functools.lru_cache(maxsize=16)
def gaussian_window_1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _blur_valid(x: Tensor, size: int, sigma: float) -> Tensor:
    # separable Gaussian, valid region only, independently per channel
    C = x.shape[1]
    g = gaussian_window_1d(size, sigma).astype(x.dtype)
    wh = Tensor(np.tile(g.reshape(1, 1, 1, size), (C, 1, 1, 1)), dtype=x.dtype)
    wv = Tensor(np.tile(g.reshape(1, 1, size, 1), (C, 1, 1, 1)), dtype=x.dtype)
    return ops.conv2d(ops.conv2d(x, wh, groups=C), wv, groups=C)


def ssim_map(O, G, weights: LossWeights | None = None) -> Tensor:
    """Per-pixel, per-channel SSIM over the valid window region, shape (B, C, H-w+1, W-w+1)."""
    w = weights or LossWeights()
    O, G = as_tensor(O), as_tensor(G)
    _check_pair(O, G)
    if O.ndim != 4:
        raise ShapeError(f"ssim expects (B, C, H, W) images, got {O.shape}")
    if O.shape[2] < w.window_size or O.shape[3] < w.window_size:
        raise ShapeError(f"image {O.shape[2]}x{O.shape[3]} is smaller than the {w.window_size}x{w.window_size} window")
    C = O.shape[1]
    stats = _blur_valid(concat([O, G, O * O, G * G, O * G], axis=1), w.window_size, w.window_sigma)
    mu_o, mu_g, e_oo, e_gg, e_og = (narrow(stats, 1, k * C, (k + 1) * C) for k in range(5))
    mo2, mg2, mog = mu_o * mu_o, mu_g * mu_g, mu_o * mu_g
    var_o, var_g, cov = e_oo - mo2, e_gg - mg2, e_og - mog
    num = (mog * 2.0 + w.c1) * (cov * 2.0 + w.c2)
    den = (mo2 + mg2 + w.c1) * (var_o + var_g + w.c2)
    return num / den


def ssim_loss(O, G, weights: LossWeights | None = None) -> Tensor:
    return 1.0 - ssim_map(O, G, weights).mean()


def composite_terms(O, G, weights: LossWeights | None = None) -> tuple[Tensor, dict]:
    """Weighted total plus the unweighted value of every term.

    Terms with zero weight are evaluated without recording a tape, only for logging.
    """
    w = (weights or LossWeights()).validate()
    total = None
    values = {}
    for key, lam, term in (
        ("l1", w.l1, lambda: charbonnier(O, G, w.eps)),
        ("ssim", w.ssim, lambda: ssim_loss(O, G, w)),
        ("focal", w.focal, lambda: focal_regression(O, G, w.r1)),
    ):
        if lam:
            t = term()
            part = t * float(lam)
            total = part if total is None else total + part
        else:
            with no_grad():
                t = term()
        values[key] = t.item()
    return total, values


def composite(O, G, weights: LossWeights | None = None) -> Tensor:
    """l1 * charbonnier + ssim * (1 - SSIM) + focal * focal_regression."""
    return composite_terms(O, G, weights)[0]

