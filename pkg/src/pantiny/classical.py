"""Classical pan-sharpening baselines (component substitution and SFIM).

Every method takes ``lrms`` of shape (C, h, w) and ``pan`` of shape (1, H, W)
or (H, W) with ``H = ratio * h``, works in float64 and returns a (C, H, W)
array clipped to [0, 1]. The MS image is upsampled with the same bicubic
kernel the network uses.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import uniform_filter

from .metrics import DegenerateInputError
from .ops import ShapeError, upsample_array

DELTA = 1e-6


def _prepare(lrms, pan, ratio: int | None):
    ms = np.asarray(lrms, dtype=np.float64)
    p = np.asarray(pan, dtype=np.float64)
    if p.ndim == 3:
        if p.shape[0] != 1:
            raise ShapeError(f"pan must have a single band, got {p.shape}")
        p = p[0]
    if ms.ndim != 3 or p.ndim != 2:
        raise ShapeError(f"expected lrms (C, h, w) and pan (H, W), got {ms.shape} and {p.shape}")
    if ratio is None:
        ratio = p.shape[0] // ms.shape[1]
    if p.shape != (ms.shape[1] * ratio, ms.shape[2] * ratio):
        raise ShapeError(f"pan {p.shape} is not {ratio}x lrms {ms.shape[1:]}")
    return upsample_array(ms, ratio, "bicubic"), p, ratio


def brovey(lrms, pan, ratio: int | None = None) -> np.ndarray:
    ms, p, _ = _prepare(lrms, pan, ratio)
    intensity = ms.mean(axis=0)
    return np.clip(ms * (p / np.maximum(intensity, DELTA)), 0.0, 1.0)


def ihs(lrms, pan, ratio: int | None = None) -> np.ndarray:
    """Generalised IHS: add PAN minus the band-mean intensity to every band."""
    ms, p, _ = _prepare(lrms, pan, ratio)
    return np.clip(ms + (p - ms.mean(axis=0)), 0.0, 1.0)


def sfim(lrms, pan, ratio: int | None = None) -> np.ndarray:
    """Modulate each band by PAN over its (2r-1)-box smoothed version."""
    ms, p, r = _prepare(lrms, pan, ratio)
    smooth = uniform_filter(p, size=2 * r - 1, mode="nearest")
    return np.clip(ms * (p / np.maximum(smooth, DELTA)), 0.0, 1.0)


def gs(lrms, pan, ratio: int | None = None) -> np.ndarray:
    """Gram-Schmidt style injection with per-band gains cov(MS_b, I) / var(I)."""
    ms, p, _ = _prepare(lrms, pan, ratio)
    intensity = ms.mean(axis=0)
    ic = intensity - intensity.mean()
    var_i = float(np.mean(ic * ic))
    if var_i < 1e-12:
        raise DegenerateInputError(f"gs needs a non-constant intensity image (var = {var_i:.3g})")
    gains = np.array([np.mean((band - band.mean()) * ic) for band in ms]) / var_i
    p_std = p.std()
    if p_std < 1e-12:
        matched = np.full_like(p, intensity.mean())
    else:
        matched = (p - p.mean()) * (np.sqrt(var_i) / p_std) + intensity.mean()
    return np.clip(ms + gains[:, None, None] * (matched - intensity), 0.0, 1.0)


METHODS = {"brovey": brovey, "ihs": ihs, "sfim": sfim, "gs": gs}
