"""Image-quality metrics, all evaluated in float64 on single (C, H, W) images."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields

import numpy as np

from .ops import ShapeError
from .tensor import Tensor, no_grad


class DegenerateInputError(ValueError):
    """A metric is undefined for the given input (e.g. a band with zero mean)."""


@dataclass(frozen=True)
class ReducedResReport:
    psnr: float
    ssim: float
    sam: float
    ergas: float


@dataclass(frozen=True)
class FullResReport:
    d_lambda: float
    d_s: float
    qnr: float


def _pair(O, G) -> tuple[np.ndarray, np.ndarray]:
    O = np.asarray(O, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if O.shape != G.shape:
        raise ShapeError(f"images differ in shape: {O.shape} vs {G.shape}")
    return O, G


def psnr(O, G, max_val: float = 1.0) -> float:
    """PSNR in dB over all bands and pixels; +inf when the images are identical."""
    O, G = _pair(O, G)
    mse = float(np.mean((O - G) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def ssim_metric(O, G, weights=None) -> float:
    """Mean SSIM over channels and the valid window region (same code path as the SSIM loss)."""
    from .losses import ssim_map

    O, G = _pair(O, G)
    if O.ndim == 3:
        O, G = O[None], G[None]
    with no_grad():
        m = ssim_map(Tensor(O, dtype=np.float64), Tensor(G, dtype=np.float64), weights)
    return float(m.data.mean())


def sam(O, G) -> float:
    """Mean spectral angle in radians; pixels where either spectrum has norm < 1e-12 count as 0."""
    O, G = _pair(O, G)
    if O.ndim != 3 or O.shape[0] < 2:
        raise ShapeError(f"sam needs (C>=2, H, W) images, got {O.shape}")
    no = np.sqrt(np.sum(O * O, axis=0))
    ng = np.sqrt(np.sum(G * G, axis=0))
    valid = (no >= 1e-12) & (ng >= 1e-12)
    u = O[:, valid] / no[valid]
    v = G[:, valid] / ng[valid]
    # half-angle form: exact 0 for parallel spectra, no arccos round-off near 0 or pi
    diff = np.sqrt(np.sum((u - v) ** 2, axis=0))
    summ = np.sqrt(np.sum((u + v) ** 2, axis=0))
    ang = np.zeros(no.shape)
    ang[valid] = 2.0 * np.arctan2(diff, summ)
    return float(ang.mean())


def ergas(O, G, ratio: float = 0.25) -> float:
    """100 * ratio * sqrt(mean_b (RMSE_b / mean(G_b))^2)."""
    O, G = _pair(O, G)
    if O.ndim == 2:
        O, G = O[None], G[None]
    C = O.shape[0]
    rmse = np.sqrt(np.mean((O - G).reshape(C, -1) ** 2, axis=1))
    mu = G.reshape(C, -1).mean(axis=1)
    if np.any(mu == 0.0):
        raise DegenerateInputError(f"ergas undefined: reference band(s) {np.flatnonzero(mu == 0.0).tolist()} have zero mean")
    return float(100.0 * ratio * math.sqrt(np.mean((rmse / mu) ** 2)))


def _window_sums(x: np.ndarray, block: int) -> np.ndarray:
    # sums over every block x block window (stride 1, valid) via an integral image
    S = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    S[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    return S[block:, block:] - S[:-block, block:] - S[block:, :-block] + S[:-block, :-block]


def q_index(a, b, block: int = 32) -> float:
    """Universal quality index averaged over all block x block windows (stride 1).

    Windows whose denominator vanishes are skipped. When every window is
    degenerate the result is 1 for equal images and 0 otherwise.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ShapeError(f"q_index takes single-band 2-D images, got {a.shape}")
    if a.shape[0] < block or a.shape[1] < block:
        raise ShapeError(f"image {a.shape} is smaller than one {block}x{block} block")
    n = float(block * block)
    # second moments come from globally centred data to limit cancellation
    sa, sb = _window_sums(a, block), _window_sums(b, block)
    ca, cb = a - a.mean(), b - b.mean()
    saa, sbb, sab = _window_sums(ca * ca, block), _window_sums(cb * cb, block), _window_sums(ca * cb, block)
    sca, scb = _window_sums(ca, block), _window_sums(cb, block)
    mu_a, mu_b = sa / n, sb / n
    var_a = saa / n - (sca / n) ** 2
    var_b = sbb / n - (scb / n) ** 2
    cov = sab / n - (sca / n) * (scb / n)
    den = (var_a + var_b) * (mu_a * mu_a + mu_b * mu_b)
    ok = np.abs(den) > 1e-12
    if not ok.any():
        return 1.0 if np.array_equal(a, b) else 0.0
    q = 4.0 * cov[ok] * mu_a[ok] * mu_b[ok] / den[ok]
    return float(q.mean())


def d_lambda(fused, lrms, block: int = 32) -> float:
    """Spectral distortion: mean |Q(F_i, F_j) - Q(M_i, M_j)| over ordered band pairs i != j."""
    F = np.asarray(fused, dtype=np.float64)
    M = np.asarray(lrms, dtype=np.float64)
    if F.ndim != 3 or M.ndim != 3 or F.shape[0] != M.shape[0]:
        raise ShapeError(f"d_lambda needs (C, H, W) fused and lrms with equal C, got {F.shape} and {M.shape}")
    C = F.shape[0]
    if C < 2:
        raise ShapeError("d_lambda needs at least two bands")
    total = 0.0
    for i in range(C):
        for j in range(i + 1, C):
            total += 2.0 * abs(q_index(F[i], F[j], block) - q_index(M[i], M[j], block))
    return total / (C * (C - 1))


def d_s(fused, pan, lrms, pan_degraded, block: int = 32) -> float:
    """Spatial distortion: mean over bands of |Q(F_b, P) - Q(M_b, P_low)|."""
    F = np.asarray(fused, dtype=np.float64)
    M = np.asarray(lrms, dtype=np.float64)
    P = np.asarray(pan, dtype=np.float64)
    PL = np.asarray(pan_degraded, dtype=np.float64)
    if F.ndim != 3 or M.ndim != 3 or F.shape[0] != M.shape[0]:
        raise ShapeError(f"d_s needs (C, H, W) fused and lrms with equal C, got {F.shape} and {M.shape}")
    if P.size != F.shape[1] * F.shape[2]:
        raise ShapeError(f"pan {P.shape} does not match fused spatial size {F.shape[1:]}")
    if PL.size != M.shape[1] * M.shape[2]:
        raise ShapeError(f"degraded pan {PL.shape} does not match lrms spatial size {M.shape[1:]}")
    P, PL = P.reshape(F.shape[1:]), PL.reshape(M.shape[1:])
    return float(np.mean([abs(q_index(F[b], P, block) - q_index(M[b], PL, block)) for b in range(F.shape[0])]))


def qnr(dl: float, ds: float, alpha: float = 1.0, beta: float = 1.0) -> float:
    return float((1.0 - dl) ** alpha * (1.0 - ds) ** beta)


def reduced_res_report(O, G, ratio: float = 0.25) -> ReducedResReport:
    return ReducedResReport(psnr(O, G), ssim_metric(O, G), sam(O, G), ergas(O, G, ratio))


def full_res_report(fused, pan, lrms, pan_degraded, block: int = 32) -> FullResReport:
    dl = d_lambda(fused, lrms, block)
    ds = d_s(fused, pan, lrms, pan_degraded, block)
    return FullResReport(dl, ds, qnr(dl, ds))


def mean_report(reports: list):
    """Field-wise mean of a list of reports of the same type."""
    cls = type(reports[0])
    return cls(**{f.name: float(np.mean([getattr(r, f.name) for r in reports])) for f in fields(cls)})


def format_report_csv(rows: list[tuple[str, str, object]]) -> str:
    """Rows of (dataset, model, report); all reports must share one type. Values use 4 decimals."""
    if not rows:
        raise ValueError("no rows to write")
    cls = type(rows[0][2])
    names = [f.name for f in fields(cls)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "model", *names])
    for dataset, model, report in rows:
        if type(report) is not cls:
            raise TypeError("mixed report types in one CSV")
        w.writerow([dataset, model, *(f"{getattr(report, n):.4f}" for n in names)])
    return buf.getvalue()


def write_report_csv(path, rows: list[tuple[str, str, object]]) -> None:
    text = format_report_csv(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
