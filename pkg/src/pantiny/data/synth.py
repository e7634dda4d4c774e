"""Procedural multispectral scenes and the reduced-resolution degradation chain."""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass

import numpy as np

from ..model import ConfigError
from ..ops import ShapeError

BANDS = 4
SPLITS = ("train", "test", "full")


@dataclass(frozen=True)
class DomainSpec:
    name: str
    pan_weights: tuple = (0.25, 0.25, 0.25, 0.25)
    noise_sigma: float = 0.0
    blur_sigma: float | None = None  # None means ratio / 2
    ratio: int = 4
    num_train: int = 200
    num_test: int = 32
    num_full: int = 4
    patch: int = 64
    # texture parameters
    octaves: int = 3
    cell_px: float = 16.0
    persistence: float = 0.5
    num_materials: int = 4
    spectral_seed: int = 0
    band_offsets: tuple = (0.0, 0.0, 0.0, 0.0)
    texture_amp: float = 0.35
    band_correlation: float = 0.8

    @property
    def sigma(self) -> float:
        return self.ratio / 2.0 if self.blur_sigma is None else float(self.blur_sigma)

    def violations(self) -> list[str]:
        errs = []
        w = np.asarray(self.pan_weights, dtype=np.float64)
        if w.shape != (BANDS,):
            errs.append(f"{self.name}: pan_weights needs {BANDS} entries (got {len(self.pan_weights)})")
        elif (w < 0).any() or abs(w.sum() - 1.0) > 1e-6:
            errs.append(f"{self.name}: pan_weights must be non-negative and sum to 1 (sum {w.sum():.8g})")
        if len(self.band_offsets) != BANDS:
            errs.append(f"{self.name}: band_offsets needs {BANDS} entries")
        if self.ratio < 2:
            errs.append(f"{self.name}: ratio must be >= 2 (got {self.ratio})")
        elif self.patch % self.ratio:
            errs.append(f"{self.name}: patch {self.patch} is not divisible by ratio {self.ratio}")
        if self.patch < 1:
            errs.append(f"{self.name}: patch must be positive")
        for field in ("num_train", "num_test", "num_full"):
            if getattr(self, field) < 0:
                errs.append(f"{self.name}: {field} must be >= 0")
        if self.noise_sigma < 0:
            errs.append(f"{self.name}: noise_sigma must be >= 0")
        if self.blur_sigma is not None and self.blur_sigma < 0:
            errs.append(f"{self.name}: blur_sigma must be >= 0")
        if self.octaves < 1 or self.cell_px <= 0 or self.num_materials < 1:
            errs.append(f"{self.name}: octaves, cell_px and num_materials must be positive")
        if not 0.0 <= self.band_correlation <= 1.0 or not 0.0 <= self.texture_amp <= 1.0:
            errs.append(f"{self.name}: band_correlation and texture_amp must lie in [0, 1]")
        return errs

    def validate(self) -> "DomainSpec":
        errs = self.violations()
        if errs:
            raise ConfigError("invalid domain spec: " + "; ".join(errs))
        return self

    def replace(self, **changes) -> "DomainSpec":
        return dataclasses.replace(self, **changes)


# Three stand-in sensors: they differ in spectral response of the PAN band,
# noise level, texture scale and material spectra.
DEFAULT_DOMAINS = (
    DomainSpec(
        name="synthA",
        pan_weights=(0.1, 0.3, 0.3, 0.3),
        noise_sigma=0.004,
        cell_px=16.0,
        spectral_seed=11,
        band_offsets=(0.0, 0.02, 0.05, -0.03),
    ),
    DomainSpec(
        name="synthB",
        pan_weights=(0.4, 0.3, 0.2, 0.1),
        noise_sigma=0.01,
        cell_px=10.0,
        spectral_seed=23,
        band_offsets=(0.05, 0.0, -0.04, 0.06),
        band_correlation=0.6,
    ),
    DomainSpec(
        name="synthC",
        pan_weights=(0.15, 0.2, 0.25, 0.4),
        noise_sigma=0.0,
        cell_px=24.0,
        spectral_seed=37,
        band_offsets=(-0.04, 0.03, 0.0, 0.08),
        texture_amp=0.5,
    ),
)


def default_domains() -> dict[str, DomainSpec]:
    return {d.name: d for d in DEFAULT_DOMAINS}


def sample_seed(seed: int, domain: str, split: str, index: int) -> np.random.SeedSequence:
    """Independent stream per (global seed, domain, split, sample)."""
    return np.random.SeedSequence([seed, zlib.crc32(domain.encode("utf-8")), SPLITS.index(split), index])


# -- textures ----------------------------------------------------------------------------


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(rng: np.random.Generator, shape: tuple, cell: float) -> np.ndarray:
    """One octave of value noise in [0, 1]: a random lattice every ``cell`` pixels, smoothstep-interpolated."""
    H, W = shape
    gh, gw = int(math.ceil(H / cell)) + 1, int(math.ceil(W / cell)) + 1
    lattice = rng.random((gh + 1, gw + 1))
    y = (np.arange(H) + 0.5) / cell
    x = (np.arange(W) + 0.5) / cell
    y0, x0 = np.floor(y).astype(np.int64), np.floor(x).astype(np.int64)
    ty, tx = _smoothstep(y - y0)[:, None], _smoothstep(x - x0)[None, :]
    a = lattice[np.ix_(y0, x0)]
    b = lattice[np.ix_(y0, x0 + 1)]
    c = lattice[np.ix_(y0 + 1, x0)]
    d = lattice[np.ix_(y0 + 1, x0 + 1)]
    top = a + (b - a) * tx
    bottom = c + (d - c) * tx
    return top + (bottom - top) * ty


def fractal_noise(rng, shape, cell: float, octaves: int, persistence: float) -> np.ndarray:
    total = np.zeros(shape)
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        total += amp * value_noise(rng, shape, max(cell / (2 ** o), 1.0))
        norm += amp
        amp *= persistence
    return total / norm


def material_spectra(spec: DomainSpec) -> np.ndarray:
    """(num_materials, 4) reflectance table, fixed per domain."""
    rng = np.random.default_rng(spec.spectral_seed)
    table = rng.uniform(0.15, 0.85, size=(spec.num_materials, BANDS)) + np.asarray(spec.band_offsets)
    return np.clip(table, 0.02, 0.98)


def synth_scene(spec: DomainSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """A (4, size, size) float32 HRMS scene: piecewise materials with sharp borders, modulated by texture."""
    shape = (size, size)
    fields = np.stack([
        fractal_noise(rng, shape, 2.0 * spec.cell_px, spec.octaves, spec.persistence)
        for _ in range(spec.num_materials)
    ])
    label = np.argmax(fields, axis=0)
    spectra = material_spectra(spec)
    shared = fractal_noise(rng, shape, spec.cell_px, spec.octaves, spec.persistence)
    bands = []
    for b in range(BANDS):
        own = fractal_noise(rng, shape, spec.cell_px / 2.0, spec.octaves, spec.persistence)
        tex = spec.band_correlation * shared + (1.0 - spec.band_correlation) * own
        bands.append(spectra[label, b] * (1.0 - spec.texture_amp + 2.0 * spec.texture_amp * tex))
    return np.clip(np.stack(bands), 0.0, 1.0).astype(np.float32)


# -- degradation ------------------------------------------------------------------------


def gaussian_taps(sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.ones(1)
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_axis(a: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    # centre + sum_k w_k (x_k - centre): a constant signal stays bit-exact
    radius = len(taps) // 2
    if radius == 0:
        return a.copy()
    pad = [(0, 0)] * a.ndim
    pad[axis] = (radius, radius)
    p = np.pad(a, pad, mode="reflect")
    n = a.shape[axis]
    centre = np.take(p, np.arange(radius, radius + n), axis=axis)
    out = centre.copy()
    for k, w in enumerate(taps):
        if k == radius:
            continue
        out += w * (np.take(p, np.arange(k, k + n), axis=axis) - centre)
    return out


def wald_degrade(hrms, r: int = 4, blur_sigma: float | None = None) -> np.ndarray:
    """Gaussian blur (default sigma r/2, reflected borders) then keep the top-left pixel of every r x r block."""
    x = np.asarray(hrms)
    if x.ndim not in (2, 3):
        raise ShapeError(f"wald_degrade takes (C, H, W) or (H, W), got {x.shape}")
    H, W = x.shape[-2:]
    if r < 1 or H % r or W % r:
        raise ShapeError(f"image {H}x{W} is not divisible by ratio {r}")
    sigma = r / 2.0 if blur_sigma is None else blur_sigma
    taps = gaussian_taps(sigma)
    f = x.astype(np.float64)
    f = _filter_axis(f, taps, f.ndim - 2)
    f = _filter_axis(f, taps, f.ndim - 1)
    return np.ascontiguousarray(f[..., ::r, ::r]).astype(np.float32)


def simulate_pan(hrms, pan_weights, noise_sigma: float = 0.0, noise_seed=None) -> np.ndarray:
    """Weighted band sum plus optional Gaussian noise, clipped to [0, 1]; returns (1, H, W) float32."""
    x = np.asarray(hrms, dtype=np.float64)
    w = np.asarray(pan_weights, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != w.shape[0]:
        raise ShapeError(f"hrms {x.shape} does not match {w.shape[0]} pan weights")
    pan = np.zeros(x.shape[1:])
    for b in range(x.shape[0]):
        pan += w[b] * x[b]
    if noise_sigma > 0:
        pan += noise_sigma * np.random.default_rng(noise_seed).standard_normal(pan.shape)
    return np.clip(pan, 0.0, 1.0).astype(np.float32)[None]


def make_sample(spec: DomainSpec, seed: int, split: str, index: int) -> dict:
    """Generate one sample. Train/test give (lrms, pan, hrms) at patch size;
    the full split gives (lrms, pan) from an r-times larger scene with no reference."""
    scene_ss, noise_ss = sample_seed(seed, spec.name, split, index).spawn(2)
    size = spec.patch * spec.ratio if split == "full" else spec.patch
    hrms = synth_scene(spec, np.random.default_rng(scene_ss), size)
    pan = simulate_pan(hrms, spec.pan_weights, spec.noise_sigma, noise_ss)
    lrms = wald_degrade(hrms, spec.ratio, spec.sigma)
    if split == "full":
        return {"lrms": lrms, "pan": pan}
    return {"lrms": lrms, "pan": pan, "hrms": hrms}


def noise_seed(seed: int, domain: str, split: str, index: int) -> np.random.SeedSequence:
    """The seed ``make_sample`` hands to ``simulate_pan`` for this sample."""
    return sample_seed(seed, domain, split, index).spawn(2)[1]
