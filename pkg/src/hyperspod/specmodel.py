"""Spectral fluctuation statistics and simulated endmember spectra.

Pixels of one material are modelled as

    s = (b*gamma + 1) * ((a + v) * gamma + 1) * s_bar

(elementwise), where ``gamma`` is the per-band coefficient of variation of
a homogeneous reference area, ``a ~ N(0, sigma_a)`` is a per-pixel baseline
shift of the standardized local fluctuation factor, ``v_i ~ N(0,
sigma_v[i])`` is per-band noise on that factor, and ``b`` is a wide-area
factor shared by every pixel of one object.

Random draws use ``numpy.random.Generator`` (PCG64 bit generator, ziggurat
normals).  Draw order inside :func:`simulate_spectrum` is fixed: ``b`` (only
when not supplied), then ``a``, then ``v``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateBand, LengthMismatch, ZeroReflectanceDivisor
from .hsicube import HyperCube

__all__ = [
    "SpectrumStats",
    "EndmemberSpectrum",
    "estimate_stats",
    "standardized_factors",
    "fluctuate",
    "simulate_spectrum",
    "reflectance_to_radiance",
    "read_spectrum_csv",
    "write_spectrum_csv",
]

B_RANGE = (-0.3, 0.3)
M_T_RANGE = (2000.0, 3000.0)


@dataclass(frozen=True, eq=False)
class SpectrumStats:
    mu: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    sigma_a: float
    sigma_v: np.ndarray

    def __post_init__(self):
        for name in ("mu", "sigma", "gamma", "sigma_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.mu.shape
        if self.sigma.shape != n or self.gamma.shape != n or self.sigma_v.shape != n:
            raise LengthMismatch("mu, sigma, gamma and sigma_v must share one band count")
        if np.any(self.sigma < 0) or np.any(self.sigma_v < 0) or self.sigma_a < 0:
            raise ValueError("standard deviations must be non-negative")

    @property
    def bands(self) -> int:
        return self.mu.shape[0]

    def to_json(self) -> str:
        doc = {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "gamma": self.gamma.tolist(),
            "sigma_a": float(self.sigma_a),
            "sigma_v": self.sigma_v.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SpectrumStats":
        d = json.loads(text)
        return cls(d["mu"], d["sigma"], d["gamma"], float(d["sigma_a"]), d["sigma_v"])

    @classmethod
    def synthetic(cls, bands: int, sigma_a: float = 0.8, sigma_v: float = 0.6,
                  gamma_range=(0.02, 0.08), level: float = 1000.0) -> "SpectrumStats":
        """Stand-in reference statistics for runs without a real water region.

        ``gamma`` rises linearly across the bands, as the coefficient of
        variation of open water does from visible to short-wave infrared.
        """
        gamma = np.linspace(gamma_range[0], gamma_range[1], bands)
        mu = np.full(bands, float(level))
        return cls(mu, mu * gamma, gamma, sigma_a, np.full(bands, float(sigma_v)))


@dataclass(frozen=True, eq=False)
class EndmemberSpectrum:
    name: str
    radiance_baseline: np.ndarray
    reflectance: np.ndarray | None = None

    def __post_init__(self):
        rb = np.asarray(self.radiance_baseline, dtype=np.float64)
        if np.any(rb <= 0):
            raise ValueError(f"endmember {self.name!r}: radiance baseline must be positive")
        object.__setattr__(self, "radiance_baseline", rb)
        if self.reflectance is not None:
            rt = np.asarray(self.reflectance, dtype=np.float64)
            if rt.shape != rb.shape:
                raise LengthMismatch(f"endmember {self.name!r}: reflectance/radiance length differ")
            object.__setattr__(self, "reflectance", rt)


def _coefficient_of_variation(mu, sigma, orientation):
    if orientation == "sigma_over_mu":
        return sigma / mu
    if orientation == "mu_over_sigma":
        return mu / sigma
    raise ValueError(f"unknown cv_orientation {orientation!r}")


def standardized_factors(spectra, mu, gamma) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel baseline ``a`` and per-band residual ``v`` of ``spectra``.

    ``spectra`` is ``(n, N)``.  Returns ``a`` with shape ``(n,)`` (mean over
    bands of the standardized local factor) and the residual ``(n, N)``.
    """
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    alpha = (spectra - mu) / mu
    alpha_bar = alpha / gamma
    a = alpha_bar.mean(axis=1)
    return a, alpha_bar - a[:, None]


def estimate_stats(region, cv_orientation: str = "sigma_over_mu") -> SpectrumStats:
    """Fluctuation statistics of a homogeneous reference region.

    ``region`` is a :class:`HyperCube` or an ``(n_pixels, N)`` array.  Means
    and standard deviations use the population denominator.
    """
    pixels = region.pixels() if isinstance(region, HyperCube) else np.atleast_2d(np.asarray(region, dtype=np.float64))
    if pixels.shape[0] < 2:
        raise ValueError("reference region needs at least 2 pixels")
    mu = pixels.mean(axis=0)
    sigma = pixels.std(axis=0)
    bad = np.flatnonzero(sigma == 0)
    if bad.size:
        raise DegenerateBand(f"zero variance in band(s) {bad.tolist()}")
    if np.any(mu <= 0):
        raise DegenerateBand(f"non-positive mean in band(s) {np.flatnonzero(mu <= 0).tolist()}")
    gamma = _coefficient_of_variation(mu, sigma, cv_orientation)
    a, resid = standardized_factors(pixels, mu, gamma)
    return SpectrumStats(mu, sigma, gamma, float(a.std()), resid.std(axis=0))


def fluctuate(baseline, gamma, a, upsilon, b) -> np.ndarray:
    """Apply the combined fluctuation model for given factor values.

    ``a`` may be a scalar or ``(n,)``; ``upsilon`` broadcasts against
    ``(n, N)``.  No randomness here.
    """
    baseline = np.asarray(baseline, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    local = (a + np.asarray(upsilon, dtype=np.float64)) * gamma + 1.0
    return (b * gamma + 1.0) * local * baseline


def simulate_spectrum(stats: SpectrumStats, baseline, b: float | None = None,
                      rng: np.random.Generator | None = None, size: int | None = None) -> np.ndarray:
    """Draw spectra of one object around ``baseline``.

    One ``b`` is shared by all ``size`` draws; when ``b`` is None it is drawn
    from U[-0.3, 0.3].  Returns ``(N,)`` when ``size`` is None, else
    ``(size, N)``.
    """
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != (stats.bands,):
        raise LengthMismatch(f"baseline has {baseline.shape} bands, stats have {stats.bands}")
    if rng is None:
        rng = np.random.default_rng()
    if b is None:
        b = rng.uniform(*B_RANGE)
    if not np.isfinite(b):
        raise ValueError("wide-area factor b must be finite")
    n = 1 if size is None else int(size)
    a = rng.standard_normal(n) * stats.sigma_a
    ups = rng.standard_normal((n, stats.bands)) * stats.sigma_v
    out = fluctuate(baseline, stats.gamma, a, ups, b)
    return out[0] if size is None else out


def reflectance_to_radiance(r_t, r_w, s_w, m_t: float, name: str = "endmember") -> EndmemberSpectrum:
    """Linear reflectance-to-radiance mapping, rescaled so the peak equals ``m_t``."""
    r_t = np.asarray(r_t, dtype=np.float64)
    r_w = np.asarray(r_w, dtype=np.float64)
    s_w = np.asarray(s_w, dtype=np.float64)
    if not (r_t.shape == r_w.shape == s_w.shape):
        raise LengthMismatch("r_t, r_w and s_w must share one band count")
    if np.any(r_w <= 0):
        raise ZeroReflectanceDivisor("reference reflectance r_w must be positive in every band")
    if not m_t > 0:
        raise ValueError("m_t must be positive")
    raw = s_w / r_w * r_t
    peak = raw.max()
    if not peak > 0:
        raise ValueError("converted radiance has no positive band")
    return EndmemberSpectrum(name, m_t / peak * raw, reflectance=r_t)


def write_spectrum_csv(path, values, wavelengths=None) -> None:
    values = np.asarray(values, dtype=np.float64)
    if wavelengths is None:
        wavelengths = np.arange(values.shape[0], dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength_nm", "value"])
        for wl, v in zip(wavelengths, values):
            writer.writerow([repr(float(wl)), repr(float(v))])


def read_spectrum_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(wavelengths_nm, values)`` from a two-column CSV."""
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["wavelength_nm", "value"]:
        raise ValueError(f"{path}: expected header 'wavelength_nm,value'")
    data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=np.float64)
    if data.size == 0:
        return np.zeros(0), np.zeros(0)
    return data[:, 0], data[:, 1]
