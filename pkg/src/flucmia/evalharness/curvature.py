"""Check, on analytic densities, that the average probability drop towards
random neighbours tracks the second derivative of the density."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attacks import fluctuation


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of axis-aligned Gaussians; ``means`` and ``stds`` are (K, d)."""

    weights: tuple[float, ...]
    means: tuple[tuple[float, ...], ...]
    stds: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w <= 0) or not np.isclose(w.sum(), 1.0):
            raise ValueError("mixture weights must be positive and sum to 1")
        m, s = np.asarray(self.means, dtype=np.float64), np.asarray(self.stds, dtype=np.float64)
        if m.shape != s.shape or m.shape[0] != len(w):
            raise ValueError("means/stds must be (K, d) matching the weights")
        if np.any(s <= 0):
            raise ValueError("stds must be positive")

    @classmethod
    def standard_normal(cls, d: int = 1) -> "GaussianMixture":
        return cls((1.0,), ((0.0,) * d,), ((1.0,) * d,))

    @property
    def dim(self) -> int:
        return len(self.means[0])

    def _parts(self, x):
        x = np.asarray(x, dtype=np.float64)
        m = np.asarray(self.means)
        s = np.asarray(self.stds)
        u = (x[..., None, :] - m) / s                                  # (..., K, d)
        norm = np.prod(s, axis=-1) * (2.0 * np.pi) ** (self.dim / 2.0)
        comp = np.asarray(self.weights) * np.exp(-0.5 * np.sum(u * u, axis=-1)) / norm
        return comp, u, s

    def pdf(self, x) -> np.ndarray:
        return self._parts(x)[0].sum(axis=-1)

    def laplacian(self, x) -> np.ndarray:
        """Trace of the Hessian of the density."""
        comp, u, s = self._parts(x)
        return np.sum(comp * np.sum((u * u - 1.0) / (s * s), axis=-1), axis=-1)


@dataclass(frozen=True)
class DirectionalCurvatureProbe:
    density: GaussianMixture
    x: tuple[float, ...]
    sigma_z: float
    n_samples: int = 100_000

    def __post_init__(self):
        if self.sigma_z <= 0:
            raise ValueError("sigma_z must be positive")
        if len(self.x) != self.density.dim:
            raise ValueError("probe point dimension does not match the density")


def _shifts(probe: DirectionalCurvatureProbe, rng: np.random.Generator) -> np.ndarray:
    # antithetic pairs: every shift z is used together with -z
    half = (probe.n_samples + 1) // 2
    z = probe.sigma_z * rng.standard_normal((half, probe.density.dim))
    return np.concatenate([z, -z])[: max(2, 2 * half)]


def curvature_probe(probe: DirectionalCurvatureProbe, rng: np.random.Generator) -> tuple[float, float]:
    """Return (MC estimate of E[p(x+z)] - p(x), 0.5 * sigma_z^2 * tr H_p(x))."""
    x = np.asarray(probe.x, dtype=np.float64)
    p0 = float(probe.density.pdf(x))
    mc = float(np.mean(probe.density.pdf(x + _shifts(probe, rng))) - p0)
    analytic = 0.5 * probe.sigma_z ** 2 * float(probe.density.laplacian(x))
    return mc, analytic


def neighbour_fluctuations(probe: DirectionalCurvatureProbe, rng: np.random.Generator) -> np.ndarray:
    """(M, 1) fluctuation matrix of the exact density at ``x`` against shifted
    neighbours; same draws as ``curvature_probe`` for the same generator state."""
    x = np.asarray(probe.x, dtype=np.float64)
    p0 = float(probe.density.pdf(x))
    return fluctuation(p0, probe.density.pdf(x + _shifts(probe, rng)))[:, None]
