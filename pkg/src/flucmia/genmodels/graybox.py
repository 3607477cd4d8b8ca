"""Query-only wrappers around trained models.

A handle exposes what a gray-box service would: one reverse denoising step for
a diffusion model, encode/decode for a VAE. The wrapped model lives in a
closure, not an attribute, and each query adds the number of queried records
to ``queries``.

Sampling queries take either an ``rng`` or explicit standard-normal ``noise``;
the latter stands in for a client-supplied generator seed and is how callers
share noise across several inputs.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .models import ToyDDPM, ToyVAE
from .schedule import VarianceSchedule


def _rows(x: np.ndarray) -> int:
    return int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1


def _noise(shape, rng, noise) -> np.ndarray:
    if (rng is None) == (noise is None):
        raise ValueError("pass exactly one of rng or noise")
    if noise is None:
        return rng.standard_normal(shape)
    noise = np.asarray(noise, dtype=np.float64)
    return np.broadcast_to(noise, np.broadcast_shapes(noise.shape, shape))


class DdpmHandle:
    __slots__ = ("_step", "schedule", "data_dim", "queries")

    def __init__(self, model: ToyDDPM, zero_variance: bool = False):
        self._init(model.schedule, model.data_dim, model.predict_eps, zero_variance)

    @classmethod
    def from_predictor(cls, schedule: VarianceSchedule, data_dim: int,
                       predict_eps: Callable[[np.ndarray, int], np.ndarray], zero_variance: bool = False):
        """Handle around an arbitrary noise predictor (used for oracle tests)."""
        self = cls.__new__(cls)
        self._init(schedule, data_dim, predict_eps, zero_variance)
        return self

    def _init(self, schedule, data_dim, predict_eps, zero_variance):
        def step(x_t, t, z):
            eps = predict_eps(x_t, t)
            coef = schedule.beta[t] / np.sqrt(1.0 - schedule.alpha_bar[t])
            mean = (x_t - coef * eps) / np.sqrt(schedule.alpha[t])
            if zero_variance:
                return mean
            return mean + np.sqrt(schedule.reverse_variance(t)) * z

        self._step = step
        self.schedule = schedule
        self.data_dim = int(data_dim)
        self.queries = 0

    def reverse_step(self, x_t, t: int, rng: np.random.Generator | None = None, noise=None) -> np.ndarray:
        """Draw x_{t-1} ~ N(mean(x_t, t), sigma_t^2 I) for each row of ``x_t``."""
        t = self.schedule.check_t(t)
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape[-1] != self.data_dim:
            raise ValueError(f"expected data dim {self.data_dim}, got {x_t.shape[-1]}")
        z = _noise(x_t.shape, rng, noise)
        self.queries += _rows(x_t)
        return self._step(x_t, t, z)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral sampling from pure noise, built only from reverse-step queries."""
        x = rng.standard_normal((n, self.data_dim))
        for t in range(self.schedule.T, 0, -1):
            x = self.reverse_step(x, t, noise=np.zeros(1) if t == 1 else rng.standard_normal(x.shape))
        return x


class VaeHandle:
    __slots__ = ("_encode", "_decode", "latent_dim", "data_dim", "queries")

    def __init__(self, model: ToyVAE):
        self._init(model.encode, model.decode, model.latent_dim, model.data_dim)

    @classmethod
    def from_functions(cls, encode, decode, latent_dim: int, data_dim: int):
        self = cls.__new__(cls)
        self._init(encode, decode, latent_dim, data_dim)
        return self

    def _init(self, encode, decode, latent_dim, data_dim):
        self._encode = encode
        self._decode = decode
        self.latent_dim = int(latent_dim)
        self.data_dim = int(data_dim)
        self.queries = 0

    def encode(self, x, rng: np.random.Generator | None = None, noise=None):
        """Return (mu, sigma, z) with z = mu + sigma * noise."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.data_dim:
            raise ValueError(f"expected data dim {self.data_dim}, got {x.shape[-1]}")
        mu, sigma = self._encode(x)
        u = _noise(mu.shape, rng, noise)
        self.queries += _rows(x)
        return mu, sigma, mu + sigma * u

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {z.shape[-1]}")
        self.queries += _rows(z)
        return self._decode(z)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.decode(rng.standard_normal((n, self.latent_dim)))


def handle_for(model: ToyDDPM | ToyVAE) -> DdpmHandle | VaeHandle:
    return DdpmHandle(model) if isinstance(model, ToyDDPM) else VaeHandle(model)
