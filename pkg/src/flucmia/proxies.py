"""Approximate generation probability from gray-box queries.

Diffusion models: the per-step term is the scaled squared gap between the
forward-process posterior mean (known to the attacker through the noise it
injected) and a Monte-Carlo estimate of the model's reverse-step mean. The
proxy is the negated average of that term over a grid of time steps.

VAEs: the proxy is minus the mean squared reconstruction error over ``N``
reparameterised decodes, minus the closed-form KL of the encoder posterior to
N(0, I).

Batched entry points take inputs shaped ``(B, K, d)``: ``B`` records, each with
``K`` variants (the record and its perturbed neighbours). All ``K`` variants of
a record share that record's noise draws, which come from its own generator.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .genmodels.graybox import DdpmHandle, VaeHandle
from .genmodels.schedule import VarianceSchedule

DEFAULT_STEPS = tuple(range(5, 51, 5))


@dataclass(frozen=True)
class ProxyConfig:
    steps: tuple[int, ...] = DEFAULT_STEPS
    n_mc: int = 5
    n_outer: int = 1
    n_queries: int = 10
    calibrate: bool = False

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(int(t) for t in self.steps))
        if not self.steps:
            raise ValueError("need at least one time step")
        if self.n_mc < 1 or self.n_outer < 1 or self.n_queries < 1:
            raise ValueError("n_mc, n_outer and n_queries must be >= 1")

    def check_steps(self, schedule: VarianceSchedule) -> None:
        for t in self.steps:
            schedule.check_t(t, lo=2)

    def n_components(self, family: str) -> int:
        return len(self.steps) if family == "ddpm" else self.n_queries

    def tag(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ApproxProbability:
    """``value`` is the mean of ``components`` (negated per-step loss terms for
    diffusion models, per-query negated ELBO terms for VAEs)."""

    value: float
    components: np.ndarray = field(repr=False)
    config_tag: str = ""

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("approximate probability is not finite")


# --- diffusion models -------------------------------------------------------

def ddpm_noise(rng: np.random.Generator, n_steps: int, n_outer: int, n_mc: int, d: int):
    """One record's draws: forward noise (N, outer, d) and reverse-step noise (N, outer, n_mc, d)."""
    eps = np.empty((n_steps, n_outer, d))
    z = np.empty((n_steps, n_outer, n_mc, d))
    for k in range(n_steps):
        for o in range(n_outer):
            eps[k, o] = rng.standard_normal(d)
            z[k, o] = rng.standard_normal((n_mc, d))
    return eps, z


def ddpm_loss_terms(handle: DdpmHandle, x0: np.ndarray, steps: Sequence[int], n_mc: int,
                    rngs: Sequence[np.random.Generator], n_outer: int = 1) -> np.ndarray:
    """Per-step loss terms for ``x0`` of shape (B, K, d); returns (B, K, N)."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 3:
        raise ValueError("x0 must be shaped (B, K, d)")
    B, K, d = x0.shape
    if len(rngs) != B:
        raise ValueError("need one generator per record")
    sched = handle.schedule
    for t in steps:
        sched.check_t(t, lo=2)
    draws = [ddpm_noise(r, len(steps), n_outer, n_mc, d) for r in rngs]
    eps_all = np.stack([e for e, _ in draws])      # (B, N, outer, d)
    z_all = np.stack([z for _, z in draws])        # (B, N, outer, n_mc, d)
    out = np.zeros((B, K, len(steps)))
    for k, t in enumerate(steps):
        ab = sched.alpha_bar[t]
        coef = sched.beta[t] / np.sqrt(1.0 - ab)
        inv_two_var = 1.0 / (2.0 * sched.reverse_variance(t))
        acc = np.zeros((B, K))
        for o in range(n_outer):
            eps = eps_all[:, k, o][:, None, :]
            x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
            mu_tilde = (x_t - coef * eps) / np.sqrt(sched.alpha[t])
            mu_hat = np.zeros_like(x_t)
            for m in range(n_mc):
                mu_hat += handle.reverse_step(x_t, t, noise=z_all[:, k, o, m][:, None, :])
            mu_hat /= n_mc
            gap = mu_tilde - mu_hat
            acc += inv_two_var * np.sum(gap * gap, axis=-1)
        out[:, :, k] = acc / n_outer
    return out


def ddpm_loss_term(handle: DdpmHandle, schedule: VarianceSchedule, x0, t: int, n_mc: int,
                   rng: np.random.Generator, n_outer: int = 1) -> float:
    """Single-record, single-step loss term averaged over ``n_outer`` noise draws."""
    schedule.check_t(t, lo=2)
    if handle.schedule is not schedule and not np.array_equal(handle.schedule.beta, schedule.beta):
        raise ValueError("schedule does not match the handle")
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, 1, -1)
    return float(ddpm_loss_terms(handle, x0, [t], n_mc, [rng], n_outer)[0, 0, 0])


def ddpm_prob(handle: DdpmHandle, schedule: VarianceSchedule, x0, config: ProxyConfig,
              rng: np.random.Generator) -> ApproxProbability:
    config.check_steps(schedule)
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, 1, -1)
    losses = ddpm_loss_terms(handle, x0, config.steps, config.n_mc, [rng], config.n_outer)[0, 0]
    comps = -losses
    return ApproxProbability(float(np.mean(comps)), comps, config.tag())


# --- VAEs -------------------------------------------------------------------

def vae_kl(mu, sigma) -> np.ndarray | float:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    kl = 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma), axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def vae_components(handle: VaeHandle, x: np.ndarray, n_queries: int, rngs: Sequence[np.random.Generator],
                   noise: np.ndarray | None = None) -> np.ndarray:
    """Per-query terms ``-||x - x^(n)||^2 - KL`` for ``x`` of shape (B, K, d); returns (B, K, N).

    ``noise`` (B, N, latent) overrides the per-record draws.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("x must be shaped (B, K, d)")
    B = x.shape[0]
    if noise is None:
        if len(rngs) != B:
            raise ValueError("need one generator per record")
        noise = np.stack([r.standard_normal((n_queries, handle.latent_dim)) for r in rngs])
    out = np.empty(x.shape[:2] + (n_queries,))
    for n in range(n_queries):
        mu, sigma, z = handle.encode(x, noise=noise[:, n][:, None, :])
        rec = handle.decode(z)
        out[:, :, n] = -np.sum((x - rec) ** 2, axis=-1) - vae_kl(mu, sigma)
    return out


def vae_prob(handle: VaeHandle, x, config: ProxyConfig, rng: np.random.Generator | None = None,
             noise: np.ndarray | None = None) -> ApproxProbability:
    x = np.asarray(x, dtype=np.float64).reshape(1, 1, -1)
    n = config.n_queries if noise is None else len(noise)
    comps = vae_components(handle, x, n, [rng], None if noise is None else np.asarray(noise)[None])[0, 0]
    return ApproxProbability(float(np.mean(comps)), comps, config.tag())


# --- dispatch and calibration ----------------------------------------------

def components(handle: DdpmHandle | VaeHandle, x: np.ndarray, config: ProxyConfig,
               rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Signed proxy components (B, K, N) for either model family; the proxy value is their mean."""
    if isinstance(handle, DdpmHandle):
        return -ddpm_loss_terms(handle, x, config.steps, config.n_mc, rngs, config.n_outer)
    return vae_components(handle, x, config.n_queries, rngs)


def calibrate(p_target: ApproxProbability, p_reference: ApproxProbability) -> float:
    """Difficulty-calibrated score: target proxy minus reference-model proxy."""
    if p_target.config_tag != p_reference.config_tag:
        raise ValueError("target and reference proxies were computed with different configs")
    return p_target.value - p_reference.value
