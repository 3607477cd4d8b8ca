"""Linear variance schedule and closed-form diffusion algebra."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VarianceSchedule:
    """Per-step tables indexed by t = 1..T; index 0 holds the t = 0 convention
    (beta = 0, alpha_bar = 1)."""

    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray

    def check_t(self, t: int, lo: int = 1) -> int:
        t = int(t)
        if not lo <= t <= self.T:
            raise ValueError(f"time step {t} outside [{lo}, {self.T}]")
        return t

    def reverse_variance(self, t: int) -> float:
        # beta_tilde_1 is 0, so the first step falls back to beta_1
        t = self.check_t(t)
        return float(self.beta[1]) if t == 1 else float(self.beta_tilde[t])


def make_schedule(T: int, beta_start: float, beta_end: float) -> VarianceSchedule:
    if T < 2:
        raise ValueError("T must be >= 2")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    beta_tilde = np.zeros(T + 1)
    beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    for a in (beta, alpha, alpha_bar, beta_tilde):
        a.setflags(write=False)
    return VarianceSchedule(int(T), float(beta_start), float(beta_end), beta, alpha, alpha_bar, beta_tilde)


def diffuse_forward(schedule: VarianceSchedule, x0, t: int, eps) -> np.ndarray:
    t = schedule.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError("eps must have the shape of x0")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_mean(schedule: VarianceSchedule, x0, x_t, t: int) -> np.ndarray:
    """Mean of q(x_{t-1} | x_t, x_0); at t = 1 the posterior is a point mass at x_0."""
    t = schedule.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    if t == 1:
        return x0.copy()
    ab, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    c0 = np.sqrt(ab_prev) * schedule.beta[t] / (1.0 - ab)
    ct = np.sqrt(schedule.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * x0 + ct * x_t


def posterior_mean_from_eps(schedule: VarianceSchedule, x_t, t: int, eps) -> np.ndarray:
    """Same mean written through the noise that produced ``x_t``."""
    t = schedule.check_t(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    coef = schedule.beta[t] / np.sqrt(1.0 - schedule.alpha_bar[t])
    return (x_t - coef * eps) / np.sqrt(schedule.alpha[t])
