"""Toy DDPM (noise-predicting MLP) and toy Gaussian VAE, with exact gradients
of their training objectives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import MlpParams, init_mlp, mlp_apply, mlp_grad, params_digest, sigmoid, softplus
from .schedule import VarianceSchedule, make_schedule

SIGMA_FLOOR = 1e-6


def time_embedding(t, n_features: int = 8, max_period: float = 10_000.0) -> np.ndarray:
    """Sinusoidal features of integer time steps; shape ``t.shape + (n_features,)``."""
    t = np.asarray(t, dtype=np.float64)
    half = n_features // 2
    freqs = max_period ** (-np.arange(half) / half)
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


@dataclass
class ToyDDPM:
    """Noise predictor ``eps(x_t, t)``.

    With ``sigma_data`` set, the net output ``f`` enters through a fixed skip:
    the clean-record estimate is ``c_skip x_t + c_out f`` (variance-preserving
    preconditioning for data of scale ``sigma_data``) and ``eps`` follows from
    it in closed form. A 64-wide output layer cannot carry the full-rank part
    of ``eps`` on its own; ``sigma_data=None`` gives the plain net.
    """

    schedule: VarianceSchedule
    denoiser: MlpParams
    emb_dim: int = 8
    sigma_data: float | None = 0.5

    family = "ddpm"

    def __post_init__(self):
        if self.sigma_data is not None and self.sigma_data <= 0:
            raise ValueError("sigma_data must be positive")
        if self.denoiser.input_dim != self.data_dim + self.emb_dim:
            raise ValueError("denoiser input must be data dim + embedding dim")

    @property
    def data_dim(self) -> int:
        return self.denoiser.output_dim

    @classmethod
    def init(cls, rng: np.random.Generator, data_dim: int, T: int = 100, beta_start: float = 1e-3,
             beta_end: float = 0.2, hidden: int = 64, depth: int = 2, emb_dim: int = 8,
             sigma_data: float | None = 0.5) -> "ToyDDPM":
        dims = [data_dim + emb_dim] + [hidden] * depth + [data_dim]
        return cls(make_schedule(T, beta_start, beta_end), init_mlp(rng, dims), emb_dim, sigma_data)

    def _skip_coefs(self, t, shape) -> tuple[np.ndarray, np.ndarray]:
        """(a, b) with ``eps = a * x_t + b * f``."""
        t = np.broadcast_to(np.asarray(t), shape[:-1])
        ab = self.schedule.alpha_bar[t][..., None]
        s, sig, sd2 = np.sqrt(ab), np.sqrt(1.0 - ab), self.sigma_data ** 2
        den2 = ab * sd2 + (1.0 - ab)
        c_skip = s * sd2 / den2
        c_out = sig * np.sqrt(sd2 / den2)
        return (1.0 - s * c_skip) / sig, -s * c_out / sig

    def _inputs(self, x_t: np.ndarray, t) -> np.ndarray:
        t = np.broadcast_to(np.asarray(t), x_t.shape[:-1])
        return np.concatenate([x_t, time_embedding(t, self.emb_dim)], axis=-1)

    def predict_eps(self, x_t, t) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.shape[-1] != self.data_dim:
            raise ValueError(f"expected data dim {self.data_dim}, got {x_t.shape[-1]}")
        out = mlp_apply(self.denoiser, self._inputs(x_t, t))
        if self.sigma_data is None:
            return out
        a, b = self._skip_coefs(t, x_t.shape)
        return a * x_t + b * out

    def draw(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        return {"t": rng.integers(1, self.schedule.T + 1, size=n),
                "eps": rng.standard_normal((n, self.data_dim))}

    def record_losses(self, x0: np.ndarray, draws: dict[str, np.ndarray]) -> np.ndarray:
        t, eps = draws["t"], draws["eps"]
        ab = self.schedule.alpha_bar[t][:, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        err = self.predict_eps(x_t, t) - eps
        return np.mean(err * err, axis=-1)

    def loss_and_grads(self, x0: np.ndarray, draws: dict[str, np.ndarray]) -> tuple[float, list[MlpParams]]:
        """Batch-mean noise-prediction MSE and its gradient."""
        t, eps = draws["t"], draws["eps"]
        ab = self.schedule.alpha_bar[t][:, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        inp = self._inputs(x_t, t)
        out = mlp_apply(self.denoiser, inp)
        scale = 1.0
        if self.sigma_data is not None:
            a, scale = self._skip_coefs(t, x_t.shape)
            out = a * x_t + scale * out
        err = out - eps
        loss = float(np.mean(err * err))
        grads, _ = mlp_grad(self.denoiser, inp, scale * 2.0 * err / err.size)
        return loss, [grads]

    def nets(self) -> list[MlpParams]:
        return [self.denoiser]

    def copy(self) -> "ToyDDPM":
        return ToyDDPM(self.schedule, self.denoiser.copy(), self.emb_dim, self.sigma_data)

    def meta(self) -> dict:
        return {"family": self.family, "T": self.schedule.T, "beta_start": self.schedule.beta_start,
                "beta_end": self.schedule.beta_end, "emb_dim": self.emb_dim, "sigma_data": self.sigma_data,
                "denoiser_activations": list(self.denoiser.activations)}

    def digest(self) -> str:
        return params_digest(*self.denoiser.arrays(), meta=repr(sorted(self.meta().items())).encode())


@dataclass
class ToyVAE:
    encoder: MlpParams
    decoder: MlpParams

    family = "vae"

    def __post_init__(self):
        if self.encoder.output_dim != 2 * self.latent_dim:
            raise ValueError("encoder must output (mu, raw sigma) of the latent size")
        if self.encoder.input_dim != self.decoder.output_dim:
            raise ValueError("encoder input and decoder output dims differ")

    @property
    def latent_dim(self) -> int:
        return self.decoder.input_dim

    @property
    def data_dim(self) -> int:
        return self.decoder.output_dim

    @classmethod
    def init(cls, rng: np.random.Generator, data_dim: int, latent_dim: int = 8, hidden: int = 64,
             depth: int = 2) -> "ToyVAE":
        enc = init_mlp(rng, [data_dim] + [hidden] * depth + [2 * latent_dim])
        dec = init_mlp(rng, [latent_dim] + [hidden] * depth + [data_dim])
        return cls(enc, dec)

    def encode(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.data_dim:
            raise ValueError(f"expected data dim {self.data_dim}, got {x.shape[-1]}")
        out = mlp_apply(self.encoder, x)
        k = self.latent_dim
        return out[..., :k], softplus(out[..., k:]) + SIGMA_FLOOR

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {z.shape[-1]}")
        return mlp_apply(self.decoder, z)

    def draw(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        return {"u": rng.standard_normal((n, self.latent_dim))}

    def record_losses(self, x: np.ndarray, draws: dict[str, np.ndarray]) -> np.ndarray:
        mu, sigma = self.encode(x)
        rec = self.decode(mu + sigma * draws["u"])
        kl = 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma), axis=-1)
        return np.sum((x - rec) ** 2, axis=-1) + kl

    def loss_and_grads(self, x: np.ndarray, draws: dict[str, np.ndarray]) -> tuple[float, list[MlpParams]]:
        """Batch mean of squared reconstruction error plus KL to N(0, I)."""
        u = draws["u"]
        n = x.shape[0]
        k = self.latent_dim
        enc_out = mlp_apply(self.encoder, x)
        mu, raw = enc_out[:, :k], enc_out[:, k:]
        sigma = softplus(raw) + SIGMA_FLOOR
        z = mu + sigma * u
        rec = mlp_apply(self.decoder, z)
        diff = rec - x
        kl = 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma), axis=-1)
        loss = float(np.mean(np.sum(diff * diff, axis=-1) + kl))
        dec_grads, dz = mlp_grad(self.decoder, z, 2.0 * diff / n)
        dmu = dz + mu / n
        dsigma = dz * u + (sigma - 1.0 / sigma) / n
        enc_grads, _ = mlp_grad(self.encoder, x, np.concatenate([dmu, dsigma * sigmoid(raw)], axis=1))
        return loss, [enc_grads, dec_grads]

    def nets(self) -> list[MlpParams]:
        return [self.encoder, self.decoder]

    def copy(self) -> "ToyVAE":
        return ToyVAE(self.encoder.copy(), self.decoder.copy())

    def meta(self) -> dict:
        return {"family": self.family, "latent_dim": self.latent_dim,
                "encoder_activations": list(self.encoder.activations),
                "decoder_activations": list(self.decoder.activations)}

    def digest(self) -> str:
        arrays = self.encoder.arrays() + self.decoder.arrays()
        return params_digest(*arrays, meta=repr(sorted(self.meta().items())).encode())
