"""Toy generative models behind a gray-box query interface."""
from .graybox import DdpmHandle, VaeHandle, handle_for
from .models import ToyDDPM, ToyVAE, time_embedding
from .schedule import VarianceSchedule, diffuse_forward, make_schedule, posterior_mean, posterior_mean_from_eps
from .training import Checkpoint, CheckpointSeries, TrainConfig, fit, train_ddpm, train_vae


def ddpm_reverse_step(handle: DdpmHandle, x_t, t, rng=None, noise=None):
    return handle.reverse_step(x_t, t, rng=rng, noise=noise)


def vae_encode(handle: VaeHandle, x, rng=None, noise=None):
    return handle.encode(x, rng=rng, noise=noise)


def vae_decode(handle: VaeHandle, z):
    return handle.decode(z)


__all__ = [
    "Checkpoint", "CheckpointSeries", "DdpmHandle", "ToyDDPM", "ToyVAE", "TrainConfig", "VaeHandle",
    "VarianceSchedule", "ddpm_reverse_step", "diffuse_forward", "fit", "handle_for", "make_schedule",
    "posterior_mean", "posterior_mean_from_eps", "time_embedding", "train_ddpm", "train_vae",
    "vae_decode", "vae_encode",
]
