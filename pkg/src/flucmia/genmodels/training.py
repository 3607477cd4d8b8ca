"""Minibatch AdamW training with periodic loss tracking, snapshots and an
early-stop marker."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from ..numerics import OptimizerState, make_rng, optimizer_step
from .models import ToyDDPM, ToyVAE

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2
    patience: int = 5
    smooth: int = 3
    eval_every: int = 1
    eval_draws: int = 4
    snapshot_every: int = 1
    stop_at_marker: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if min(self.patience, self.smooth, self.eval_every, self.eval_draws, self.snapshot_every) < 1:
            raise ValueError("patience, smooth, eval_every, eval_draws and snapshot_every must be >= 1")


@dataclass
class Checkpoint:
    epoch: int
    model: ToyDDPM | ToyVAE
    train_loss: float
    eval_loss: float

    @property
    def digest(self) -> str:
        return self.model.digest()


@dataclass
class CheckpointSeries:
    checkpoints: list[Checkpoint]
    train_curve: list[float] = field(default_factory=list)
    eval_curve: list[float] = field(default_factory=list)
    early_stop_epoch: int = 0
    curve_epochs: list[int] | None = None

    def __post_init__(self):
        if self.curve_epochs is None:
            self.curve_epochs = list(range(len(self.eval_curve)))
        if not (len(self.curve_epochs) == len(self.train_curve) == len(self.eval_curve)):
            raise ValueError("loss curves and their epochs differ in length")
        epochs = [c.epoch for c in self.checkpoints]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("checkpoint epochs must be strictly increasing")
        if epochs and self.early_stop_epoch > epochs[-1]:
            raise ValueError("early-stop marker beyond last epoch")

    @property
    def epochs(self) -> list[int]:
        return [c.epoch for c in self.checkpoints]

    def at(self, epoch: int) -> Checkpoint:
        for c in self.checkpoints:
            if c.epoch == epoch:
                return c
        raise KeyError(f"no checkpoint at epoch {epoch}")

    def early_stopped(self) -> Checkpoint:
        return self.at(self.early_stop_epoch)

    def last(self) -> Checkpoint:
        return self.checkpoints[-1]

    def digest(self) -> str:
        h = hashlib.sha256(f"marker={self.early_stop_epoch}".encode())
        for c in self.checkpoints:
            h.update(f"{c.epoch}:{c.digest}".encode())
        return h.hexdigest()


def smoothed(curve, window: int) -> np.ndarray:
    """Trailing mean over ``window`` epochs (shorter at the start)."""
    curve = np.asarray(curve, dtype=np.float64)
    out = np.empty_like(curve)
    for i in range(len(curve)):
        out[i] = curve[max(0, i - window + 1): i + 1].mean()
    return out


def _fixed_draws(model, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    d = model.draw(rng, n)
    if "t" in d:
        # every time step equally often, so train and eval estimates see the same mix
        T = model.schedule.T
        d["t"] = rng.permutation(np.resize(np.arange(1, T + 1), n))
    return d


def fit(model: ToyDDPM | ToyVAE, member_x: np.ndarray, eval_x: np.ndarray, cfg: TrainConfig,
        rng: np.random.Generator) -> CheckpointSeries:
    """Train ``model`` in place and return its checkpoint series.

    Losses on both sets are estimated every ``eval_every`` epochs with noise
    drawn once up front, so the curves move only because the parameters move.
    ``patience`` and ``smooth`` count loss evaluations. The early-stop marker is
    the best smoothed-eval epoch at the moment ``patience`` evaluations pass
    without improvement; it stays at the last epoch if that never happens.
    """
    member_x = np.asarray(member_x, dtype=np.float64)
    eval_x = np.asarray(eval_x, dtype=np.float64)
    if len(member_x) == 0:
        raise ValueError("empty member set")
    seeds = rng.integers(0, 2**63 - 1, size=3)
    shuffle_rng, noise_rng = make_rng(int(seeds[0])), make_rng(int(seeds[1]))
    fixed_rng = make_rng(int(seeds[2]))
    train_draws = [_fixed_draws(model, fixed_rng, len(member_x)) for _ in range(cfg.eval_draws)]
    eval_draws = [_fixed_draws(model, fixed_rng, len(eval_x)) for _ in range(cfg.eval_draws)]

    def losses() -> tuple[float, float]:
        tr = float(np.mean([model.record_losses(member_x, d).mean() for d in train_draws]))
        ev = float(np.mean([model.record_losses(eval_x, d).mean() for d in eval_draws])) if len(eval_x) else tr
        if not (np.isfinite(tr) and np.isfinite(ev)):
            raise TrainingError(f"non-finite loss estimate at epoch {epoch}")
        return tr, ev

    opt = OptimizerState.for_params(model.nets(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
                                    weight_decay=cfg.weight_decay)
    epoch = 0
    tr, ev = losses()
    train_curve, eval_curve, curve_epochs = [tr], [ev], [0]
    snaps = [Checkpoint(0, model.copy(), tr, ev)]
    best_val, best_epoch, best_snap = np.inf, 0, snaps[0]
    since_best = 0
    marker = None
    n = len(member_x)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(member_x[idx], model.draw(noise_rng, len(idx)))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            optimizer_step(model.nets(), grads, opt)
        evaluate = epoch % cfg.eval_every == 0 or epoch == cfg.epochs
        snapshot = epoch % cfg.snapshot_every == 0 or epoch == cfg.epochs
        if not (evaluate or snapshot):
            continue
        tr, ev = losses()
        snap = Checkpoint(epoch, model.copy(), tr, ev) if snapshot else None
        if snap is not None:
            snaps.append(snap)
        if not evaluate:
            continue
        train_curve.append(tr)
        eval_curve.append(ev)
        curve_epochs.append(epoch)
        if marker is None:
            s = smoothed(eval_curve, cfg.smooth)[-1]
            if s < best_val:
                best_val, best_epoch, since_best = s, epoch, 0
                best_snap = snap or Checkpoint(epoch, model.copy(), tr, ev)
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    marker = best_epoch
                    log.info("early-stop marker at epoch %d", marker)
                    if cfg.stop_at_marker:
                        if snaps[-1].epoch != epoch:
                            snaps.append(Checkpoint(epoch, model.copy(), tr, ev))
                        break
    if marker is None:
        marker = snaps[-1].epoch
    elif marker not in {c.epoch for c in snaps}:
        snaps.append(best_snap)
        snaps.sort(key=lambda c: c.epoch)
    return CheckpointSeries(snaps, train_curve, eval_curve, marker, curve_epochs)


def train_ddpm(member_x: np.ndarray, eval_x: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
               **model_kw) -> CheckpointSeries:
    model = ToyDDPM.init(rng, np.asarray(member_x).shape[-1], **model_kw)
    return fit(model, member_x, eval_x, cfg, rng)


def train_vae(member_x: np.ndarray, eval_x: np.ndarray, cfg: TrainConfig, rng: np.random.Generator,
              **model_kw) -> CheckpointSeries:
    model = ToyVAE.init(rng, np.asarray(member_x).shape[-1], **model_kw)
    return fit(model, member_x, eval_x, cfg, rng)
