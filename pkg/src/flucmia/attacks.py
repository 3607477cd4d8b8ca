"""Fluctuation-based membership scores, the shadow-trained classifier, and baselines."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import TrainingError
from .genmodels.graybox import DdpmHandle, VaeHandle
from .numerics import MlpParams, OptimizerState, init_mlp, make_rng, mlp_apply, mlp_grad, optimizer_step, \
    params_digest, sigmoid
from .perturb import PerturbationMechanism, neighbor_stack
from .proxies import ProxyConfig, components

log = logging.getLogger(__name__)

FLUCTUATION_FLOOR = 1e-8
# stream keys for make_rng(seed, record_id, STREAM)
PROXY_STREAM = 1
RANDOM_PROXY_STREAM = 2

Handle = DdpmHandle | VaeHandle


def fluctuation(p_x, p_neighbor, floor: float = FLUCTUATION_FLOOR):
    """Relative proxy drop from a record to its neighbour; positive when the
    record is the more probable of the two."""
    p_x = np.asarray(p_x, dtype=np.float64)
    out = (p_x - np.asarray(p_neighbor, dtype=np.float64)) / np.maximum(np.abs(p_x), floor)
    return float(out) if out.ndim == 0 else out


def record_rngs(seed: int, ids: Sequence[int], stream: int = PROXY_STREAM) -> list[np.random.Generator]:
    return [make_rng(seed, int(i), stream) for i in ids]


@dataclass
class ProxyRun:
    """Proxy components for records and their neighbours, shape (B, 1 + M, N)."""

    comps: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """Proxy value of each record itself, (B,)."""
        return self.comps[:, 0].mean(axis=-1)

    def matrices(self, floor: float = FLUCTUATION_FLOOR) -> np.ndarray:
        """(B, M, N) fluctuation matrices.

        Entry (j, k) is the k-th component drop from the record to neighbour j,
        divided by the magnitude of the record's aggregate proxy, so the grand
        mean of a matrix is the mean over neighbours of the aggregate fluctuation.
        """
        base = self.comps[:, :1, :]
        norm = np.maximum(np.abs(self.values), floor)[:, None, None]
        return (base - self.comps[:, 1:, :]) / norm


def proxy_run(handle: Handle, X: np.ndarray, ids: Sequence[int], proxy: ProxyConfig,
              mech: PerturbationMechanism, schedule, seed: int, reference: Handle | None = None,
              random_proxy: bool = False, batch: int = 64) -> ProxyRun:
    """Proxy components of each record in ``X`` and of its perturbed neighbours.

    Noise is drawn per record from ``(seed, record id)`` and shared by the
    record, its neighbours, and (with calibration) the reference model.
    """
    X = np.asarray(X, dtype=np.float64)
    n_comp = proxy.n_components("ddpm" if isinstance(handle, DdpmHandle) else "vae")
    if random_proxy:
        out = np.empty((len(X), 1 + len(schedule), n_comp))
        for b, r in enumerate(record_rngs(seed, ids, RANDOM_PROXY_STREAM)):
            out[b] = -np.exp(r.standard_normal(out.shape[1:]))
        return ProxyRun(out)
    parts = []
    for start in range(0, len(X), batch):
        sl = slice(start, start + batch)
        stack = neighbor_stack(X[sl], mech, schedule)
        c = components(handle, stack, proxy, record_rngs(seed, ids[sl]))
        if reference is not None and proxy.calibrate:
            c = c - components(reference, stack, proxy, record_rngs(seed, ids[sl]))
        parts.append(c)
    return ProxyRun(np.concatenate(parts, axis=0))


def fluctuation_matrix(handle: Handle, proxy: ProxyConfig, x, mech: PerturbationMechanism, schedule,
                       seed: int, record_id: int = 0) -> np.ndarray:
    """(M, N) fluctuation matrix of one record."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return proxy_run(handle, x, [record_id], proxy, mech, schedule, seed).matrices()[0]


def pfami_met_score(matrix) -> float | np.ndarray:
    """Grand mean of a fluctuation matrix; also accepts a (B, M, N) batch."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.size == 0:
        raise ValueError("empty fluctuation matrix")
    if m.ndim == 2:
        return float(m.mean())
    return m.mean(axis=(-2, -1))


# --- NN-based inference -----------------------------------------------------

@dataclass
class AttackConfig:
    """Dense-net classifier settings.

    Each of ``n_bags`` nets holds out a random ``val_fraction`` of the shadow
    matrices and keeps the parameters of its best held-out epoch; the nets'
    probabilities are averaged. ``n_bags=1, val_fraction=0`` is plain training.
    """

    hidden: int = 64
    epochs: int = 300
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-2
    shadow_per_class: int = 200
    val_fraction: float = 0.25
    n_bags: int = 5

    def __post_init__(self):
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if min(self.hidden, self.epochs, self.batch_size, self.n_bags, self.shadow_per_class) < 1:
            raise ValueError("hidden, epochs, batch_size, n_bags and shadow_per_class must be >= 1")


@dataclass
class AttackClassifier:
    params: list[MlpParams]
    input_shape: tuple[int, int]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    threshold: float = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.params, MlpParams):
            self.params = [self.params]

    def _features(self, matrices) -> np.ndarray:
        m = np.asarray(matrices, dtype=np.float64)
        if m.shape[-2:] != tuple(self.input_shape):
            raise ValueError(f"matrix shape {m.shape[-2:]} != classifier input {tuple(self.input_shape)}")
        flat = m.reshape(m.shape[:-2] + (-1,))
        return (flat - self.feature_mean) / self.feature_std

    def logits(self, matrices) -> np.ndarray:
        """Per-net logits, shape (n_nets, ...)."""
        f = self._features(matrices)
        return np.stack([mlp_apply(p, f)[..., 0] for p in self.params])

    def probability(self, matrices) -> np.ndarray:
        return sigmoid(self.logits(matrices)).mean(axis=0)

    def digest(self) -> str:
        arrays = [a for p in self.params for a in p.arrays()]
        return params_digest(*arrays, self.feature_mean, self.feature_std, meta=repr(self.input_shape).encode())


def pfami_nns_score(classifier: AttackClassifier, matrix):
    """Classifier membership probability in [0, 1]."""
    p = classifier.probability(matrix)
    return float(p) if np.ndim(p) == 0 else p


def best_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Threshold maximising accuracy of ``score >= tau`` on the given data."""
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    n_neg = len(y) - y.sum()
    acc = (tp + (n_neg - fp)) / len(y)
    last = np.r_[s[1:] != s[:-1], True]  # only cut between distinct scores
    acc = np.where(last, acc, -1.0)
    i = int(np.argmax(acc))
    if acc[i] < n_neg / len(y):
        return float(np.inf)
    return float(s[i])


def _bce(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    logit = mlp_apply(params, x)[:, 0]
    return float(np.mean(np.logaddexp(0.0, logit) - y * logit))


def _fit_net(feats: np.ndarray, labels: np.ndarray, cfg: AttackConfig, rng: np.random.Generator) -> MlpParams:
    n = len(feats)
    perm = rng.permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    val, train = perm[:n_val], perm[n_val:]
    if n_val and (len(np.unique(labels[val])) < 2 or len(np.unique(labels[train])) < 2):
        raise TrainingError("held-out split of the attack data lost a class")
    params = init_mlp(rng, [feats.shape[1], cfg.hidden, cfg.hidden, 1])
    opt = OptimizerState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    best, best_arrays = np.inf, None
    for _ in range(cfg.epochs):
        order = rng.permutation(train)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logit = mlp_apply(params, feats[idx])[:, 0]
            # d BCE / d logit = sigmoid(logit) - y
            g = (sigmoid(logit) - labels[idx]) / len(idx)
            grads, _ = mlp_grad(params, feats[idx], g[:, None])
            optimizer_step(params, grads, opt)
        if n_val:
            loss = _bce(params, feats[val], labels[val])
            if loss < best:
                best, best_arrays = loss, [a.copy() for a in params.arrays()]
    if best_arrays is not None:
        for a, b in zip(params.arrays(), best_arrays):
            a[...] = b
    return params


def fit_classifier(matrices: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                   rng: np.random.Generator) -> AttackClassifier:
    """Binary cross-entropy training of dense nets on flattened, standardised matrices."""
    matrices = np.asarray(matrices, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if len(np.unique(labels)) < 2:
        raise TrainingError("attack training data holds a single class")
    n, M, N = matrices.shape
    flat = matrices.reshape(n, M * N)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    feats = (flat - mean) / std
    nets = [_fit_net(feats, labels, cfg, rng) for _ in range(cfg.n_bags)]
    clf = AttackClassifier(nets, (M, N), mean, std)
    clf.threshold = best_threshold(pfami_nns_score(clf, matrices), labels.astype(np.int64))
    clf.meta = {"n_train": int(n), "epochs": cfg.epochs, "n_bags": cfg.n_bags, "val_fraction": cfg.val_fraction}
    return clf


def train_attack_classifier(shadow: Handle, X_member: np.ndarray, ids_member: Sequence[int],
                            X_nonmember: np.ndarray, ids_nonmember: Sequence[int], proxy: ProxyConfig,
                            mech: PerturbationMechanism, schedule, cfg: AttackConfig, seed: int,
                            reference: Handle | None = None) -> AttackClassifier:
    """Fluctuation matrices of shadow members/non-members, then ``fit_classifier``."""
    k = cfg.shadow_per_class
    X = np.concatenate([np.asarray(X_member)[:k], np.asarray(X_nonmember)[:k]])
    ids = list(ids_member[:k]) + list(ids_nonmember[:k])
    labels = np.r_[np.ones(min(k, len(X_member))), np.zeros(min(k, len(X_nonmember)))]
    mats = proxy_run(shadow, X, ids, proxy, mech, schedule, seed, reference=reference).matrices()
    clf = fit_classifier(mats, labels, cfg, make_rng(seed, 0xA77AC4))
    clf.meta["shadow_per_class"] = k
    clf.meta["seed"] = int(seed)
    return clf


# --- baselines --------------------------------------------------------------

def baseline_prob_threshold(p_hat, p_reference=None):
    """Score equal to the proxy itself, optionally minus a reference-model proxy."""
    p = np.asarray(p_hat, dtype=np.float64)
    if p_reference is not None:
        p = p - np.asarray(p_reference, dtype=np.float64)
    return float(p) if p.ndim == 0 else p


def _distances(x, synthetic) -> np.ndarray:
    s = np.asarray(synthetic, dtype=np.float64)
    if s.ndim != 2 or len(s) == 0:
        raise ValueError("synthetic set must be a non-empty (n, d) array")
    x = np.asarray(x, dtype=np.float64)
    rows = x.reshape(-1, x.shape[-1])
    out = np.empty((len(rows), len(s)))
    for start in range(0, len(rows), 16):
        diff = rows[start:start + 16, None, :] - s[None]
        out[start:start + 16] = np.sqrt(np.sum(diff * diff, axis=-1))
    return out.reshape(x.shape[:-1] + (len(s),))


def baseline_min_distance(x, synthetic):
    d = _distances(x, synthetic)
    out = -np.min(d, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def baseline_mc_fraction(x, synthetic, eps_radius: float):
    d = _distances(x, synthetic)
    out = np.mean(d <= eps_radius, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class AttackScore:
    record_id: int
    method: str
    score: float
    decision: int | None = None

    def __post_init__(self):
        if self.decision is not None and self.decision not in (0, 1):
            raise ValueError("decision must be 0 or 1")


def decide(scores, tau: float) -> np.ndarray:
    return (np.asarray(scores) >= tau).astype(np.int64)
