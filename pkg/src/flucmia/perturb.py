"""Neighbour records via perturbation mechanisms of graded strength.

``lam`` is the fraction preserved: ``lam == 1`` is the identity and smaller
values perturb more. Geometric image operations are linear in the pixels, so
each (mechanism, side, lam) is compiled once into a ``d x d`` resampling matrix
built with bilinear interpolation and zero fill outside the frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .datasets import DataRecord

IMAGE_KINDS = ("crop", "rotation", "downsampling", "brightness", "contrast")
VECTOR_KINDS = ("shrink-to-centroid", "additive-direction")


@dataclass(frozen=True)
class PerturbationMechanism:
    kind: str = "crop"
    side: int | None = None
    theta_max: float = 30.0
    centroid: tuple[float, ...] | None = None
    direction: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in IMAGE_KINDS + VECTOR_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind in ("crop", "rotation", "downsampling") and not self.side:
            raise ValueError(f"{self.kind} needs the image side length")
        if self.kind == "shrink-to-centroid" and self.centroid is None:
            raise ValueError("shrink-to-centroid needs a centroid")
        if self.kind == "additive-direction":
            if self.direction is None:
                raise ValueError("additive-direction needs a direction")
            u = np.asarray(self.direction, dtype=np.float64)
            object.__setattr__(self, "direction", tuple(u / np.linalg.norm(u)))

    @property
    def is_image(self) -> bool:
        return self.kind in IMAGE_KINDS


def strength_schedule(start: float, end: float, M: int) -> np.ndarray:
    """``M`` equally spaced strengths from ``start`` to ``end`` inclusive."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if M > 1 and start == end:
        raise ValueError("start and end must differ when M > 1")
    return np.linspace(start, end, M) if M > 1 else np.array([float(start)])


def _check_lam(lam: float) -> float:
    lam = float(lam)
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"strength {lam} outside (0, 1]")
    return lam


def _sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(img, [rows, cols], order=1, mode="constant", cval=0.0)


def _geometric(kind: str, img: np.ndarray, lam: float, theta_max: float) -> np.ndarray:
    k = img.shape[0]
    c = (k - 1) / 2.0
    rr, cc = np.mgrid[0:k, 0:k].astype(np.float64)
    if kind == "crop":
        return _sample(img, c + (rr - c) * lam, c + (cc - c) * lam)
    if kind == "rotation":
        th = np.deg2rad((1.0 - lam) * theta_max)
        dr, dc = rr - c, cc - c
        return _sample(img, c + np.cos(th) * dr - np.sin(th) * dc, c + np.sin(th) * dr + np.cos(th) * dc)
    # downsampling: bilinear to m x m, then back to k x k
    m = max(2, int(round(lam * k)))
    if m == k:
        return img.copy()
    grid = np.arange(m) * (k - 1) / (m - 1)
    small = _sample(img, *np.meshgrid(grid, grid, indexing="ij"))
    back = np.arange(k) * (m - 1) / (k - 1)
    return _sample(small, *np.meshgrid(back, back, indexing="ij"))


@lru_cache(maxsize=256)
def _resample_matrix(kind: str, side: int, lam: float, theta_max: float) -> np.ndarray:
    d = side * side
    basis = np.eye(d).reshape(d, side, side)
    cols = [_geometric(kind, b, lam, theta_max).reshape(-1) for b in basis]
    A = np.stack(cols, axis=1)
    A[np.abs(A) < 1e-12] = 0.0
    A.setflags(write=False)
    return A


def perturb_values(x: np.ndarray, mech: PerturbationMechanism, lam: float) -> np.ndarray:
    """Apply ``mech`` at strength ``lam`` to the last axis of ``x`` (any leading shape)."""
    lam = _check_lam(lam)
    x = np.asarray(x, dtype=np.float64)
    if lam == 1.0:
        return x.copy()
    kind = mech.kind
    if kind in ("crop", "rotation", "downsampling"):
        if x.shape[-1] != mech.side * mech.side:
            raise ValueError(f"record of size {x.shape[-1]} is not a {mech.side}x{mech.side} image")
        A = _resample_matrix(kind, mech.side, lam, float(mech.theta_max))
        return np.clip(x @ A.T, 0.0, 1.0)
    if kind == "brightness":
        return np.clip(lam * x, 0.0, 1.0)
    if kind == "contrast":
        mean = x.mean(axis=-1, keepdims=True)
        return np.clip(mean + lam * (x - mean), 0.0, 1.0)
    if kind == "shrink-to-centroid":
        c = np.asarray(mech.centroid, dtype=np.float64)
        return c + lam * (x - c)
    u = np.asarray(mech.direction, dtype=np.float64)
    return x + (1.0 - lam) * u


def perturb_record(x: DataRecord, mech: PerturbationMechanism, lam: float) -> DataRecord:
    return DataRecord(perturb_values(x.values, mech, lam), x.id)


def neighbor_set(x: DataRecord, mech: PerturbationMechanism, schedule) -> list[DataRecord]:
    return [perturb_record(x, mech, lam) for lam in schedule]


def neighbor_stack(X: np.ndarray, mech: PerturbationMechanism, schedule) -> np.ndarray:
    """(B, d) records -> (B, 1 + M, d): each record followed by its ``M`` neighbours."""
    X = np.asarray(X, dtype=np.float64)
    return np.stack([X] + [perturb_values(X, mech, lam) for lam in schedule], axis=1)
