"""Synthetic corpora and the six-way target/shadow/reference split."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

ROLES = (
    "target_member",
    "target_nonmember",
    "shadow_member",
    "shadow_nonmember",
    "reference_member",
    "reference_nonmember",
)


@dataclass
class DataRecord:
    values: np.ndarray
    id: int


@dataclass
class DatasetConfig:
    kind: str = "blobs-image"
    counts: dict[str, int] = field(default_factory=lambda: {r: 256 for r in ROLES})
    n_records: int | None = None
    side: int = 12
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ring2d", "blobs-image"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        missing = set(ROLES) - set(self.counts)
        if missing:
            raise ValueError(f"counts missing roles: {sorted(missing)}")
        if any(int(self.counts[r]) <= 0 for r in ROLES):
            raise ValueError("split counts must be positive")
        if self.kind == "blobs-image" and self.side < 8:
            raise ValueError("image side length must be >= 8")
        if self.noise < 0:
            raise ValueError("noise scale must be non-negative")

    @property
    def total(self) -> int:
        return self.n_records if self.n_records is not None else sum(int(self.counts[r]) for r in ROLES)

    @property
    def dim(self) -> int:
        return 2 if self.kind == "ring2d" else self.side * self.side


@dataclass
class LabeledSplit:
    target_member: list[int]
    target_nonmember: list[int]
    shadow_member: list[int]
    shadow_nonmember: list[int]
    reference_member: list[int]
    reference_nonmember: list[int]

    def __post_init__(self):
        seen: set[int] = set()
        for role in ROLES:
            ids = getattr(self, role)
            if len(set(ids)) != len(ids) or seen & set(ids):
                raise ValueError(f"split role {role} overlaps another role")
            seen |= set(ids)

    def ids(self, role: str) -> list[int]:
        return getattr(self, role)

    def eval_pair(self, prefix: str) -> tuple[list[int], np.ndarray]:
        """Ids of ``<prefix>_member`` then ``<prefix>_nonmember`` with membership labels."""
        mem, non = self.ids(f"{prefix}_member"), self.ids(f"{prefix}_nonmember")
        labels = np.concatenate([np.ones(len(mem), dtype=np.int64), np.zeros(len(non), dtype=np.int64)])
        return mem + non, labels

    def to_dict(self) -> dict[str, list[int]]:
        return {r: list(map(int, getattr(self, r))) for r in ROLES}


def generate_ring2d(config: DatasetConfig, rng: np.random.Generator) -> list[DataRecord]:
    if config.kind != "ring2d":
        raise ValueError("generate_ring2d needs kind == 'ring2d'")
    n = config.total
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    pts = pts + config.noise * rng.standard_normal((n, 2))
    return [DataRecord(pts[i], i) for i in range(n)]


def render_blobs(side: int, centers, widths, amplitudes) -> np.ndarray:
    """Sum of isotropic Gaussian bumps on a ``side x side`` grid, clamped to [0, 1].

    ``centers`` are (row, col) pixel coordinates. A width of 0 puts the whole
    amplitude on the nearest pixel.
    """
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    img = np.zeros((side, side))
    for (cr, cc), w, a in zip(centers, widths, amplitudes):
        if w <= 0:
            img[int(round(cr)), int(round(cc))] += a
            continue
        img += a * np.exp(-((rows - cr) ** 2 + (cols - cc) ** 2) / (2.0 * w * w))
    return np.clip(img, 0.0, 1.0)


def generate_blob_images(config: DatasetConfig, rng: np.random.Generator) -> list[DataRecord]:
    """Each record is a ``side x side`` image with 1-3 random Gaussian blobs, flattened row-major."""
    if config.kind != "blobs-image":
        raise ValueError("generate_blob_images needs kind == 'blobs-image'")
    k = config.side
    out = []
    for i in range(config.total):
        n_blobs = int(rng.integers(1, 4))
        centers = rng.uniform(1.5, k - 2.5, size=(n_blobs, 2))
        widths = rng.uniform(0.7, 0.22 * k, size=n_blobs)
        amps = rng.uniform(0.4, 1.0, size=n_blobs)
        img = render_blobs(k, centers, widths, amps)
        if config.noise:
            img = np.clip(img + config.noise * rng.standard_normal(img.shape), 0.0, 1.0)
        out.append(DataRecord(img.reshape(-1), i))
    return out


def generate(config: DatasetConfig, rng: np.random.Generator) -> list[DataRecord]:
    if config.kind == "ring2d":
        return generate_ring2d(config, rng)
    return generate_blob_images(config, rng)


def split_dataset(records: list[DataRecord], config: DatasetConfig, rng: np.random.Generator) -> LabeledSplit:
    need = sum(int(config.counts[r]) for r in ROLES)
    if need > len(records):
        raise ValueError(f"split needs {need} records, only {len(records)} available")
    ids = np.array([r.id for r in records], dtype=np.int64)
    perm = rng.permutation(len(ids))
    parts, start = {}, 0
    for role in ROLES:
        c = int(config.counts[role])
        parts[role] = [int(i) for i in ids[perm[start:start + c]]]
        start += c
    return LabeledSplit(**parts)


def stack(records: list[DataRecord], ids=None) -> np.ndarray:
    """Values of ``records`` (optionally restricted to ``ids``, in that order) as a (n, d) array."""
    if ids is None:
        return np.stack([r.values for r in records])
    by_id = {r.id: r for r in records}
    return np.stack([by_id[i].values for i in ids])


def save_dataset(out_dir: Path, records: list[DataRecord], split: LabeledSplit, config: DatasetConfig,
                 extra: dict | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        d = records[0].values.size if records else 0
        w.writerow(["id"] + [f"v{j}" for j in range(d)])
        for r in records:
            w.writerow([r.id] + [repr(float(v)) for v in r.values])
    manifest = {"config": asdict(config), "split": split.to_dict(), **(extra or {})}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(out_dir: Path) -> tuple[list[DataRecord], LabeledSplit, DatasetConfig, dict]:
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    records = []
    with open(out_dir / "records.csv", newline="") as fh:
        rows = csv.reader(fh)
        next(rows)
        for row in rows:
            records.append(DataRecord(np.array([float(v) for v in row[1:]]), int(row[0])))
    return records, LabeledSplit(**manifest["split"]), DatasetConfig(**manifest["config"]), manifest
