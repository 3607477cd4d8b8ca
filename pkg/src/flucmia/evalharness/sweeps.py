"""Sweep containers: one MetricReport per method at each point of an axis."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from numbers import Real
from typing import Callable, Mapping, Sequence

import numpy as np

from .metrics import MetricReport, metric_report

NUMERIC_AXES = ("epoch", "M", "N")


@dataclass
class SweepResult:
    axis: str
    values: list
    reports: list[dict[str, MetricReport]]
    early_stop_epoch: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.values) != len(self.reports):
            raise ValueError("one report set per axis value")
        if self.axis in NUMERIC_AXES:
            if not all(isinstance(v, Real) for v in self.values):
                raise ValueError(f"axis {self.axis!r} needs numeric values")
            if any(b <= a for a, b in zip(self.values, self.values[1:])):
                raise ValueError(f"axis {self.axis!r} values must be strictly increasing")

    def auc(self, method: str) -> list[float]:
        return [r[method].auc for r in self.reports]

    def at(self, value) -> dict[str, MetricReport]:
        return self.reports[self.values.index(value)]

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "early_stop_epoch": self.early_stop_epoch,
            "points": [{"value": v, "reports": {m: r.to_dict() for m, r in rep.items()}}
                       for v, rep in zip(self.values, self.reports)],
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def reports_for(scores: Mapping[str, np.ndarray], labels) -> dict[str, MetricReport]:
    return {m: metric_report(m, s, labels) for m, s in scores.items()}


def memorization_sweep(checkpoints: Sequence, score: Callable[[object], Mapping[str, np.ndarray]], labels,
                       early_stop_epoch: int | None = None) -> SweepResult:
    """AUC etc. per checkpoint; ``score(checkpoint)`` returns method -> scores on the eval split."""
    if len(checkpoints) == 0:
        raise ValueError("need at least one checkpoint")
    ckpts = sorted(checkpoints, key=lambda c: c.epoch)
    return SweepResult("epoch", [c.epoch for c in ckpts], [reports_for(score(c), labels) for c in ckpts],
                       early_stop_epoch)
