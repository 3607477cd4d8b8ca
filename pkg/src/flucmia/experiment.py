"""End-to-end desk pipeline shared by the CLI and the acceptance tests.

Every random draw comes from ``make_rng(cfg.seed, STREAM, ...)`` so a config
and a seed pin down data, models and scores bit for bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .attacks import (AttackConfig, baseline_mc_fraction, baseline_min_distance, fit_classifier, pfami_met_score,
                      pfami_nns_score, proxy_run)
from .config import ExperimentConfig
from .datasets import DataRecord, DatasetConfig, LabeledSplit, generate, split_dataset, stack
from .evalharness.metrics import MetricReport
from .evalharness.sweeps import SweepResult, memorization_sweep, reports_for
from .genmodels import Checkpoint, CheckpointSeries, TrainConfig, handle_for, train_ddpm, train_vae
from .numerics import make_rng
from .perturb import PerturbationMechanism, strength_schedule
from .proxies import ProxyConfig

log = logging.getLogger(__name__)

DATA_STREAM, SPLIT_STREAM, TRAIN_STREAM, SYNTH_STREAM, CLASSIFIER_STREAM = 11, 12, 13, 14, 15
MODEL_ROLES = ("target", "shadow", "reference")
NNS_METHODS = ("pfami_nns", "random_proxy", "zero_perturbation")
ABLATION_METHODS = ("pfami_nns", "random_proxy", "zero_perturbation", "mean_fluctuation", "pfami_met")


# --- data and models ----------------------------------------------------------

def dataset_config(cfg: ExperimentConfig) -> DatasetConfig:
    d = cfg.data
    return DatasetConfig(kind=d.kind, counts=dict(d.counts), n_records=d.n_records, side=d.side, noise=d.noise,
                         seed=cfg.seed)


def build_data(cfg: ExperimentConfig) -> tuple[list[DataRecord], LabeledSplit]:
    dc = dataset_config(cfg)
    records = generate(dc, make_rng(cfg.seed, DATA_STREAM))
    return records, split_dataset(records, dc, make_rng(cfg.seed, SPLIT_STREAM))


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, weight_decay=t.weight_decay,
                       patience=t.patience, smooth=t.smooth, eval_every=t.eval_every, eval_draws=t.eval_draws,
                       snapshot_every=t.snapshot_every)


def train_role(cfg: ExperimentConfig, records, split: LabeledSplit, role: str) -> CheckpointSeries:
    """Train the ``role`` model on its member split; its non-member split drives early stopping."""
    m = cfg.model
    members = stack(records, split.ids(f"{role}_member"))
    held_out = stack(records, split.ids(f"{role}_nonmember"))
    rng = make_rng(cfg.seed, TRAIN_STREAM, MODEL_ROLES.index(role))
    if m.family == "ddpm":
        return train_ddpm(members, held_out, train_config(cfg), rng, T=m.T, beta_start=m.beta_start,
                          beta_end=m.beta_end, hidden=m.hidden, depth=m.depth, emb_dim=m.emb_dim,
                          sigma_data=m.sigma_data)
    return train_vae(members, held_out, train_config(cfg), rng, latent_dim=m.latent_dim, hidden=m.hidden,
                     depth=m.depth)


def roles_needed(cfg: ExperimentConfig, methods) -> list[str]:
    roles = ["target"]
    if any(m in NNS_METHODS for m in methods):
        roles.append("shadow")
    if cfg.proxy.calibrate:
        roles.append("reference")
    return roles


def pick_checkpoint(series: CheckpointSeries, which) -> Checkpoint:
    if which == "marker":
        return series.early_stopped()
    if which == "last":
        return series.last()
    return series.at(int(which))


# --- attack ingredients -------------------------------------------------------

def mechanism(cfg: ExperimentConfig, kind: str | None = None) -> PerturbationMechanism:
    p = cfg.perturb
    kind = kind or p.kind
    return PerturbationMechanism(kind, side=cfg.data.side if cfg.data.kind == "blobs-image" else None,
                                 theta_max=p.theta_max,
                                 centroid=tuple(p.centroid) if p.centroid is not None else None,
                                 direction=tuple(p.direction) if p.direction is not None else None)


def proxy_config(cfg: ExperimentConfig, n_components: int | None = None) -> ProxyConfig:
    p = cfg.proxy
    steps, n_queries = tuple(p.steps), p.n_queries
    if n_components is not None:
        # N evenly spaced steps across the configured range
        steps = tuple(int(round(v)) for v in np.linspace(min(p.steps), max(p.steps), n_components))
        if len(set(steps)) != len(steps):
            raise ValueError(f"cannot place {n_components} distinct steps in {min(p.steps)}..{max(p.steps)}")
        n_queries = n_components
    return ProxyConfig(steps=steps, n_mc=p.n_mc, n_outer=p.n_outer, n_queries=n_queries, calibrate=p.calibrate)


def attack_config(cfg: ExperimentConfig) -> AttackConfig:
    a = cfg.attack
    return AttackConfig(hidden=a.hidden, epochs=a.epochs, batch_size=a.batch_size, lr=a.lr,
                        weight_decay=a.weight_decay, shadow_per_class=a.shadow_per_class,
                        val_fraction=a.val_fraction, n_bags=a.n_bags)


def met_schedule(cfg: ExperimentConfig) -> np.ndarray:
    s = cfg.perturb.met
    return strength_schedule(s.start, s.end, s.M)


def nns_schedule(cfg: ExperimentConfig, M: int | None = None) -> np.ndarray:
    s = cfg.perturb.nns
    return strength_schedule(s.start, s.end, M or s.M)


@dataclass
class Scorer:
    """Scores the target evaluation split (members first) with any configured method.

    Handles are gray-box only. Proxy runs are cached per (model, schedule kind)
    so methods sharing a run (e.g. ``pfami_met`` and ``prob_threshold``) see the
    same draws.
    """

    cfg: ExperimentConfig
    records: list[DataRecord]
    split: LabeledSplit
    target: object
    shadow: object | None = None
    reference: object | None = None
    proxy: ProxyConfig | None = None
    mech: PerturbationMechanism | None = None
    met_lams: np.ndarray | None = None
    nns_lams: np.ndarray | None = None
    _runs: dict = field(default_factory=dict, repr=False)
    _classifiers: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.proxy = self.proxy or proxy_config(self.cfg)
        self.mech = self.mech or mechanism(self.cfg)
        self.met_lams = met_schedule(self.cfg) if self.met_lams is None else np.asarray(self.met_lams)
        self.nns_lams = nns_schedule(self.cfg) if self.nns_lams is None else np.asarray(self.nns_lams)
        self.ids, self.labels = self.split.eval_pair("target")
        self.X = stack(self.records, self.ids)

    def _run(self, who: str, lams_key: str, random_proxy: bool = False):
        key = (who, lams_key, random_proxy)
        if key not in self._runs:
            lams = {"met": self.met_lams, "nns": self.nns_lams, "zero": np.ones(len(self.nns_lams))}[lams_key]
            if who == "target":
                handle, X, ids = self.target, self.X, self.ids
            else:
                k = self.cfg.attack.shadow_per_class
                ids = self.split.shadow_member[:k] + self.split.shadow_nonmember[:k]
                handle, X = self.shadow, stack(self.records, ids)
            self._runs[key] = proxy_run(handle, X, ids, self.proxy, self.mech, lams, self.cfg.seed,
                                        reference=self.reference, random_proxy=random_proxy)
        return self._runs[key]

    def _shadow_labels(self) -> np.ndarray:
        k = self.cfg.attack.shadow_per_class
        n_mem = len(self.split.shadow_member[:k])
        n_non = len(self.split.shadow_nonmember[:k])
        return np.r_[np.ones(n_mem), np.zeros(n_non)]

    def classifier(self, lams_key: str = "nns", random_proxy: bool = False):
        key = (lams_key, random_proxy)
        if key not in self._classifiers:
            if self.shadow is None:
                raise ValueError("classifier methods need a shadow model")
            mats = self._run("shadow", lams_key, random_proxy).matrices()
            self._classifiers[key] = fit_classifier(mats, self._shadow_labels(), attack_config(self.cfg),
                                                    make_rng(self.cfg.seed, CLASSIFIER_STREAM))
        return self._classifiers[key]

    def _nns(self, lams_key: str, random_proxy: bool = False) -> np.ndarray:
        clf = self.classifier(lams_key, random_proxy)
        return np.asarray(pfami_nns_score(clf, self._run("target", lams_key, random_proxy).matrices()))

    def synthetic(self) -> np.ndarray:
        if "synthetic" not in self._runs:
            self._runs["synthetic"] = self.target.sample(self.cfg.attack.synthetic_size,
                                                         make_rng(self.cfg.seed, SYNTH_STREAM))
        return self._runs["synthetic"]

    def eps_radius(self) -> float:
        if self.cfg.attack.eps_radius is not None:
            return float(self.cfg.attack.eps_radius)
        # label-free default: median nearest-synthetic distance over the evaluation records
        return float(np.median(-baseline_min_distance(self.X, self.synthetic())))

    def score(self, method: str) -> np.ndarray:
        if method == "pfami_met":
            return pfami_met_score(self._run("target", "met").matrices())
        if method == "prob_threshold":
            return self._run("target", "met").values
        if method == "pfami_nns":
            return self._nns("nns")
        if method == "random_proxy":
            return self._nns("nns", random_proxy=True)
        if method == "zero_perturbation":
            return self._nns("zero")
        if method == "mean_fluctuation":
            return pfami_met_score(self._run("target", "nns").matrices())
        if method == "min_distance":
            return baseline_min_distance(self.X, self.synthetic())
        if method == "mc_fraction":
            return baseline_mc_fraction(self.X, self.synthetic(), self.eps_radius())
        raise ValueError(f"unknown method {method!r}")

    def scores(self, methods) -> dict[str, np.ndarray]:
        return {m: np.asarray(self.score(m), dtype=np.float64) for m in methods}


# --- whole runs ---------------------------------------------------------------

@dataclass
class Trained:
    records: list[DataRecord]
    split: LabeledSplit
    series: dict[str, CheckpointSeries]

    def handle(self, role: str, which="marker"):
        if role not in self.series:
            return None
        return handle_for(pick_checkpoint(self.series[role], which).model)


def train_all(cfg: ExperimentConfig, methods=None) -> Trained:
    methods = cfg.attack.methods if methods is None else methods
    records, split = build_data(cfg)
    series = {}
    for role in roles_needed(cfg, methods):
        log.info("training %s %s model", role, cfg.model.family)
        series[role] = train_role(cfg, records, split, role)
    return Trained(records, split, series)


def scorer_for(cfg: ExperimentConfig, trained: Trained, which=None, **kw) -> Scorer:
    which = cfg.eval.checkpoint if which is None else which
    return Scorer(cfg, trained.records, trained.split, trained.handle("target", which),
                  shadow=trained.handle("shadow", which), reference=trained.handle("reference", which), **kw)


@dataclass
class ExperimentResult:
    ids: list[int]
    labels: np.ndarray
    scores: dict[str, np.ndarray]
    reports: dict[str, MetricReport]
    epoch: int
    checkpoint_digests: dict[str, str]

    def rows(self):
        """(record id, role, membership, method, score) rows, members first."""
        for method, s in self.scores.items():
            for i, y, v in zip(self.ids, self.labels, s):
                role = "target_member" if y else "target_nonmember"
                yield int(i), role, int(y), method, float(v)


def run_experiment(cfg: ExperimentConfig, methods=None, which=None, trained: Trained | None = None) -> ExperimentResult:
    methods = list(cfg.attack.methods if methods is None else methods)
    which = cfg.eval.checkpoint if which is None else which
    trained = trained or train_all(cfg, methods)
    sc = scorer_for(cfg, trained, which)
    scores = sc.scores(methods)
    digests = {r: pick_checkpoint(s, which).digest for r, s in trained.series.items()}
    return ExperimentResult(sc.ids, sc.labels, scores, reports_for(scores, sc.labels),
                            pick_checkpoint(trained.series["target"], which).epoch, digests)


def sweep(cfg: ExperimentConfig, axis: str, trained: Trained | None = None, methods=None) -> SweepResult:
    """One of the epoch / M / N / mechanism / ablation sweeps."""
    if axis == "ablation":
        methods = list(ABLATION_METHODS)
    else:
        methods = list(cfg.eval.sweep_methods if methods is None else methods)
    trained = trained or train_all(cfg, methods)
    marker = trained.series["target"].early_stop_epoch
    meta = {"family": cfg.model.family, "methods": methods}
    if axis == "epoch":
        base = scorer_for(cfg, trained)

        def score(ckpt):
            return Scorer(cfg, trained.records, trained.split, handle_for(ckpt.model), shadow=base.shadow,
                          reference=base.reference).scores(methods)

        res = memorization_sweep(trained.series["target"].checkpoints, score, base.labels, marker)
        res.meta.update(meta)
        return res
    values, reports = [], []
    if axis == "M":
        for M in cfg.eval.sweep_M:
            lams = nns_schedule(cfg, M)
            sc = scorer_for(cfg, trained, met_lams=lams, nns_lams=lams)
            values.append(M)
            reports.append(reports_for(sc.scores(methods), sc.labels))
    elif axis == "N":
        for N in cfg.eval.sweep_N:
            sc = scorer_for(cfg, trained, proxy=proxy_config(cfg, N))
            values.append(N)
            reports.append(reports_for(sc.scores(methods), sc.labels))
    elif axis == "mechanism":
        for kind in cfg.eval.sweep_mechanisms:
            sc = scorer_for(cfg, trained, mech=mechanism(cfg, kind))
            values.append(kind)
            reports.append(reports_for(sc.scores(methods), sc.labels))
    elif axis == "ablation":
        sc = scorer_for(cfg, trained)
        rep = reports_for(sc.scores(methods), sc.labels)
        values, reports = methods, [{m: rep[m]} for m in methods]
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    return SweepResult(axis, values, reports, marker, meta)
