"""Command line entry point: gen-data, train, attack, eval and sweep.

Artifacts live under ``--out``::

    data/manifest.json, data/records.csv
    models/<role>/series.json, models/<role>/epoch_XXXXX.ckpt
    scores/<checkpoint>.csv            (eval writes .metrics.json and .roc.csv next to it)
    sweeps/<axis>.json

Every file records the config digest and seed. A stage refuses to overwrite
an artifact written under a different digest unless ``--force`` is given.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .config import METHODS, SWEEP_AXES, ConfigError, ExperimentConfig, load_config
from .datasets import load_dataset, save_dataset
from .evalharness.metrics import metric_report
from .genmodels.ckpt_io import load_series, save_series

log = logging.getLogger("flucmia")

EXIT_CONFIG, EXIT_MISSING, EXIT_MISMATCH = 2, 3, 4
SCORE_FIELDS = ["record_id", "role", "membership", "method", "score"]


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# --- artifact helpers ---------------------------------------------------------

def _stamp(cfg: ExperimentConfig) -> dict:
    return {"config_digest": cfg.digest(), "seed": cfg.seed}


def _recorded_digest(path: Path) -> str | None:
    """Digest stored in an existing JSON or CSV artifact, or None."""
    if not path.exists():
        return None
    if path.suffix == ".json":
        try:
            return json.loads(path.read_text()).get("config_digest")
        except (ValueError, AttributeError):
            return None
    for line in path.read_text().splitlines():
        if not line.startswith("#"):
            break
        key, _, val = line[1:].partition(":")
        if key.strip() == "config_digest":
            return val.strip()
    return None


def _guard(path: Path, cfg: ExperimentConfig, force: bool) -> bool:
    """True if ``path`` already holds this digest's output. Raises on a digest clash."""
    found = _recorded_digest(path)
    if found is None or force:
        return False
    if found != cfg.digest():
        raise CliError(f"{path} was written with config digest {found[:12]}, current is {cfg.digest()[:12]}; "
                       "use another --out or pass --force", EXIT_MISMATCH)
    return True


def _require_digest(path: Path, cfg: ExperimentConfig, what: str):
    found = _recorded_digest(path)
    if found is None:
        raise CliError(f"missing {what}: {path} (run the earlier stage first)", EXIT_MISSING)
    if found != cfg.digest():
        raise CliError(f"{what} at {path} belongs to config digest {found[:12]}, current is {cfg.digest()[:12]}",
                       EXIT_MISMATCH)


def _write_json(path: Path, obj: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_data(cfg: ExperimentConfig, out: Path):
    _require_digest(out / "data" / "manifest.json", cfg, "dataset")
    records, split, _, _ = load_dataset(out / "data")
    return records, split


def _load_trained(cfg: ExperimentConfig, out: Path, roles, which=None) -> ex.Trained:
    records, split = _load_data(cfg, out)
    series = {}
    for role in roles:
        index = out / "models" / role / "series.json"
        _require_digest(index, cfg, f"{role} model")
        epochs = None
        if which == "last":
            epochs = [json.loads(index.read_text())["checkpoints"][-1]["epoch"]]
        elif which not in (None, "marker"):
            epochs = [int(which)]
        try:
            series[role] = load_series(index.parent, epochs)
            ex.pick_checkpoint(series[role], which or "marker")
        except (FileNotFoundError, KeyError) as e:
            raise CliError(f"missing checkpoint for {role}: {e}", EXIT_MISSING) from None
        except ValueError as e:
            raise CliError(f"corrupt checkpoint for {role}: {e}", EXIT_MISSING) from None
    return ex.Trained(records, split, series)


def _methods(arg: str | None, default) -> list[str]:
    if not arg:
        return list(default)
    methods = [m.strip() for m in arg.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise CliError(f"unknown methods {bad}; choose from {', '.join(METHODS)}", EXIT_CONFIG)
    return methods


def _checkpoint_ref(arg: str | None, cfg: ExperimentConfig):
    if arg is None:
        return cfg.eval.checkpoint
    if arg in ("marker", "last"):
        return arg
    try:
        return int(arg)
    except ValueError:
        raise CliError(f"--checkpoint must be marker, last or an epoch, got {arg!r}", EXIT_CONFIG) from None


# --- commands -----------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, out: Path, force: bool = False) -> Path:
    manifest = out / "data" / "manifest.json"
    if _guard(manifest, cfg, force):
        log.info("dataset for this digest already at %s", manifest.parent)
        return manifest.parent
    records, split = ex.build_data(cfg)
    save_dataset(out / "data", records, split, ex.dataset_config(cfg), extra=_stamp(cfg))
    return manifest.parent


def cmd_train(cfg: ExperimentConfig, out: Path, roles=None, force: bool = False) -> dict[str, Path]:
    records, split = _load_data(cfg, out)
    roles = list(roles or ex.MODEL_ROLES)
    written = {}
    for role in roles:
        target = out / "models" / role
        if _guard(target / "series.json", cfg, force):
            log.info("%s model for this digest already at %s", role, target)
        else:
            log.info("training %s %s model", role, cfg.model.family)
            series = ex.train_role(cfg, records, split, role)
            save_series(target, series, extra={**_stamp(cfg), "role": role, "family": cfg.model.family,
                                               "series_digest": series.digest()})
        written[role] = target
    return written


def cmd_attack(cfg: ExperimentConfig, out: Path, methods=None, checkpoint=None, force: bool = False) -> Path:
    methods = list(methods or cfg.attack.methods)
    which = cfg.eval.checkpoint if checkpoint is None else checkpoint
    path = out / "scores" / f"{which}.csv"
    _guard(path, cfg, force)
    trained = _load_trained(cfg, out, ex.roles_needed(cfg, methods), which)
    res = ex.run_experiment(cfg, methods, which, trained)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for key, val in [*_stamp(cfg).items(), ("checkpoint", which), ("epoch", res.epoch),
                         *((f"model_digest.{r}", d) for r, d in sorted(res.checkpoint_digests.items()))]:
            fh.write(f"# {key}: {val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for i, role, y, method, s in res.rows():
            w.writerow([i, role, y, method, repr(s)])
    return path


def read_scores(path: Path) -> tuple[dict, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Header fields and method -> (scores, labels) from a scores CSV."""
    if not path.exists():
        raise CliError(f"missing scores file {path}", EXIT_MISSING)
    header, body = {}, []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(body))
    if not rows or set(SCORE_FIELDS) - set(rows[0]):
        raise CliError(f"{path}: expected columns {', '.join(SCORE_FIELDS)}", EXIT_CONFIG)
    by_method: dict[str, tuple[list, list]] = {}
    for n, r in enumerate(rows, start=2 + len(header)):
        try:
            s, y = float(r["score"]), int(r["membership"])
        except ValueError:
            raise CliError(f"{path}:{n}: bad score or membership value", EXIT_CONFIG) from None
        by_method.setdefault(r["method"], ([], []))
        by_method[r["method"]][0].append(s)
        by_method[r["method"]][1].append(y)
    return header, {m: (np.array(s), np.array(y)) for m, (s, y) in by_method.items()}


def cmd_eval(scores_path: Path, out: Path | None = None) -> tuple[Path, Path]:
    header, data = read_scores(scores_path)
    out = out or scores_path.parent
    stem = scores_path.stem
    try:
        reports = {m: metric_report(m, s, y) for m, (s, y) in data.items()}
    except ValueError as e:
        raise CliError(f"{scores_path}: {e}", EXIT_CONFIG) from None
    stamp = {"config_digest": header.get("config_digest"), "seed": header.get("seed")}
    metrics_path = out / f"{stem}.metrics.json"
    _write_json(metrics_path, {**stamp, "source": scores_path.name, "checkpoint": header.get("checkpoint"),
                               "reports": {m: r.to_dict() for m, r in reports.items()}})
    roc_path = out / f"{stem}.roc.csv"
    with open(roc_path, "w", newline="") as fh:
        for key, val in stamp.items():
            fh.write(f"# {key}: {val}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "fpr", "tpr"])
        for m, r in reports.items():
            for fpr, tpr in r.roc:
                w.writerow([m, repr(fpr), repr(tpr)])
    return metrics_path, roc_path


def cmd_sweep(cfg: ExperimentConfig, out: Path, axis: str, methods=None, force: bool = False) -> Path:
    if axis not in SWEEP_AXES:
        raise CliError(f"unknown axis {axis!r}; choose from {', '.join(SWEEP_AXES)}", EXIT_CONFIG)
    path = out / "sweeps" / f"{axis}.json"
    _guard(path, cfg, force)
    methods = list(ex.ABLATION_METHODS if axis == "ablation" else (methods or cfg.eval.sweep_methods))
    trained = _load_trained(cfg, out, ex.roles_needed(cfg, methods))
    if axis == "epoch":
        # every saved checkpoint of the target model
        trained.series["target"] = load_series(out / "models" / "target")
    res = ex.sweep(cfg, axis, trained, methods)
    _write_json(path, {**_stamp(cfg), **res.to_dict()})
    return path


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flucmia", description="Fluctuation-based membership inference on toy "
                                                            "generative models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def staged(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--force", action="store_true", help="overwrite artifacts of another config digest")
        return sp

    staged("gen-data", "generate the dataset and its role split")
    sp = staged("train", "train target, shadow and reference models")
    sp.add_argument("--roles", help="comma list from target,shadow,reference")
    sp = staged("attack", "score the target evaluation split")
    sp.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    sp.add_argument("--checkpoint", help="marker, last or an epoch number")
    sp = staged("sweep", "AUC along one experimental axis")
    sp.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sp.add_argument("--methods", help="methods to sweep (ignored for the ablation axis)")
    sp = sub.add_parser("eval", help="metrics and ROC points from a scores CSV")
    sp.add_argument("scores", type=Path)
    sp.add_argument("--out", type=Path, help="directory for outputs (default: next to the CSV)")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            for path in cmd_eval(args.scores, args.out):
                print(path)
            return 0
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise CliError("--seed must be an unsigned 64-bit integer", EXIT_CONFIG)
        cfg = load_config(args.config).with_seed(args.seed)
        out = args.out
        if args.command == "gen-data":
            print(cmd_gen_data(cfg, out, args.force))
        elif args.command == "train":
            roles = [r.strip() for r in args.roles.split(",")] if args.roles else None
            bad = [r for r in roles or [] if r not in ex.MODEL_ROLES]
            if bad:
                raise CliError(f"unknown roles {bad}", EXIT_CONFIG)
            for path in cmd_train(cfg, out, roles, args.force).values():
                print(path)
        elif args.command == "attack":
            print(cmd_attack(cfg, out, _methods(args.methods, cfg.attack.methods),
                             _checkpoint_ref(args.checkpoint, cfg), args.force))
        elif args.command == "sweep":
            methods = _methods(args.methods, cfg.eval.sweep_methods) if args.methods else None
            print(cmd_sweep(cfg, out, args.axis, methods, args.force))
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
