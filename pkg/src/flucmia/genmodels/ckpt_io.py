"""Checkpoint files.

Single-model file layout (version 1)::

    b"FLCK1\\n"  | uint64 LE header length | JSON header | raw float64 LE arrays

The header carries the model metadata, epoch metadata and, per array, its name
and shape. Bytes are canonical (sorted JSON keys, fixed array order), so the
SHA-256 of the file is the checkpoint digest.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..numerics import MlpParams
from .models import ToyDDPM, ToyVAE
from .schedule import make_schedule
from .training import Checkpoint, CheckpointSeries

MAGIC = b"FLCK1\n"
FORMAT_VERSION = 1


def _named_arrays(model: ToyDDPM | ToyVAE) -> list[tuple[str, np.ndarray]]:
    out = []
    for net_name, net in zip(("denoiser",) if model.family == "ddpm" else ("encoder", "decoder"), model.nets()):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            out += [(f"{net_name}.W{i}", w), (f"{net_name}.b{i}", b)]
    return out


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    arrays = _named_arrays(ckpt.model)
    header = {
        "version": FORMAT_VERSION,
        "model": ckpt.model.meta(),
        "epoch": ckpt.epoch,
        "train_loss": ckpt.train_loss,
        "eval_loss": ckpt.eval_loss,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<Q", len(hdr)) + hdr + body


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise ValueError("not a checkpoint file")
    (n,) = struct.unpack("<Q", data[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + n])
    if header.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    offset = start + n
    arrays = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(entry["shape"]).copy()
        offset += 8 * size
    meta = header["model"]

    def net(name, acts):
        ws = [arrays[f"{name}.W{i}"] for i in range(len(acts))]
        bs = [arrays[f"{name}.b{i}"] for i in range(len(acts))]
        return MlpParams(ws, bs, list(acts))

    if meta["family"] == "ddpm":
        model = ToyDDPM(make_schedule(meta["T"], meta["beta_start"], meta["beta_end"]),
                        net("denoiser", meta["denoiser_activations"]), meta["emb_dim"],
                        meta.get("sigma_data"))
    elif meta["family"] == "vae":
        model = ToyVAE(net("encoder", meta["encoder_activations"]), net("decoder", meta["decoder_activations"]))
    else:
        raise ValueError(f"unknown model family {meta['family']!r}")
    return Checkpoint(header["epoch"], model, header["train_loss"], header["eval_loss"])


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_series(out_dir: Path, series: CheckpointSeries, extra: dict | None = None) -> dict:
    """Write one ``epoch_XXXXX.ckpt`` per checkpoint plus ``series.json``; returns the index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for c in series.checkpoints:
        data = checkpoint_bytes(c)
        name = f"epoch_{c.epoch:05d}.ckpt"
        (out_dir / name).write_bytes(data)
        entries.append({"epoch": c.epoch, "file": name, "sha256": hashlib.sha256(data).hexdigest(),
                        "train_loss": c.train_loss, "eval_loss": c.eval_loss})
    index = {
        "format_version": FORMAT_VERSION,
        "early_stop_epoch": series.early_stop_epoch,
        "train_curve": series.train_curve,
        "eval_curve": series.eval_curve,
        "curve_epochs": series.curve_epochs,
        "checkpoints": entries,
        **(extra or {}),
    }
    (out_dir / "series.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    return index


def load_series(out_dir: Path, epochs=None) -> CheckpointSeries:
    """Load a saved series; ``epochs`` restricts which checkpoint files are read
    (the early-stop checkpoint is always loaded)."""
    out_dir = Path(out_dir)
    index_path = out_dir / "series.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no checkpoint series at {out_dir}")
    index = json.loads(index_path.read_text())
    marker = index["early_stop_epoch"]
    ckpts = []
    for e in index["checkpoints"]:
        if epochs is not None and e["epoch"] not in epochs and e["epoch"] != marker:
            continue
        data = (out_dir / e["file"]).read_bytes()
        if hashlib.sha256(data).hexdigest() != e["sha256"]:
            raise ValueError(f"digest mismatch for {e['file']}")
        ckpts.append(checkpoint_from_bytes(data))
    return CheckpointSeries(ckpts, index["train_curve"], index["eval_curve"], marker,
                            index.get("curve_epochs"))
