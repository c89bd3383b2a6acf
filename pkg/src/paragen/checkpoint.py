"""Directory checkpoints: a JSON manifest plus one packed binary blob.

The manifest lists every parameter (name, shape, byte offset, byte length)
in a fixed order, together with the training config and the vocabulary; the
blob is the concatenation of the arrays as little-endian 32-bit floats.
Compute is 64-bit, storage 32-bit: loading reproduces the stored values
exactly, and a save/load/save cycle is byte-stable. Optimizer accumulators
ride along under an "opt/" prefix so training can resume."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig, config_from_dict, config_to_dict
from .critics import CriticPair
from .data import Vocabulary
from .generator import GeneratorParams

FORMAT = "paragen-checkpoint-v1"

MANIFEST = "manifest.json"
BLOB = "blob.bin"


class CheckpointError(RuntimeError):
    pass


def _collections(gen_params: GeneratorParams, critics: CriticPair):
    return [("generator", gen_params.collection),
            ("sentence_critic", critics.sentence.collection),
            ("topic_critic", critics.paragraph.collection)]


def save_checkpoint(path, gen_params: GeneratorParams, critics: CriticPair,
                    config: TrainConfig, vocab: Vocabulary | None,
                    optimizers: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    entries = []
    parts = []
    offset = 0

    def push(name: str, arr: np.ndarray) -> None:
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "length": len(raw)})
        parts.append(raw)
        offset += len(raw)

    for coll_name, coll in _collections(gen_params, critics):
        for name, t in coll.items():
            push(f"{coll_name}/{name}", t.data)
    for opt_name, opt in (optimizers or {}).items():
        for name, arr in opt.square_avg.items():
            push(f"opt/{opt_name}/{name}", arr)

    manifest = {
        "format": FORMAT,
        "config": config_to_dict(config),
        "vocab": vocab.to_dict() if vocab is not None else None,
        "entries": entries,
    }
    with open(os.path.join(path, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(path, BLOB), "wb") as fh:
        fh.write(b"".join(parts))


@dataclass
class LoadedCheckpoint:
    config: TrainConfig
    vocab: Vocabulary | None
    arrays: dict[str, np.ndarray]


def load_checkpoint(path) -> LoadedCheckpoint:
    manifest_path = os.path.join(path, MANIFEST)
    blob_path = os.path.join(path, BLOB)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read manifest at {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unrecognized checkpoint format "
                              f"{manifest.get('format')!r}")
    try:
        with open(blob_path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read blob at {blob_path}: {exc}") from exc

    arrays: dict[str, np.ndarray] = {}
    expected = 0
    for e in manifest["entries"]:
        name, shape = e["name"], tuple(e["shape"])
        off, length = e["offset"], e["length"]
        if off != expected:
            raise CheckpointError(
                f"manifest mismatch: entry {name!r} at offset {off}, "
                f"expected {expected} (entries must tile the blob)")
        n_vals = int(np.prod(shape)) if shape else 1
        if length != 4 * n_vals:
            raise CheckpointError(
                f"manifest mismatch: entry {name!r} length {length} != "
                f"4*{n_vals} for shape {shape}")
        if off + length > len(blob):
            raise CheckpointError(
                f"manifest mismatch: entry {name!r} extends to byte "
                f"{off + length} but blob has {len(blob)}")
        arr = np.frombuffer(blob, dtype="<f4", count=n_vals, offset=off)
        arrays[name] = arr.reshape(shape).astype(np.float64)
        expected = off + length
    if expected != len(blob):
        raise CheckpointError(
            f"manifest mismatch: entries cover {expected} bytes, "
            f"blob has {len(blob)}")

    config = config_from_dict(manifest["config"])
    vocab = (Vocabulary.from_dict(manifest["vocab"])
             if manifest.get("vocab") is not None else None)
    return LoadedCheckpoint(config=config, vocab=vocab, arrays=arrays)


def restore_models(loaded: LoadedCheckpoint):
    """Rebuild generator, critics, and optimizers from a loaded checkpoint.

    Models are constructed from the stored config/vocabulary and every
    parameter is overwritten with the stored values."""
    from .training import make_optimizers

    if loaded.vocab is None:
        raise CheckpointError("checkpoint has no vocabulary; cannot size models")
    config = loaded.config
    dims = config.dims()
    vocab_size = loaded.vocab.size
    gen_params = GeneratorParams.create(dims, vocab_size, config.seed)
    critics = CriticPair.create(dims, vocab_size, config.seed + 1)

    for coll_name, coll in _collections(gen_params, critics):
        for name, t in coll.items():
            key = f"{coll_name}/{name}"
            if key not in loaded.arrays:
                raise CheckpointError(f"checkpoint missing parameter {key!r}")
            arr = loaded.arrays[key]
            if arr.shape != t.data.shape:
                raise CheckpointError(f"parameter {key!r}: stored shape "
                                      f"{arr.shape} != model shape {t.data.shape}")
            t.data[...] = arr

    optimizers = make_optimizers(gen_params, critics, config)
    for opt_name, opt in optimizers.items():
        for name in opt.square_avg:
            key = f"opt/{opt_name}/{name}"
            if key in loaded.arrays:
                opt.square_avg[name][...] = loaded.arrays[key]
    return gen_params, critics, optimizers


def load_models(path):
    """One-call restore: (gen_params, critics, config, vocab, optimizers)."""
    loaded = load_checkpoint(path)
    gen_params, critics, optimizers = restore_models(loaded)
    return gen_params, critics, loaded.config, loaded.vocab, optimizers
