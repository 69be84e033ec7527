"""Checkpoint container: binary little-endian float64 payload with a
human-readable JSON manifest beside it.

The manifest records tensor names/shapes/roles, the model config, the
vocabulary, the ontology, and an ontology hash that must match at
evaluate / resume time.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from . import autodiff as ad
from .data import Ontology, ValidationError, Vocabulary
from .model import ModelConfig, StateTracker

MAGIC = b"MDSTCKP1"


def ontology_hash(ontology: Ontology) -> str:
    canonical = json.dumps(ontology.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(canonical).hexdigest()


def manifest_path(path: str) -> str:
    return str(path) + ".manifest.json"


def save_checkpoint(tracker: StateTracker, path):
    tensors = []
    for role, group in (("trainable", tracker.params), ("frozen", tracker.frozen_params)):
        for name in sorted(group):
            tensors.append((name, role, group[name].data))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, _role, data in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())

    manifest = {
        "tensors": [
            {"name": n, "role": r, "shape": list(d.shape)} for n, r, d in tensors
        ],
        "config": tracker.cfg.to_dict(),
        "vocab": tracker.vocab.tokens,
        "ontology": tracker.ontology.to_dict(),
        "ontology_hash": ontology_hash(tracker.ontology),
    }
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> StateTracker:
    with open(manifest_path(path), encoding="utf-8") as fh:
        manifest = json.load(fh)
    roles = {t["name"]: t["role"] for t in manifest["tensors"]}

    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValidationError(f"{path} is not a checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        params = {}
        frozen = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            n_vals = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n_vals), dtype="<f8").reshape(shape).copy()
            role = roles.get(name)
            if role == "trainable":
                params[name] = ad.parameter(data)
            elif role == "frozen":
                frozen[name] = ad.constant(data)
            else:
                raise ValidationError(f"checkpoint tensor {name!r} missing from manifest")

    cfg = ModelConfig(**manifest["config"])
    vocab = Vocabulary(manifest["vocab"])
    ontology = Ontology(manifest["ontology"])
    stored_hash = manifest["ontology_hash"]
    if stored_hash != ontology_hash(ontology):
        raise ValidationError("checkpoint ontology hash does not match its ontology")
    return StateTracker(cfg, vocab, ontology, params=params, frozen_params=frozen)


def check_ontology_match(tracker: StateTracker, ontology: Ontology):
    have = ontology_hash(tracker.ontology)
    want = ontology_hash(ontology)
    if have != want:
        raise ValidationError(
            f"ontology hash mismatch: checkpoint {have[:12]} vs corpus {want[:12]}"
        )
