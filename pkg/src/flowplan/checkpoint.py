"""Checkpoint serialization.

A checkpoint is a single JSON document mapping parameter names to shape plus
row-major float lists, together with optimizer state and RNG state. Floats
are serialized with Python's shortest round-trip repr, so save/load is
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _encode_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _decode_array(doc):
    return np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"])


def save_checkpoint(path, params, optimizer_state=None, rng_state=None, meta=None):
    """Write model parameters (name -> ndarray) and auxiliary state to JSON."""
    doc = {"params": {name: _encode_array(arr) for name, arr in params.items()}}
    if optimizer_state is not None:
        opt = dict(optimizer_state)
        opt["m"] = {k: _encode_array(v) for k, v in opt["m"].items()}
        opt["v"] = {k: _encode_array(v) for k, v in opt["v"].items()}
        doc["optimizer"] = opt
    if rng_state is not None:
        doc["rng_state"] = rng_state
    if meta is not None:
        doc["meta"] = meta
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if "params" not in doc:
        raise KeyError(f"checkpoint {path} has no 'params' section")
    out = {
        "params": {name: _decode_array(d) for name, d in doc["params"].items()},
        "optimizer": None,
        "rng_state": doc.get("rng_state"),
        "meta": doc.get("meta"),
    }
    if "optimizer" in doc:
        opt = dict(doc["optimizer"])
        opt["m"] = {k: _decode_array(v) for k, v in opt["m"].items()}
        opt["v"] = {k: _decode_array(v) for k, v in opt["v"].items()}
        out["optimizer"] = opt
    return out
