"""Versioned JSON checkpoints for ``ClosureModel``.

Floats are written with ``repr`` precision by the json module, so a
save/load round trip reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from ..errors import CheckpointError
from .model import PARAM_NAMES, ClosureModel

FORMAT = "hybridqmom-closure"
VERSION = 1


def model_to_dict(model):
    return {
        "format": FORMAT,
        "version": VERSION,
        "architecture": {
            "n_nodes": model.n_nodes,
            "hidden": model.hidden,
            "inputs": ["mu10", "mu01", "mu20", "mu11", "mu02", "cp"],
            "gates": "ifco",
            "activation": "tanh",
            "recurrent_activation": "hard_sigmoid",
            "preserve_low_moments": model.preserve_low_moments,
        },
        "normalization": {
            "in_mean": model.in_mean.tolist(),
            "in_std": model.in_std.tolist(),
            "out_scale": model.out_scale.tolist(),
        },
        "params": {
            k: {"shape": list(model.params[k].shape), "data": model.params[k].ravel().tolist()}
            for k in PARAM_NAMES
        },
    }


def model_from_dict(d):
    try:
        if d.get("format") != FORMAT:
            raise CheckpointError(f"not a closure checkpoint (format={d.get('format')!r})")
        if d.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
        arch = d["architecture"]
        model = ClosureModel(arch["n_nodes"], arch["hidden"],
                             preserve_low_moments=bool(arch.get("preserve_low_moments", False)))
        norm = d["normalization"]
        model.in_mean = np.array(norm["in_mean"], dtype=float)
        model.in_std = np.array(norm["in_std"], dtype=float)
        model.out_scale = np.array(norm["out_scale"], dtype=float)
        for k in PARAM_NAMES:
            entry = d["params"][k]
            arr = np.array(entry["data"], dtype=float).reshape(entry["shape"])
            if arr.shape != model.params[k].shape:
                raise CheckpointError(f"parameter {k} has shape {arr.shape}, expected {model.params[k].shape}")
            model.params[k] = arr
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return model


def save(model, path):
    """Write atomically (temp file + rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(model_to_dict(model), fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise CheckpointError(f"corrupt checkpoint {path}: top level is not an object")
    return model_from_dict(d)
