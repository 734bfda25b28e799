"""Checkpoint persistence: model config plus flat name -> values parameter map.

JSON keeps floats exactly (repr round-trips IEEE doubles), so a save/load
cycle reproduces bit-identical forwards.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .errors import CheckpointError
from .model import DialogModel, ModelConfig
from .tensor import RngState

FORMAT = "parley.checkpoint.v1"


def save_checkpoint(model: DialogModel, path: str) -> None:
    payload = {
        "format": FORMAT,
        "model_config": dataclasses.asdict(model.config),
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def read_checkpoint_config(path: str) -> ModelConfig:
    return ModelConfig(**_read(path)["model_config"])


def load_checkpoint(path: str, config: ModelConfig) -> DialogModel:
    """Build a model for ``config`` and fill it from the file.

    Every stored parameter must exist with exactly the expected shape;
    mismatches name the offending parameter.
    """
    payload = _read(path)
    model = DialogModel(config, RngState(0))
    stored = payload["params"]
    missing = sorted(set(model.params) - set(stored))
    unexpected = sorted(set(stored) - set(model.params))
    if missing or unexpected:
        raise CheckpointError(
            f"{path}: parameter set does not match the config "
            f"(missing {missing or 'none'}, unexpected {unexpected or 'none'})")
    for name, tensor in model.params.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != tensor.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {list(shape)}, "
                f"expected {list(tensor.data.shape)}")
        tensor.data = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
    return model


def _read(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: not a valid checkpoint: {exc.msg}") from exc
    if payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unrecognized checkpoint format "
                              f"{payload.get('format')!r}")
    return payload
