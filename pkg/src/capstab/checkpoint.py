"""Versioned JSON checkpoint container shared by both model kinds.

Layout:

    {
      "format": "capstab-checkpoint",
      "version": 1,
      "kind": "capsnet" | "cnn",
      "seed": <init seed>,
      "config": {...},
      "params": {"<name>": {"shape": [...], "data": [flat floats]}, ...}
    }

Floats are written with Python's shortest round-trip repr, so
load(save(model)) restores every parameter bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .capsnet import CapsNetConfig, CapsNetModel
from .cnn import CnnConfig, CnnModel
from .errors import DataError

FORMAT = "capstab-checkpoint"
VERSION = 1


def save_model(model: CapsNetModel | CnnModel, path) -> None:
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "config": asdict(model.config),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in model.param_items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_model(path) -> CapsNetModel | CnnModel:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != FORMAT:
        raise DataError(f"{path}: not a {FORMAT} file")
    if payload.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    kind = payload.get("kind")
    try:
        config_dict = dict(payload["config"])
        if kind == "capsnet":
            config_dict["decoder_hidden"] = tuple(config_dict["decoder_hidden"])
            model = CapsNetModel(CapsNetConfig(**config_dict), seed=payload["seed"])
        elif kind == "cnn":
            model = CnnModel(CnnConfig(**config_dict), seed=payload["seed"])
        else:
            raise DataError(f"{path}: unknown model kind {kind!r}")
        stored = payload["params"]
        for name, arr in model.param_items():
            entry = stored[name]
            values = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if values.shape != arr.shape:
                raise DataError(
                    f"{path}: parameter {name} has shape {values.shape}, expected {arr.shape}"
                )
            arr[...] = values
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed checkpoint: {exc}") from exc
    return model


def is_fresh_init(model: CapsNetModel | CnnModel) -> bool:
    """True when every parameter still equals the deterministic initialization
    for (config, seed) — i.e. the model was never trained."""
    fresh = type(model)(model.config, seed=model.seed)
    return all(
        np.array_equal(arr, dict(fresh.param_items())[name])
        for name, arr in model.param_items()
    )
