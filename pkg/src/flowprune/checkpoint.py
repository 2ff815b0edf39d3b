"""Self-describing checkpoint container (.npz).

Holds the backbone config (JSON), every parameter tensor by name, the
block gates, and the active subnet mask. Float64 arrays round-trip
bit-exactly through numpy's npz format.
"""

from __future__ import annotations

import json
from dataclasses import asdict

import numpy as np

from .errors import ConfigError
from .model import BackboneConfig, SubnetMask, VelocityModel

FORMAT = "flowprune-checkpoint-v1"


def save_checkpoint(path, model: VelocityModel, mask: SubnetMask) -> None:
    if mask.n_blocks != model.config.n_blocks:
        raise ConfigError("mask length does not match model block count")
    payload = {
        "__format__": np.array(FORMAT),
        "__config__": np.array(json.dumps(asdict(model.config), sort_keys=True)),
        "__mask__": np.array([int(a) for a in mask.active], dtype=np.int8),
        "__block_scales__": np.array(model.block_scales, dtype=np.float64),
    }
    for name, t in model.params.items():
        payload["param/" + name] = t.data
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_checkpoint(path) -> tuple[VelocityModel, SubnetMask]:
    try:
        with np.load(path, allow_pickle=False) as z:
            if str(z["__format__"]) != FORMAT:
                raise ConfigError(f"{path}: not a {FORMAT} file")
            config = BackboneConfig(**json.loads(str(z["__config__"])))
            mask = SubnetMask(active=tuple(bool(b) for b in z["__mask__"]))
            model = VelocityModel(config)
            model.block_scales = [float(s) for s in z["__block_scales__"]]
            for name in list(model.params):
                key = "param/" + name
                if key not in z:
                    raise ConfigError(f"{path}: missing parameter {name!r}")
                model.set_param(name, z[key])
    except FileNotFoundError:
        raise ConfigError(f"checkpoint file not found: {path}") from None
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed checkpoint ({exc})") from exc
    return model, mask
