"""Checkpoints: a JSON manifest naming every tensor plus one flat binary blob.

The manifest maps tensor name to shape, dtype string, byte offset, and byte
length inside the blob; tensors are laid out in sorted-name order,
little-endian. Scalars and rng states ride in the manifest's "extra" field
as plain JSON. Round trips are bit-exact, which the training-resume
contract depends on.
"""

import json
import os

import numpy as np

from ..errors import ConfigError

FORMAT_NAME = "edt-checkpoint-v1"


def _little(arr):
    dt = arr.dtype
    if dt.byteorder == ">":
        arr = arr.astype(dt.newbyteorder("<"))
    return np.ascontiguousarray(arr)


def save_arrays(stem, arrays, extra=None):
    """Write `stem`.json + `stem`.bin; returns the stem path."""
    manifest = {"format": FORMAT_NAME, "tensors": {}, "extra": extra or {}}
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = _little(np.asarray(arrays[name]))
        raw = arr.tobytes()
        manifest["tensors"][name] = {
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    with open(stem + ".bin", "wb") as fh:
        for raw in chunks:
            fh.write(raw)
    with open(stem + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return stem


def load_arrays(stem):
    """Read a checkpoint; returns (arrays dict, extra dict)."""
    try:
        with open(stem + ".json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no checkpoint manifest at {stem}.json") from None
    if manifest.get("format") != FORMAT_NAME:
        raise ConfigError(f"{stem}.json is not a {FORMAT_NAME} manifest")
    with open(stem + ".bin", "rb") as fh:
        blob = fh.read()
    arrays = {}
    for name, meta in manifest["tensors"].items():
        lo, n = meta["offset"], meta["nbytes"]
        if lo + n > len(blob):
            raise ConfigError(
                f"{stem}.bin is {len(blob)} bytes but tensor {name!r} needs [{lo}, {lo + n})"
            )
        arr = np.frombuffer(blob[lo:lo + n], dtype=np.dtype(meta["dtype"]))
        arrays[name] = arr.reshape(meta["shape"]).copy()
    return arrays, manifest.get("extra", {})


MODEL_PREFIX = "model/"


def save_training_checkpoint(stem, model, optimizer=None, extra=None):
    """Model parameters (and optimizer moments when given) under one stem."""
    arrays = {MODEL_PREFIX + k: v for k, v in model.state_arrays().items()}
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    payload = dict(extra or {})
    payload["model_config"] = model.config.to_dict()
    return save_arrays(stem, arrays, payload)


def load_model_checkpoint(stem, zero_gates=True):
    """Rebuild the model a checkpoint was saved from and load its weights.

    Returns (model, extra). Tensor mismatches raise the checkpoint error
    listing every offending name.
    """
    from ..architecture import EdtModel, ModelConfig

    arrays, extra = load_arrays(stem)
    if "model_config" not in extra:
        raise ConfigError(f"{stem}.json carries no model_config to rebuild from")
    config = ModelConfig.from_dict(extra["model_config"])
    model = EdtModel(config, seed=0, zero_gates=zero_gates)
    weights = {
        k[len(MODEL_PREFIX):]: v for k, v in arrays.items() if k.startswith(MODEL_PREFIX)
    }
    model.load_state_arrays(weights)
    return model, extra
