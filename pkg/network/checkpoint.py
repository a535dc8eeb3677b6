"""Checkpoint container: a JSON manifest and one little-endian float32 blob

The archive is a zip with two stored (uncompressed) members and fixed
timestamps, so saving the same parameters twice gives identical bytes.
"""

import io
import json
import logging
import zipfile
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from errors import CheckpointError, ValidationError
from network.config import ModelConfig
from network.params import Parameters
from network.tvsrn import expected_shapes
from storage import atomic_write
from tensor_core.optim import AdamState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "tensors.bin"
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
_BLOB_DTYPE = np.dtype("<f4")
_ADAM_M = "adam.m/"
_ADAM_V = "adam.v/"


@dataclass
class TrainState:
    """Everything besides the weights needed to resume training"""

    step: int
    adam: AdamState
    rng_state: dict
    loss_trace: List[float] = field(default_factory=list)


def _member(name):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def _pack(entries):
    """Lay ``(name, array)`` pairs out in one blob; returns (index, bytes)"""
    index = []
    blob = io.BytesIO()
    for name, array in entries:
        index.append({"name": name, "shape": list(array.shape), "offset": blob.tell()})
        blob.write(np.ascontiguousarray(array, dtype=_BLOB_DTYPE).tobytes())
    return index, blob.getvalue()


def save_checkpoint(params: Parameters, config: ModelConfig, path, train_state: Optional[TrainState] = None):
    """
    Write ``params`` and ``config`` (plus optional training state) to ``path``

    The file appears atomically; a failed write leaves any previous
    checkpoint untouched.
    """
    entries = [(name, t.data) for name, t in params.items()]
    manifest = {"format_version": FORMAT_VERSION, "config": config.to_dict()}
    if train_state is not None:
        adam = train_state.adam
        for name in params:
            if name in adam.m:
                entries.append((_ADAM_M + name, adam.m[name]))
                entries.append((_ADAM_V + name, adam.v[name]))
        manifest["train_state"] = {
            "step": int(train_state.step),
            "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "step": adam.step},
            "rng_state": train_state.rng_state,
            "loss_trace": [float(v) for v in train_state.loss_trace],
        }
    manifest["tensors"], blob = _pack(entries)

    with atomic_write(path, "wb") as f:
        with zipfile.ZipFile(f, "w") as archive:
            archive.writestr(_member(MANIFEST_NAME), json.dumps(manifest, indent=2).encode("utf-8"))
            archive.writestr(_member(BLOB_NAME), blob)
    logger.info("Saved checkpoint %s (%d tensors)", path, len(params))


def _read_archive(path):
    try:
        with zipfile.ZipFile(path, "r") as archive:
            manifest = json.loads(archive.read(MANIFEST_NAME).decode("utf-8"))
            blob = archive.read(BLOB_NAME)
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: not a readable checkpoint ({e})") from e
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version!r} is not supported (expected {FORMAT_VERSION})")
    return manifest, blob


def _unpack(path, manifest, blob):
    tensors = {}
    for entry in manifest.get("tensors", []):
        name = entry["name"]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = int(entry["offset"])
        end = start + count * _BLOB_DTYPE.itemsize
        if start < 0 or end > len(blob):
            raise CheckpointError(f"{path}: tensor {name!r} runs past the end of the blob")
        tensors[name] = np.frombuffer(blob[start:end], dtype=_BLOB_DTYPE).reshape(shape)
    return tensors


def load_training_checkpoint(path):
    """
    Read a checkpoint

    Returns:
        (Parameters, ModelConfig, TrainState or None)

    Raises:
        CheckpointError: On a malformed file, a version mismatch, or a tensor
            that is missing, unexpected or misshapen for the stored config
    """
    manifest, blob = _read_archive(path)
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValidationError) as e:
        raise CheckpointError(f"{path}: bad model config ({e})") from e
    tensors = _unpack(path, manifest, blob)

    params = Parameters()
    for name, shape in expected_shapes(config).items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if tensors[name].shape != shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
        params.add(name, tensors[name])
    unexpected = [n for n in tensors if n not in params and not n.startswith((_ADAM_M, _ADAM_V))]
    if unexpected:
        raise CheckpointError(f"{path}: unexpected tensors {', '.join(unexpected)}")

    train_state = None
    if "train_state" in manifest:
        raw = manifest["train_state"]
        adam = AdamState(**raw["adam"])
        for name in params:
            if _ADAM_M + name in tensors:
                adam.m[name] = tensors[_ADAM_M + name].astype(params[name].dtype)
                adam.v[name] = tensors[_ADAM_V + name].astype(params[name].dtype)
        train_state = TrainState(
            step=int(raw["step"]), adam=adam, rng_state=raw["rng_state"], loss_trace=list(raw["loss_trace"])
        )
    logger.info("Loaded checkpoint %s (%d tensors)", path, len(params))
    return params, config, train_state


def load_checkpoint(path):
    """Read parameters and config from a checkpoint; returns (Parameters, ModelConfig)"""
    params, config, _ = load_training_checkpoint(path)
    return params, config
