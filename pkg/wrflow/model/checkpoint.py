"""
Policy checkpoint container.

Layout::

    WRFLOW-CKPT\\n
    {"config": {...}, "format_version": 1, "params": [{"name", "shape", "offset"}, ...]}\\n
    <little-endian float64 blobs, concatenated in header order>

The header is JSON with sorted keys and offsets count bytes from the start
of the blob section, so saving a loaded checkpoint reproduces it byte for
byte.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Union

import numpy as np

from wrflow.autodiff import Tensor
from wrflow.errors import ConfigError, WrflowError
from wrflow.model.config import ModelConfig
from wrflow.model.policy import DualStreamPolicy, parameter_layout

logger = logging.getLogger(__name__)

MAGIC = b"WRFLOW-CKPT\n"
FORMAT_VERSION = 1

_DTYPE = np.dtype("<f8")


class CheckpointError(WrflowError, ValueError):
    """Malformed or incompatible checkpoint file."""


def checkpoint_bytes(policy: DualStreamPolicy) -> bytes:
    """Serialize a policy to the checkpoint container."""
    entries = []
    blobs = []
    offset = 0
    for name, param in policy.parameters.items():
        blob = np.ascontiguousarray(param.data, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(param.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)

    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(policy.config),
        "params": entries,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + head + b"\n" + b"".join(blobs)


def policy_from_bytes(payload: bytes) -> DualStreamPolicy:
    if not payload.startswith(MAGIC):
        raise CheckpointError("Not a wrflow checkpoint (bad magic line)")
    rest = payload[len(MAGIC):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise CheckpointError("Truncated checkpoint header")
    try:
        header = json.loads(rest[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Unreadable checkpoint header: {exc}") from None

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format_version {version}")

    try:
        config = ModelConfig(**header["config"]).validate()
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"Checkpoint header has an unusable model config: {exc}") from None
    except ConfigError as exc:
        raise CheckpointError(f"Checkpoint model config is invalid: {exc}") from None
    expected = {name: shape for name, shape, _, _ in parameter_layout(config)}
    blob = rest[newline + 1:]

    params = {}
    for entry in header["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if expected.get(name) != shape:
            raise CheckpointError(f"Parameter {name} with shape {shape} does not match the config")
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + count * _DTYPE.itemsize
        if stop > len(blob):
            raise CheckpointError(f"Parameter {name} runs past the end of the file")
        data = np.frombuffer(blob[start:stop], dtype=_DTYPE).reshape(shape)
        params[name] = Tensor.parameter(data.astype(np.float64), name=name)

    missing = sorted(set(expected) - set(params))
    if missing:
        raise CheckpointError(f"Checkpoint is missing parameters: {missing[:5]}")
    return DualStreamPolicy(config, params)


def save_checkpoint(policy: DualStreamPolicy, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(policy))
    logger.info(f"Saved checkpoint {path} ({policy.num_parameters()} parameters)")
    return path


def load_checkpoint(path: Union[str, Path]) -> DualStreamPolicy:
    path = Path(path)
    policy = policy_from_bytes(path.read_bytes())
    logger.info(f"Loaded checkpoint {path}")
    return policy
