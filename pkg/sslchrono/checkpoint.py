"""Single-file model checkpoints.

Layout: one line of JSON (format, version, model config, head kind, manifest,
SHA-256 of the payload, free-form metadata), a blank line, then every parameter
as little-endian float32 in manifest order.
"""
import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from traitlets import TraitError

from .ndgrad import Tensor
from .transformer import ModelConfig, ModelParams, init_params, part_of
from .util import CheckpointError, DestinationNotWritableError, ensure_writable_dir

__all__ = ["CHECKPOINT_VERSION", "Checkpoint", "load_checkpoint", "save_checkpoint"]

CHECKPOINT_FORMAT = "sslchrono-checkpoint"
CHECKPOINT_VERSION = 1
SEPARATOR = b"\n\n"
PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    params: ModelParams
    metadata: Dict[str, Any] = field(default_factory=dict)
    checksum: str = ""


def _payload(params: ModelParams):
    manifest, chunks, offset = [], [], 0
    for name in params:
        array = np.ascontiguousarray(params[name].data, dtype=PAYLOAD_DTYPE)
        manifest.append(
            {"name": name, "shape": list(array.shape), "offset": offset, "part": part_of(name)}
        )
        chunks.append(array.tobytes())
        offset += array.nbytes
    return manifest, b"".join(chunks)


def save_checkpoint(
    path: Union[str, Path], params: ModelParams, metadata: Optional[Dict[str, Any]] = None
) -> Path:
    """Raises: DestinationNotWritableError"""
    path = Path(path)
    manifest, payload = _payload(params)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": params.config.to_dict(),
        "head_kind": params.head_kind,
        "manifest": manifest,
        "checksum": hashlib.sha256(payload).hexdigest(),
        "metadata": metadata or {},
    }
    ensure_writable_dir(path.parent)
    try:
        encoded = json.dumps(header, sort_keys=True).encode("utf8")
        path.write_bytes(encoded + SEPARATOR + payload)
    except OSError:
        raise DestinationNotWritableError(path)
    return path


def _read_header(path: Path):
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Can't read checkpoint {path}: {e}")
    head, sep, payload = raw.partition(SEPARATOR)
    if not sep:
        raise CheckpointError(f"{path} is not a checkpoint (no header)")
    try:
        header = json.loads(head.decode("utf8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has an unreadable header: {e}")
    if not isinstance(header, dict) or header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {header.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    return header, payload


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read and verify a checkpoint; load_checkpoint(save_checkpoint(p)) is
    bitwise identical to p.

    Raises: CheckpointError
    """
    path = Path(path)
    header, payload = _read_header(path)
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("checksum"):
        raise CheckpointError(f"{path} failed its checksum (corrupted payload)")
    try:
        config = ModelConfig(**header["model_config"])
        config.validate_config()
        head_kind = header["head_kind"]
        expected = init_params(config.copy(head_kind=head_kind), np.random.default_rng(0))
    except (KeyError, TypeError, TraitError, ValueError) as e:
        raise CheckpointError(f"{path} has an invalid model config: {e}")

    manifest = header["manifest"]
    if [entry["name"] for entry in manifest] != list(expected):
        raise CheckpointError(f"{path} manifest names don't match its model config")
    tensors = OrderedDict()
    offset = 0
    for entry in manifest:
        name, shape = entry["name"], tuple(entry["shape"])
        if shape != expected[name].shape:
            raise CheckpointError(
                f"{path}: {name} has shape {shape}, the model config needs "
                f"{expected[name].shape}"
            )
        if entry["offset"] != offset or entry["part"] != part_of(name):
            raise CheckpointError(f"{path}: manifest entry for {name} is inconsistent")
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * PAYLOAD_DTYPE.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path} is truncated")
        array = np.frombuffer(payload, PAYLOAD_DTYPE, count, offset).reshape(shape)
        tensors[name] = Tensor(array.astype(np.float32), name=name)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path} has {len(payload) - offset} trailing bytes")
    return Checkpoint(
        ModelParams(config.copy(head_kind=head_kind), tensors, head_kind),
        header.get("metadata", {}),
        digest,
    )
