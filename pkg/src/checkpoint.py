"""Single-file checkpoint container.

Layout: 4-byte magic, little-endian uint32 header length, a JSON header
(format version, kind, config snapshot, step counter, RNG state, metadata and a
tensor table), then the named parameter blobs as little-endian float32.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION

logger = logging.getLogger(__name__)

_HEADER_LEN = struct.Struct("<I")
_BLOB_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    """Raised for unreadable, mismatched or incompatible checkpoints."""


@dataclass
class Checkpoint:
    kind: str
    config: dict
    step: int = 0
    rng_state: str = ""
    meta: dict = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT_VERSION

    @classmethod
    def from_module(cls, kind: str, module: torch.nn.Module, config: dict,
                    step: int = 0, generator: Optional[torch.Generator] = None,
                    meta: Optional[dict] = None) -> "Checkpoint":
        tensors = {
            name: value.detach().cpu().float().numpy().astype(_BLOB_DTYPE)
            for name, value in module.state_dict().items()
        }
        rng_state = bytes(generator.get_state().tolist()).hex() if generator is not None else ""
        return cls(kind=kind, config=config, step=step, rng_state=rng_state,
                   meta=dict(meta or {}), tensors=tensors)

    @property
    def schedule(self) -> Optional[str]:
        return self.meta.get("schedule")

    def state_dict(self, prefix: str = "") -> Dict[str, torch.Tensor]:
        """Tensors whose names start with prefix, prefix stripped."""
        return {
            name[len(prefix):]: torch.from_numpy(np.array(array, dtype=np.float32))
            for name, array in self.tensors.items()
            if name.startswith(prefix)
        }

    def restore_generator(self, generator: torch.Generator) -> None:
        if self.rng_state:
            state = torch.tensor(list(bytes.fromhex(self.rng_state)), dtype=torch.uint8)
            generator.set_state(state)


def _header(ckpt: Checkpoint) -> dict:
    table = []
    offset = 0
    for name, array in ckpt.tensors.items():
        nbytes = int(np.asarray(array).size) * _BLOB_DTYPE.itemsize
        table.append({"name": name, "shape": list(np.shape(array)),
                      "offset": offset, "nbytes": nbytes})
        offset += nbytes
    return {
        "format_version": ckpt.format_version,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "tensors": table,
    }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(_header(ckpt), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, _HEADER_LEN.pack(len(header)), header]
    for array in ckpt.tensors.values():
        parts.append(np.ascontiguousarray(array, dtype=_BLOB_DTYPE).tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(ckpt))
    logger.info("Saved %s checkpoint (step %d) to %s", ckpt.kind, ckpt.step, path)
    return path


def parse_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{source} is not a checkpoint file (bad magic)")

    start = len(CHECKPOINT_MAGIC)
    (header_len,) = _HEADER_LEN.unpack_from(data, start)
    start += _HEADER_LEN.size
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source} has a corrupt header: {exc}") from exc

    version = header.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{source} has format version {version}, this build reads version "
            f"{CHECKPOINT_FORMAT_VERSION}"
        )

    blob_start = start + header_len
    tensors = {}
    for entry in header["tensors"]:
        begin = blob_start + entry["offset"]
        raw = data[begin:begin + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{source} is truncated inside tensor '{entry['name']}'")
        tensors[entry["name"]] = np.frombuffer(raw, dtype=_BLOB_DTYPE).reshape(entry["shape"]).copy()

    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        step=header["step"],
        rng_state=header["rng_state"],
        meta=header["meta"],
        tensors=tensors,
        format_version=version,
    )


def load_checkpoint(path, kind: Optional[str] = None,
                    schedule: Optional[str] = None) -> Checkpoint:
    """
    Read a checkpoint and check it against the caller's expectations.

    Args:
        path: Checkpoint file
        kind: Expected kind ("tokenizer", "teacher", "student"), or None
        schedule: Expected schedule string such as "1x1,2x2", or None

    Raises:
        CheckpointError: On bad magic, version, kind or schedule
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")

    ckpt = parse_checkpoint(path.read_bytes(), source=str(path))

    if kind is not None and ckpt.kind != kind:
        raise CheckpointError(f"{path} is a {ckpt.kind} checkpoint, expected {kind}")

    if schedule is not None and ckpt.schedule != schedule:
        raise CheckpointError(
            f"Schedule mismatch: {path} was trained on {ckpt.schedule}, "
            f"expected {schedule}"
        )

    return ckpt


def checkpoint_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]
