"""Self-describing checkpoint archive with bit-exact round trips.

Layout: an 8-byte magic, a 4-byte little-endian header length, a canonical
JSON header (sorted keys, no whitespace), then the raw parameter bytes in
header order. Saving a loaded checkpoint reproduces the file byte for
byte, which is what the frozen-weight verification relies on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch

from .errors import ContractError
from .model import Separator, build_separator
from .specs import ArchitectureSpec, FreezeSpec

MAGIC = b"WUSEPCK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """In-memory image of a checkpoint file."""

    architecture: dict[str, Any]
    enabled_skips: list[int]
    freeze: Optional[dict[str, Any]]
    groups: dict[str, dict[str, np.ndarray]]  # group -> param name -> array
    extra: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def spec(self) -> ArchitectureSpec:
        return ArchitectureSpec.from_dict(self.architecture)

    @property
    def freeze_spec(self) -> Optional[FreezeSpec]:
        return FreezeSpec.from_dict(self.freeze) if self.freeze else None

    def group_bytes(self, group: str) -> bytes:
        params = self.groups[group]
        return b"".join(params[name].tobytes() for name in sorted(params))

    def build(self) -> Separator:
        """Reconstruct the separator and load the stored weights."""
        separator = build_separator(self.spec, enabled_skips=self.enabled_skips)
        with torch.no_grad():
            by_name = {
                name: arr for params in self.groups.values() for name, arr in params.items()
            }
            for name, param in separator.named_parameters():
                if name not in by_name:
                    raise ContractError(f"checkpoint is missing parameter {name}")
                arr = by_name.pop(name)
                if tuple(arr.shape) != tuple(param.shape):
                    raise ContractError(
                        f"checkpoint parameter {name} has shape {arr.shape}, "
                        f"model expects {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(arr.copy()))
            if by_name:
                raise ContractError(f"checkpoint has unknown parameters: {sorted(by_name)}")
        return separator


def snapshot(separator: Separator, freeze: FreezeSpec | None = None,
             extra: dict[str, Any] | None = None) -> Checkpoint:
    """Copy the separator's parameters into a checkpoint image."""
    groups: dict[str, dict[str, np.ndarray]] = {}
    for group, params in separator.parameter_groups().items():
        groups[group] = {
            name: param.detach().cpu().numpy().copy() for name, param in params
        }
    return Checkpoint(
        architecture=separator.spec.to_dict(),
        enabled_skips=list(separator.enabled_skips),
        freeze=freeze.to_dict() if freeze else None,
        groups=groups,
        extra=dict(extra or {}),
    )


def save_checkpoint(path: str | Path, separator_or_ckpt: Separator | Checkpoint,
                    freeze: FreezeSpec | None = None,
                    extra: dict[str, Any] | None = None) -> Path:
    if isinstance(separator_or_ckpt, Checkpoint):
        ckpt = separator_or_ckpt
    else:
        ckpt = snapshot(separator_or_ckpt, freeze=freeze, extra=extra)
    header: dict[str, Any] = {
        "format_version": ckpt.format_version,
        "architecture": ckpt.architecture,
        "enabled_skips": ckpt.enabled_skips,
        "freeze": ckpt.freeze,
        "extra": ckpt.extra,
        "groups": {
            group: [
                {
                    "name": name,
                    "dtype": str(arr.dtype),
                    "shape": list(arr.shape),
                }
                for name, arr in sorted(ckpt.groups[group].items())
            ]
            for group in sorted(ckpt.groups)
        },
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for group in sorted(ckpt.groups):
            for name in sorted(ckpt.groups[group]):
                arr = ckpt.groups[group][name]
                fh.write(np.ascontiguousarray(arr).tobytes())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContractError(f"{path} is not a checkpoint file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        if header["format_version"] != FORMAT_VERSION:
            raise ContractError(
                f"unsupported checkpoint format version {header['format_version']}"
            )
        groups: dict[str, dict[str, np.ndarray]] = {}
        for group in sorted(header["groups"]):
            groups[group] = {}
            for entry in header["groups"][group]:
                dtype = np.dtype(entry["dtype"])
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * dtype.itemsize)
                groups[group][entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return Checkpoint(
        architecture=header["architecture"],
        enabled_skips=list(header["enabled_skips"]),
        freeze=header["freeze"],
        groups=groups,
        extra=header.get("extra", {}),
        format_version=header["format_version"],
    )
