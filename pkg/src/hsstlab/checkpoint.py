"""``HSSTCKPT`` checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"HSSTCKPT"
    uint32    format version (1)
    uint32    header length in bytes
    header    UTF-8 JSON: {"arch", "ema_weight", "kind", "inference", "tensors", "meta"}
    payload   float32 little-endian tensors, concatenated in header order

``tensors`` is a list of {"name": "<role>/<tensor name>", "shape": [...]}
where role is ``probe``, ``gallery`` or ``classifier``.  ``inference`` names
the role served at evaluation time and is always ``probe``.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .model import Arch, ModelPair, NetworkParams

MAGIC = b"HSSTCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


@dataclass
class Checkpoint:
    probe: NetworkParams
    gallery: NetworkParams | None = None
    classifier: np.ndarray | None = None
    ema_weight: float | None = None
    kind: str = "hsst"
    meta: dict = field(default_factory=dict)

    @property
    def inference_params(self) -> NetworkParams:
        return self.probe

    def pair(self) -> ModelPair:
        if self.gallery is None:
            raise FormatError("checkpoint holds no gallery parameters")
        return ModelPair(self.probe, self.gallery, self.ema_weight)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    entries = []
    blobs = []

    def add(role, name, values):
        arr = np.ascontiguousarray(np.asarray(values, dtype="<f4"))
        entries.append({"name": f"{role}/{name}", "shape": list(arr.shape)})
        blobs.append(arr.tobytes())

    for role, params in (("probe", ckpt.probe), ("gallery", ckpt.gallery)):
        if params is None:
            continue
        for name, t in params.tensors.items():
            add(role, name, t.detach().cpu().numpy())
    if ckpt.classifier is not None:
        add("classifier", "weight", ckpt.classifier)

    header = {
        "arch": ckpt.probe.arch.to_dict(),
        "ema_weight": ckpt.ema_weight,
        "kind": ckpt.kind,
        "inference": "probe",
        "tensors": entries,
        "meta": ckpt.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    arch = Arch.from_dict(header["arch"])
    offset = _PREFIX.size + hlen
    groups = {"probe": OrderedDict(), "gallery": OrderedDict()}
    classifier = None
    for entry in header["tensors"]:
        role, name = entry["name"].split("/", 1)
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 4
        if offset + n > len(raw):
            raise FormatError(f"{path}: payload truncated at {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=n // 4, offset=offset).reshape(shape).copy()
        offset += n
        if role == "classifier":
            classifier = arr.astype(np.float32)
        elif role in groups:
            groups[role][name] = torch.from_numpy(arr.astype(np.float32))
        else:
            raise FormatError(f"{path}: unknown tensor role {role!r}")
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    if header.get("inference", "probe") != "probe":
        raise FormatError(f"{path}: inference sub-net must be 'probe'")
    probe = NetworkParams(arch, groups["probe"])
    gallery = NetworkParams(arch, groups["gallery"]) if groups["gallery"] else None
    return Checkpoint(
        probe=probe,
        gallery=gallery,
        classifier=classifier,
        ema_weight=header.get("ema_weight"),
        kind=header.get("kind", "hsst"),
        meta=header.get("meta", {}),
    )
