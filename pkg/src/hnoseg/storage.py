"""Binary tensor container, checkpoints and on-disk datasets.

Container layout (little-endian)::

    b"HNOX"  u32 version  u64 header_len  header (UTF-8 JSON)  u64 n_tensors
    per tensor: u16 name_len  name (UTF-8)  u8 dtype (0=f32, 1=f64)  u8 rank
                u64 dims[rank]  raw data in C order

Checkpoints store ``{"config": ..., "meta": ...}`` as the header; datasets
store their manifest and keep one image/labels pair per sample.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .models import Model, ModelConfig, build_network, parameter_shapes
from .synthdata import Dataset, Sample, SceneSpec, make_scenes

MAGIC = b"HNOX"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}

PathLike = Union[str, os.PathLike]


class ContainerError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def encode_container(header: dict, tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    text = json.dumps(header, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<Q", len(text)), text, struct.pack("<Q", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r}: name or rank too large for the container")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<BB", DTYPE_CODES[dt], arr.ndim)]
        parts += [struct.pack("<Q", n) for n in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(
                f"truncated container: {what} needs {n} bytes, {len(self.buf) - self.pos} remain",
                self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_container(buf: bytes):
    """Return ``(header, tensors, offsets)``; offsets give each tensor's record start."""
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise ContainerError("bad magic, not an HNOX container", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}", 4)
    (hlen,) = r.unpack("<Q", "header length")
    start = r.pos
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed header JSON: {exc}", start) from None
    (count,) = r.unpack("<Q", "tensor count")
    tensors, offsets = {}, {}
    for i in range(count):
        rec = r.pos
        (nlen,) = r.unpack("<H", f"tensor {i} name length")
        name = r.take(nlen, f"tensor {i} name").decode("utf-8")
        code, rank = r.unpack("<BB", f"tensor {name!r} dtype/rank")
        if code not in CODE_DTYPES:
            raise ContainerError(f"tensor {name!r}: unknown dtype code {code}", r.pos - 2)
        dims = r.unpack(f"<{rank}Q", f"tensor {name!r} dims") if rank else ()
        dt = CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        data = r.take(nbytes, f"tensor {name!r} data")
        if name in tensors:
            raise ContainerError(f"duplicate tensor name {name!r}", rec)
        tensors[name] = np.frombuffer(data, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        offsets[name] = rec
    if r.pos != len(buf):
        raise ContainerError(f"{len(buf) - r.pos} trailing bytes after last tensor", r.pos)
    return header, tensors, offsets


def write_container(path: PathLike, header: dict, tensors: dict) -> None:
    Path(path).write_bytes(encode_container(header, tensors))


def read_container(path: PathLike):
    header, tensors, _ = decode_container(Path(path).read_bytes())
    return header, tensors


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict                       # name -> ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Model, meta: Optional[dict] = None) -> "Checkpoint":
        return cls(model.config, {k: t.numpy().copy() for k, t in model.params.items()}, dict(meta or {}))

    def to_model(self) -> Model:
        dtype = next(iter(self.params.values())).dtype.type if self.params else np.float64
        model = build_network(self.config, dtype=dtype)
        model.set_params(self.params)
        return model


def _name_mismatch(expected: set, found: set) -> str:
    missing = sorted(expected - found)
    extra = sorted(found - expected)
    return f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}"


def save_checkpoint(model: Union[Model, Checkpoint], meta: Optional[dict], path: PathLike) -> None:
    ckpt = model if isinstance(model, Checkpoint) else Checkpoint.from_model(model, meta)
    if meta is not None:
        ckpt.meta = dict(meta)
    write_container(path, {"config": ckpt.config.to_dict(), "meta": ckpt.meta}, ckpt.params)


def read_checkpoint(path: PathLike, config: Optional[ModelConfig] = None,
                    dtype=None) -> Checkpoint:
    """Parse and validate a checkpoint file.

    ``config`` (if given) must describe the same parameter set as the file;
    ``dtype`` (if given) must match every stored tensor.
    """
    header, tensors, offsets = decode_container(Path(path).read_bytes())
    if "config" not in header:
        raise ContainerError("header has no model config", 16)
    stored = ModelConfig.from_dict(header["config"])
    target = config or stored
    shapes = parameter_shapes(target)
    if set(shapes) != set(tensors):
        raise ValueError(_name_mismatch(set(shapes), set(tensors)))
    for name, arr in tensors.items():
        if arr.shape != tuple(shapes[name]):
            raise ContainerError(f"tensor {name!r} has shape {arr.shape}, expected {shapes[name]}",
                                 offsets[name])
        if dtype is not None and arr.dtype != np.dtype(dtype):
            raise ContainerError(f"tensor {name!r} is {arr.dtype}, expected {np.dtype(dtype)}",
                                 offsets[name])
    return Checkpoint(target, tensors, header.get("meta", {}))


def load_checkpoint(path: PathLike, config: Optional[ModelConfig] = None, dtype=None) -> Model:
    return read_checkpoint(path, config, dtype).to_model()


# ------------------------------------------------------------------- datasets

MANIFEST = "manifest.json"
SAMPLES = "samples.hnox"


def save_dataset(dataset: Dataset, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dataset.manifest()
    manifest["samples"] = SAMPLES
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    tensors = {}
    for i, s in enumerate(dataset.train + dataset.val):
        tensors[f"sample{i}.image"] = s.image
        tensors[f"sample{i}.labels"] = s.labels
    write_container(directory / SAMPLES, {"kind": "dataset", "seed": dataset.seed}, tensors)
    return directory


def load_dataset(directory: PathLike) -> Dataset:
    """Load stored samples; scenes are regenerated from the manifest seed and spec."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
    spec = SceneSpec.from_dict(manifest["spec"])
    _, tensors = read_container(directory / manifest.get("samples", SAMPLES))
    ids = list(manifest["train_ids"]) + list(manifest["val_ids"])
    scenes = make_scenes(int(manifest["seed"]), len(ids), spec)
    resolution = tuple(manifest["resolution"])
    samples = []
    for i in ids:
        try:
            image, labels = tensors[f"sample{i}.image"], tensors[f"sample{i}.labels"]
        except KeyError:
            raise ValueError(f"dataset container lacks sample {i}") from None
        samples.append(Sample(image, labels, scenes[i].seed, resolution))
    n_train = len(manifest["train_ids"])
    return Dataset(int(manifest["seed"]), spec, resolution, scenes, samples[:n_train], samples[n_train:])

