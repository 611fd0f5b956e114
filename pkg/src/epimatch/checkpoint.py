"""Binary checkpoint format for model parameters.

Layout (little-endian)::

    magic   "MLFC"
    u32     version (currently 1)
    u32     stage-1 input channels, u32 stage-2 input channels
    u32     d, u32 blocks
    u8      lfc enabled, u32 k, u32 heads
    f64     regression loss weight
    u8      siamese mode (0 none, 1 a, 2 b)
    u32     tensor count
    tensor: u16 name length, name bytes (utf-8), u8 ndim, ndim*u64 dims,
            f64 payload (row-major)

Tensors are written in schema order, so save(load(f)) reproduces ``f``
byte for byte.  On load every tensor is checked against the shapes implied
by the stored configuration.
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from . import pipeline
from .errors import BadMagicError, ShapeMismatchError, TruncatedFileError, VersionMismatchError
from .pipeline import LossConfig, ModelConfig, ModelParams

_MAGIC = b"MLFC"
_VERSION = 1

_SIAMESE_CODE = {"none": 0, "a": 1, "b": 2}
_SIAMESE_NAME = {v: k for k, v in _SIAMESE_CODE.items()}


def save_checkpoint(path, params: ModelParams, lcfg: LossConfig) -> None:
    cfg = params.config
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<IIII", cfg.stage1().in_channels, cfg.stage2().in_channels,
                            cfg.d, cfg.blocks))
        f.write(struct.pack("<BII", int(cfg.lfc_enabled), cfg.lfc_k, cfg.lfc_heads))
        f.write(struct.pack("<dB", lcfg.reg_weight, _SIAMESE_CODE[lcfg.siamese]))
        f.write(struct.pack("<I", len(params.arrays)))
        for name, arr in params.arrays.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(f, count: int) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise TruncatedFileError(f"wanted {count} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path) -> tuple[ModelParams, LossConfig]:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if len(magic) < len(_MAGIC):
            raise TruncatedFileError("file shorter than magic")
        if magic != _MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != _VERSION:
            raise VersionMismatchError(f"checkpoint version {version}, expected {_VERSION}")
        in1, in2, d, blocks = struct.unpack("<IIII", _read_exact(f, 16))
        lfc_enabled, k, heads = struct.unpack("<BII", _read_exact(f, 9))
        reg_weight, siamese_code = struct.unpack("<dB", _read_exact(f, 9))
        if siamese_code not in _SIAMESE_NAME:
            raise ShapeMismatchError(f"unknown siamese code {siamese_code}")
        cfg = ModelConfig(d=d, blocks=blocks, lfc_enabled=bool(lfc_enabled),
                          lfc_k=k, lfc_heads=heads)
        if (in1, in2) != (cfg.stage1().in_channels, cfg.stage2().in_channels):
            raise ShapeMismatchError(f"unsupported stage widths ({in1}, {in2})")
        lcfg = LossConfig(reg_weight=reg_weight, siamese=_SIAMESE_NAME[siamese_code])

        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            dims = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim))
            size = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(_read_exact(f, 8 * size), dtype="<f8").reshape(dims).copy()
            tensors[name] = arr

    schema = pipeline.param_schema(cfg)
    if set(tensors) != set(schema):
        extra = sorted(set(tensors) - set(schema))
        missing = sorted(set(schema) - set(tensors))
        raise ShapeMismatchError(f"tensor set mismatch: extra={extra} missing={missing}")
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, (shape, _) in schema.items():
        if tensors[name].shape != shape:
            raise ShapeMismatchError(
                f"{name}: stored {tensors[name].shape}, config implies {shape}")
        arrays[name] = tensors[name]
    return ModelParams(config=cfg, arrays=arrays), lcfg
