"""MVDM model container: classifier and regressor chunks in one format.

Layout (little-endian): magic b"MVDM", version u32, then chunks of
{type u32, payload length u64, payload}. Chunk types: 1 = dense classifier,
2 = pose regressor. A payload is a scalar-metadata block (u32 count, then
u16-length-prefixed utf8 key + f64 value) followed by an array block
(u32 count, then u16-length-prefixed utf8 name, dtype code u8, ndim u8,
u32 dims, raw data). Classifier weights are stored as f32.

A file may carry both chunks; loaders scan for their type.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .classifier.fcn import FcnConfig, FcnModel
from .regress import RegressorModel

MAGIC = b"MVDM"
VERSION = 1
CHUNK_CLASSIFIER = 1
CHUNK_REGRESSOR = 2

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"),
           3: np.dtype("<i8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


class ModelFormatError(ValueError):
    """Not an MVDM file, or a malformed/missing chunk."""


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf: bytes, pos: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    return buf[pos:pos + n].decode("utf-8"), pos + n


def _pack_payload(meta: dict, arrays: dict) -> bytes:
    parts = [struct.pack("<I", len(meta))]
    for key, value in meta.items():
        parts.append(_pack_str(key))
        parts.append(struct.pack("<d", float(value)))
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        code = _DTYPE_CODES[arr.dtype.newbyteorder("<")]
        parts.append(_pack_str(name))
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def _unpack_payload(buf: bytes) -> tuple[dict, dict]:
    pos = 0
    (n_meta,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    meta = {}
    for _ in range(n_meta):
        key, pos = _unpack_str(buf, pos)
        (meta[key],) = struct.unpack_from("<d", buf, pos)
        pos += 8
    (n_arrays,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays = {}
    for _ in range(n_arrays):
        name, pos = _unpack_str(buf, pos)
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(buf, dtype, count, pos).reshape(shape).copy()
        pos += count * dtype.itemsize
    return meta, arrays


def write_chunks(path, chunks: list[tuple[int, dict, dict]]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        for chunk_type, meta, arrays in chunks:
            payload = _pack_payload(meta, arrays)
            fh.write(struct.pack("<IQ", chunk_type, len(payload)))
            fh.write(payload)


def read_chunks(path) -> list[tuple[int, dict, dict]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    pos = 8
    chunks = []
    while pos < len(raw):
        chunk_type, length = struct.unpack_from("<IQ", raw, pos)
        pos += 12
        meta, arrays = _unpack_payload(raw[pos:pos + length])
        chunks.append((chunk_type, meta, arrays))
        pos += length
    return chunks


def _find_chunk(path, chunk_type: int) -> tuple[dict, dict]:
    for found_type, meta, arrays in read_chunks(path):
        if found_type == chunk_type:
            return meta, arrays
    raise ModelFormatError(f"{path}: no chunk of type {chunk_type}")


def classifier_chunk(model: FcnModel) -> tuple[int, dict, dict]:
    cfg = model.config
    meta = {"window": cfg.window, "n_labels": cfg.n_labels,
            "mid_kernel": cfg.mid_kernel,
            "final_kernel": cfg.resolved_final_kernel,
            "float64": 1.0 if model.dtype == np.float64 else 0.0,
            "n_blocks": len(cfg.channels)}
    for i, c in enumerate(cfg.channels):
        meta[f"channels.{i}"] = c
    arrays = {name: value.astype(np.float32)
              for name, value, _ in model.parameters()}
    return CHUNK_CLASSIFIER, meta, arrays


def save_classifier(path, model: FcnModel) -> None:
    write_chunks(path, [classifier_chunk(model)])


def load_classifier(path) -> FcnModel:
    meta, arrays = _find_chunk(path, CHUNK_CLASSIFIER)
    channels = tuple(int(meta[f"channels.{i}"])
                     for i in range(int(meta["n_blocks"])))
    cfg = FcnConfig(window=int(meta["window"]), n_labels=int(meta["n_labels"]),
                    channels=channels, mid_kernel=int(meta["mid_kernel"]),
                    final_kernel=int(meta["final_kernel"]),
                    dtype="float64" if meta.get("float64") else "float32")
    model = FcnModel(cfg, seed=0)
    for name, value, _ in model.parameters():
        if name not in arrays:
            raise ModelFormatError(f"missing weight array {name}")
        if arrays[name].shape != value.shape:
            raise ModelFormatError(f"weight {name} has shape "
                                   f"{arrays[name].shape}, expected {value.shape}")
        value[:] = arrays[name].astype(model.dtype)
    return model


def regressor_chunk(model: RegressorModel) -> tuple[int, dict, dict]:
    meta = {"ridge_lambda": model.ridge_lambda, "n_labels": model.n_labels,
            "n_joints": model.n_joints}
    arrays = {"weights": model.weights.astype(np.float64),
              "feat_mean": model.feat_mean.astype(np.float64),
              "feat_scale": model.feat_scale.astype(np.float64),
              "smoothing": np.asarray(model.smoothing, dtype=np.float64)}
    return CHUNK_REGRESSOR, meta, arrays


def save_regressor(path, model: RegressorModel) -> None:
    write_chunks(path, [regressor_chunk(model)])


def load_regressor(path) -> RegressorModel:
    meta, arrays = _find_chunk(path, CHUNK_REGRESSOR)
    return RegressorModel(weights=arrays["weights"],
                          ridge_lambda=float(meta["ridge_lambda"]),
                          feat_mean=arrays["feat_mean"],
                          feat_scale=arrays["feat_scale"],
                          n_labels=int(meta["n_labels"]),
                          n_joints=int(meta["n_joints"]),
                          smoothing=arrays["smoothing"])
