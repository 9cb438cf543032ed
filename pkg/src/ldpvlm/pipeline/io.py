"""IDX parsing and versioned model files."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from ..classifier import NoiseAwareClassifier
from ..diffnum import DenseNetwork, Layer
from ..exceptions import IdxParseError, ModelFormatError
from ..vlm import LaplaceVLM

__all__ = ["load_idx", "write_idx", "save_model", "load_model", "FORMAT_VERSION"]

FORMAT_VERSION = 1

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def load_idx(path):
    """Read an IDX file (MNIST container) into a float64 array.

    The header is two zero bytes, a type code, the number of dimensions, then
    one big-endian uint32 per dimension.
    """
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise IdxParseError("file shorter than the 4-byte magic number", len(data))
    zero, type_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or type_code not in _IDX_TYPES or ndim == 0:
        raise IdxParseError(
            f"bad magic number: expected 0x000008NN (or another IDX type code), "
            f"got 0x{int.from_bytes(data[:4], 'big'):08X}", 0)
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxParseError(f"truncated header: need {ndim} dimension sizes", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    dtype = _IDX_TYPES[type_code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    body = data[header_end:]
    if len(body) < expected:
        raise IdxParseError(
            f"truncated body: expected {expected} bytes of data, found {len(body)}",
            header_end + len(body))
    if len(body) > expected:
        raise IdxParseError(f"{len(body) - expected} trailing bytes after data",
                            header_end + expected)
    arr = np.frombuffer(body, dtype=dtype, count=int(np.prod(dims, dtype=np.int64)))
    return arr.reshape(dims).astype(np.float64)


def write_idx(path, array, type_code=0x08):
    """Write ``array`` as IDX (used for fixtures and tests)."""
    array = np.asarray(array)
    dtype = _IDX_TYPES[type_code]
    header = struct.pack(">HBB", 0, type_code, array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(dtype).tobytes())


# --- model files ----------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _network_meta(net):
    return [{"activation": l.activation, "clip_radius": l.clip_radius} for l in net.layers]


def _network_arrays(prefix, net):
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"{prefix}/{i}/W"] = layer.W
        out[f"{prefix}/{i}/b"] = layer.b
    return out


def _rebuild_network(prefix, meta, arrays):
    layers = []
    for i, m in enumerate(meta):
        layers.append(Layer(arrays[f"{prefix}/{i}/W"], arrays[f"{prefix}/{i}/b"],
                            m["activation"], m["clip_radius"]))
    return DenseNetwork(layers)


def _checksum(meta_bytes, arrays):
    h = hashlib.sha256(meta_bytes)
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype=np.float64)
        h.update(name.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_model(model, path):
    """Persist a fitted :class:`LaplaceVLM` or :class:`NoiseAwareClassifier`."""
    if isinstance(model, LaplaceVLM):
        arrays = {**_network_arrays("encoder", model.encoder_),
                  **_network_arrays("decoder", model.decoder_),
                  "log_b": model.log_b_}
        meta = {
            "kind": "vlm",
            "params": model.get_params(),
            "n_features_in": model.n_features_in_,
            "b_mode": model.b_mode,
            "b": model.b_,
            "cdp_stamp": model.cdp_stamp_,
            "encoder": _network_meta(model.encoder_),
            "decoder": _network_meta(model.decoder_),
        }
    elif isinstance(model, NoiseAwareClassifier):
        arrays = {**_network_arrays("network", model.network_),
                  "input_mean": model.input_mean_, "input_scale": model.input_scale_}
        meta = {
            "kind": "classifier",
            "params": model.get_params(),
            "n_features_in": model.n_features_in_,
            "budget": getattr(model, "budget_", None),
            "clean_width": getattr(model, "clean_width_", None),
            "partner_width": getattr(model, "partner_width_", None),
            "network": _network_meta(model.network_),
        }
    else:
        raise TypeError(f"cannot save object of type {type(model).__name__}")
    meta["format_version"] = FORMAT_VERSION
    meta_bytes = json.dumps(_jsonable(meta), sort_keys=True).encode()
    payload = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
    payload["__meta__"] = np.frombuffer(meta_bytes, dtype=np.uint8)
    payload["__checksum__"] = np.frombuffer(_checksum(meta_bytes, arrays).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())
    return path


def load_model(path):
    """Inverse of :func:`save_model`; refuses other format versions and tampered files."""
    with np.load(path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    try:
        meta_bytes = arrays.pop("__meta__").tobytes()
        stored = arrays.pop("__checksum__").tobytes().decode()
        meta = json.loads(meta_bytes)
    except (KeyError, ValueError) as err:
        raise ModelFormatError(f"{path}: not a model file ({err})") from err
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: model format version {version} is not supported (expected {FORMAT_VERSION})")
    if _checksum(meta_bytes, arrays) != stored:
        raise ModelFormatError(f"{path}: checksum mismatch, file was modified")
    params = meta["params"]
    for key in ("encoder_hidden", "decoder_hidden", "hidden"):
        if isinstance(params.get(key), list):
            params[key] = tuple(params[key])
    if "categorical_groups" in params:
        params["categorical_groups"] = tuple(tuple(g) for g in params["categorical_groups"])
    if meta["kind"] == "vlm":
        model = LaplaceVLM(**params)
        model.encoder_ = _rebuild_network("encoder", meta["encoder"], arrays)
        model.decoder_ = _rebuild_network("decoder", meta["decoder"], arrays)
        model.log_b_ = arrays["log_b"].copy()
        model.n_features_in_ = meta["n_features_in"]
        model.cdp_stamp_ = meta["cdp_stamp"]
        model.training_log_ = []
        model._cont_mask = np.ones(model.n_features_in_, dtype=bool)
        for start, width in model.categorical_groups:
            model._cont_mask[start:start + width] = False
        return model
    if meta["kind"] == "classifier":
        model = NoiseAwareClassifier(**params)
        model.network_ = _rebuild_network("network", meta["network"], arrays)
        model.input_mean_ = arrays["input_mean"].copy()
        model.input_scale_ = arrays["input_scale"].copy()
        model.classes_ = np.arange(model.n_classes)
        model.n_features_in_ = meta["n_features_in"]
        if meta["budget"] is not None:
            model.budget_ = meta["budget"]
        if meta["clean_width"] is not None:
            model.clean_width_ = meta["clean_width"]
            model.partner_width_ = meta["partner_width"]
        return model
    raise ModelFormatError(f"{path}: unknown model kind {meta['kind']!r}")
