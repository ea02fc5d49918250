"""Binary file formats: image tensors and tiny-MLP weights.

Both formats are a single UTF-8 JSON header line followed by raw 32-bit
little-endian floats.

* image tensor: ``{"shape": [C, H, W]}`` then C*H*W floats, channel-major.
* MLP weights: ``{"dims": [d, hidden, K]}`` then W1 (hidden x d), b1, W2 (K x hidden), b2.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError, ShapeError

_F32 = np.dtype("<f4")


def _write(path, header, arrays):
    path = Path(path)
    payload = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays]) if arrays else np.zeros(0)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload.astype(_F32).tobytes())
    return path


def _read(path):
    path = Path(path)
    with open(path, "rb") as fh:
        line = fh.readline()
        body = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: malformed JSON header") from exc
    if len(body) % 4:
        raise InvalidInputError(f"{path}: payload is not a whole number of float32 values")
    return header, np.frombuffer(body, dtype=_F32).astype(np.float64)


def write_tensor(path, tensor):
    tensor = np.asarray(tensor)
    if tensor.ndim != 3:
        raise ShapeError(f"image tensors are C x H x W, got shape {tensor.shape}")
    return _write(path, {"shape": list(tensor.shape)}, [tensor])


def read_tensor(path):
    header, data = _read(path)
    shape = header.get("shape") if isinstance(header, dict) else None
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(v, int) and v >= 1 for v in shape)):
        raise InvalidInputError(f"{path}: header must carry a positive 3-element 'shape'")
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"{path}: expected {int(np.prod(shape))} floats, found {data.size}")
    return data.reshape(shape)


def write_mlp_weights(path, w1, b1, w2, b2):
    w1, b1, w2, b2 = (np.asarray(a, dtype=float) for a in (w1, b1, w2, b2))
    hidden, d = w1.shape
    k = w2.shape[0]
    if b1.shape != (hidden,) or w2.shape != (k, hidden) or b2.shape != (k,):
        raise ShapeError("inconsistent MLP weight shapes")
    return _write(path, {"dims": [d, hidden, k]}, [w1, b1, w2, b2])


def read_mlp_weights(path):
    """Return ``(w1, b1, w2, b2)`` as float64 arrays."""
    header, data = _read(path)
    dims = header.get("dims") if isinstance(header, dict) else None
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(v, int) and v >= 1 for v in dims)):
        raise InvalidInputError(f"{path}: header must carry a positive 3-element 'dims'")
    d, h, k = dims
    expected = d * h + h + h * k + k
    if data.size != expected:
        raise ShapeError(f"{path}: expected {expected} floats for dims {dims}, found {data.size}")
    sizes = np.cumsum([d * h, h, h * k])
    w1, b1, w2, b2 = np.split(data, sizes)
    return w1.reshape(h, d), b1, w2.reshape(k, h), b2
