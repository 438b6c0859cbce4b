"""Dense float64 tensors and their binary serialization.

Arrays are plain C-contiguous ``numpy.float64`` ndarrays throughout the
package; this module pins the conventions (row-major layout, finite
values) and the on-disk format used by checkpoints and caches:

    u32 ndim | u32 dims[ndim] | float64 data, row-major

all little-endian.
"""

import struct
from typing import BinaryIO, Sequence

import numpy as np

from .errors import InvalidShape, IoError, ShapeMismatch

Tensor = np.ndarray

_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def _check_shape(shape: Sequence[int]) -> tuple:
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise InvalidShape("shape must have at least one dimension")
    for d in dims:
        if d < 1:
            raise InvalidShape(f"dimension sizes must be >= 1, got {dims}")
    return dims


def zeros(shape: Sequence[int]) -> Tensor:
    """All-zero tensor of the given shape (every dimension >= 1)."""
    return np.zeros(_check_shape(shape), dtype=np.float64)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Elementwise add/sub/mul of two equal-shaped tensors."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"operand shapes differ: {a.shape} vs {b.shape}")
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"op must be one of {sorted(_OPS)}, got {op!r}") from None
    return fn(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def scale(a: Tensor, s: float) -> Tensor:
    """Every entry multiplied by the scalar ``s``."""
    return np.asarray(a, dtype=np.float64) * float(s)


def as_tensor(a) -> Tensor:
    """Contiguous float64 view/copy of the input."""
    return np.ascontiguousarray(a, dtype=np.float64)


def write_tensor(f: BinaryIO, a: Tensor) -> None:
    """Append one tensor in the binary format described in the module docs."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    _check_shape(arr.shape)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f8", copy=False).tobytes())


def read_tensor(f: BinaryIO) -> Tensor:
    """Read one tensor written by :func:`write_tensor`."""
    head = f.read(4)
    if len(head) != 4:
        raise IoError("truncated tensor header")
    (ndim,) = struct.unpack("<I", head)
    if ndim == 0 or ndim > 32:
        raise IoError(f"implausible tensor rank {ndim}")
    raw = f.read(4 * ndim)
    if len(raw) != 4 * ndim:
        raise IoError("truncated tensor dimensions")
    dims = struct.unpack(f"<{ndim}I", raw)
    count = 1
    for d in dims:
        if d < 1:
            raise IoError(f"invalid stored dimension {d}")
        count *= d
    data = f.read(8 * count)
    if len(data) != 8 * count:
        raise IoError("truncated tensor data")
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(dims)
