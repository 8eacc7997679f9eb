"""Dense numeric kernel.

All activations, parameters, and gradients in this library are carried by
C-contiguous ``float64`` NumPy arrays of rank 1 to 3.  This module holds the
few primitives that everything else builds on: the matrix-vector product and
vector concatenation together with their gradient transforms, a central
finite-difference oracle used to verify every backward pass, and the binary
tensor block format used by checkpoint and feature files.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Callable, Sequence

import numpy as np

from .errors import NumericError, ParseError, ShapeError

MAX_RANK = 3


def as_tensor(x) -> np.ndarray:
    """Coerce ``x`` to a float64 array (shares memory when already one)."""
    return np.asarray(x, dtype=np.float64)


def matvec(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product ``weights @ x`` with shape validation."""
    weights = as_tensor(weights)
    x = as_tensor(x)
    if weights.ndim != 2 or x.ndim != 1 or weights.shape[1] != x.shape[0]:
        raise ShapeError(
            f"matvec: matrix of shape {weights.shape} is incompatible "
            f"with vector of shape {x.shape}"
        )
    return weights @ x


def matvec_backward(
    grad_out: np.ndarray, weights: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient transform for :func:`matvec`.

    Given the upstream gradient with respect to the product, returns the
    gradients with respect to the matrix and the input vector.
    """
    grad_out = as_tensor(grad_out)
    if grad_out.shape != (weights.shape[0],):
        raise ShapeError(
            f"matvec_backward: upstream gradient of shape {grad_out.shape} "
            f"does not match output of shape {(weights.shape[0],)}"
        )
    return np.outer(grad_out, x), weights.T @ grad_out


def concat_vectors(segments: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate non-empty vectors in order into one long vector."""
    if len(segments) == 0:
        raise ValueError("concat_vectors: empty segment list")
    arrs = []
    for i, seg in enumerate(segments):
        seg = as_tensor(seg)
        if seg.ndim != 1 or seg.size == 0:
            raise ValueError(
                f"concat_vectors: segment {i} must be a non-empty vector, "
                f"got shape {seg.shape}"
            )
        arrs.append(seg)
    return np.concatenate(arrs)


def split_gradient(grad: np.ndarray, lengths: Sequence[int]) -> list[np.ndarray]:
    """Split an upstream gradient back into per-segment gradients."""
    grad = as_tensor(grad)
    total = int(sum(lengths))
    if grad.ndim != 1 or grad.shape[0] != total:
        raise ShapeError(
            f"split_gradient: gradient of shape {grad.shape} does not cover "
            f"segment lengths summing to {total}"
        )
    bounds = np.cumsum(lengths)[:-1]
    return [piece.copy() for piece in np.split(grad, bounds)]


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    This is the independent oracle every analytic backward pass in the
    library is checked against.  ``f`` must return a finite scalar at
    ``x +/- h*e_i`` for every coordinate ``i``.
    """
    if h <= 0:
        raise ValueError(f"finite_difference_gradient: step size must be > 0, got {h}")
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"finite_difference_gradient: x must be a vector, got shape {x.shape}")
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        probe = x.copy()
        probe[i] = x[i] + h
        f_plus = float(f(probe))
        probe[i] = x[i] - h
        f_minus = float(f(probe))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(
                f"finite_difference_gradient: non-finite function value at coordinate {i}"
            )
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_errors(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Coordinate-wise relative error |a-b| / max(|a|, |b|, floor).

    The floor keeps coordinates whose true gradient is exactly zero (dead
    ReLU units, unused parameters) from reporting noise as error.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


# ---------------------------------------------------------------------------
# Binary tensor blocks: rank (u32), extents (u32 each), data (f64), all
# little-endian, row-major.  Checkpoints and binary feature files are
# sequences of these blocks.
# ---------------------------------------------------------------------------


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = as_tensor(arr)
    if not 1 <= arr.ndim <= MAX_RANK:
        raise ShapeError(f"write_tensor: rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if arr.size == 0:
        raise ShapeError(f"write_tensor: empty tensor of shape {arr.shape}")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr).astype("<f8", copy=False).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ParseError(f"tensor block truncated: wanted {n} bytes, got {len(data)}")
    return data


def read_tensor(fh: BinaryIO) -> np.ndarray:
    rank = struct.unpack("<I", _read_exact(fh, 4))[0]
    if not 1 <= rank <= MAX_RANK:
        raise ParseError(f"tensor block has unsupported rank {rank}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(shape))
    if count == 0:
        raise ParseError(f"tensor block has empty shape {shape}")
    raw = _read_exact(fh, 8 * count)
    data = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return data.reshape(shape)
