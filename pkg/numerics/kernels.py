"""
Dense-matrix kernels for the recommender.

Every numeric carrier is a 2-D ``numpy.ndarray`` of float64 ("Matrix"); column
vectors are ``n x 1``. Randomness comes from a seeded PCG64 generator so the
same seed yields the same stream on every platform.
"""
from __future__ import annotations

import logging
from typing import Callable, Literal, Tuple

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

Matrix = np.ndarray
Shape = Tuple[int, int]

ElementwiseOp = Literal["add", "sub", "hadamard", "scale", "sigmoid", "tanh"]


class ShapeError(ValueError):
    """Operands do not conform."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity showed up where only finite values are allowed."""


# -----------------------------
# Construction and validation
# -----------------------------


def as_matrix(data) -> Matrix:
    """Coerce ``data`` to a C-contiguous 2-D float64 array (vectors become columns)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return np.ascontiguousarray(arr)


def zeros(rows: int, cols: int = 1) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def check_finite(m: Matrix, name: str = "matrix") -> None:
    if not np.all(np.isfinite(m)):
        bad = int(np.size(m) - np.count_nonzero(np.isfinite(m)))
        raise NonFiniteError(f"{name} has {bad} non-finite entries")


def _same_shape(a: Matrix, b: Matrix, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -----------------------------
# Kernels
# -----------------------------


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: Matrix) -> Matrix:
    # expit never overflows for large |x|.
    return special.expit(x)


def tanh(x: Matrix) -> Matrix:
    return np.tanh(x)


_BINARY: dict[str, Callable[[Matrix, Matrix], Matrix]] = {
    "add": np.add,
    "sub": np.subtract,
    "hadamard": np.multiply,
}

_UNARY: dict[str, Callable[[Matrix], Matrix]] = {
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def elementwise(op: ElementwiseOp, *args) -> Matrix:
    """
    Pointwise ``add``/``sub``/``hadamard`` of two equal-shape matrices,
    ``scale`` of a matrix by a scalar, or ``sigmoid``/``tanh`` of one matrix.
    """
    if op in _BINARY:
        a, b = args
        _same_shape(a, b, op)
        return _BINARY[op](a, b)
    if op == "scale":
        a, factor = args
        return a * float(factor)
    if op in _UNARY:
        (a,) = args
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


def softmax(v: Matrix, axis: int = 1) -> Matrix:
    """Softmax along ``axis`` (rows by default), max-shifted so large inputs don't overflow."""
    if v.size == 0 or v.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    return special.softmax(v, axis=axis)


def concat_rows(a: Matrix, b: Matrix) -> Matrix:
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: {a.shape[1]} vs {b.shape[1]} columns")
    return np.vstack((a, b))


def split_rows(m: Matrix, at: int) -> Tuple[Matrix, Matrix]:
    """Inverse of :func:`concat_rows`: the first ``at`` rows and the rest."""
    if not 0 <= at <= m.shape[0]:
        raise ShapeError(f"split_rows: cut {at} outside 0..{m.shape[0]}")
    return m[:at], m[at:]


# -----------------------------
# Seeded randomness
# -----------------------------


def make_rng(seed: int) -> np.random.Generator:
    """The single-owner random state; advance it explicitly, never share it across tasks."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def dropout_mask(rng: np.random.Generator, shape: Shape, keep_prob: float) -> Matrix:
    """Inverted-dropout mask: 0 with probability ``1 - keep_prob``, else ``1 / keep_prob``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(shape, dtype=np.float64)
    keep = rng.random(shape) < keep_prob
    return keep.astype(np.float64) / keep_prob


def uniform_init(rng: np.random.Generator, shape: Shape, bound: float) -> Matrix:
    if bound <= 0:
        raise ValueError(f"bound must be positive, got {bound}")
    return rng.uniform(-bound, bound, size=shape).astype(np.float64)


def fan_in_bound(fan_in: int) -> float:
    return 1.0 / float(np.sqrt(fan_in))


# -----------------------------
# Gradient oracle
# -----------------------------


def finite_difference_grad(
    f: Callable[[Matrix], float],
    params: Matrix,
    eps: float = 1e-5,
) -> Matrix:
    """Central differences ``(f(θ+εe_i) - f(θ-εe_i)) / 2ε`` for every coordinate of ``params``."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    theta = np.array(params, dtype=np.float64, copy=True)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        plus = float(f(theta))
        flat[i] = saved - eps
        minus = float(f(theta))
        flat[i] = saved
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NonFiniteError(f"objective is not finite around coordinate {i}")
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: Matrix, numeric: Matrix) -> float:
    """Block-level relative error ``|a - n| / max(|a|, |n|)`` in the Euclidean norm."""
    _same_shape(analytic, numeric, "relative_error")
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / scale
