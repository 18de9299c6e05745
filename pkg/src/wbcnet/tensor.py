"""Dense n-dimensional arrays and the arithmetic every layer builds on.

Tensors are plain ``numpy.ndarray`` values (row-major, contiguous). This module
is the single chokepoint for the arithmetic used by the layers, so shape
validation and numerical behavior stay uniform. Operations never mutate their
inputs and never change shape implicitly.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_DTYPE = np.float64

_ELEMENTWISE_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def zeros(shape: Sequence[int], dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Allocate a zero tensor. Every dimension must be >= 1."""
    shape = tuple(shape)
    if len(shape) == 0:
        raise ShapeError("tensor shape must have at least one dimension")
    if any(not isinstance(d, (int, np.integer)) or d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be integers >= 1, got {shape}")
    return np.zeros(shape, dtype=dtype)


def elementwise(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply ``op`` in {'add','sub','mul'} per element. Shapes must match exactly.

    No broadcasting: same-shape operands only, so no operation can change
    shape silently.
    """
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}, expected one of {sorted(_ELEMENTWISE_OPS)}")
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op}: shape mismatch {a.shape} vs {b.shape}")
    return _ELEMENTWISE_OPS[op](a, b)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return elementwise("add", a, b)


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return elementwise("sub", a, b)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return elementwise("mul", a, b)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product of two rank-2 tensors [m,k] @ [k,n] -> [m,n]."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 tensors, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b
