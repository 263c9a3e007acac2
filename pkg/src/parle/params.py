"""Flat parameter vectors and the elementwise primitives built on them.

Every model in the toolkit is a single float64 vector plus layer-shape
metadata. Optimizers treat parameters as opaque flat vectors; only the
alignment and persistence code ever looks at the shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteError

Shape = tuple[int, ...]


def _shape_size(shape: Shape) -> int:
    return int(math.prod(shape)) if shape else 1


@dataclass(frozen=True)
class FlatParams:
    """A flat float64 parameter vector with layer-shape metadata.

    Invariants: the shape element counts sum to ``len(data)`` and every
    entry is finite. Both are checked at construction, so any operation
    that returns a FlatParams has re-established them.
    """

    data: np.ndarray
    shapes: tuple[Shape, ...] = field(default=())

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 1:
            raise DimensionMismatch(f"parameter data must be 1-D, got shape {arr.shape}")
        shapes = tuple(tuple(int(d) for d in s) for s in self.shapes)
        if not shapes:
            shapes = ((arr.size,),)
        object.__setattr__(self, "shapes", shapes)
        total = sum(_shape_size(s) for s in shapes)
        if total != arr.size:
            raise DimensionMismatch(
                f"shapes cover {total} elements but data has {arr.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("parameter vector contains NaN or Inf")

    def __len__(self) -> int:
        return self.data.size

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "FlatParams":
        return FlatParams(self.data.copy(), self.shapes)

    def with_data(self, data: np.ndarray) -> "FlatParams":
        """Same shape metadata, new contents."""
        return FlatParams(data, self.shapes)

    def as_arrays(self) -> list[np.ndarray]:
        """Views of the flat vector reshaped per layer (read-only)."""
        out, off = [], 0
        for s in self.shapes:
            n = _shape_size(s)
            view = self.data[off : off + n].reshape(s)
            view.flags.writeable = False
            out.append(view)
            off += n
        return out

    @staticmethod
    def zeros(n: int, shapes: Sequence[Shape] = ()) -> "FlatParams":
        return FlatParams(np.zeros(n), tuple(shapes))

    @staticmethod
    def from_arrays(arrays: Iterable[np.ndarray]) -> "FlatParams":
        arrays = list(arrays)
        shapes = tuple(tuple(a.shape) for a in arrays)
        data = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
        return FlatParams(data, shapes)


def _check_same_layout(*items: FlatParams) -> None:
    ref = items[0]
    for p in items[1:]:
        if p.size != ref.size or p.shapes != ref.shapes:
            raise DimensionMismatch(
                f"incompatible vectors: {p.size}/{p.shapes} vs {ref.size}/{ref.shapes}"
            )


def vec_avg(params: Sequence[FlatParams]) -> FlatParams:
    """Elementwise arithmetic mean of a non-empty list of equal-length vectors."""
    if len(params) == 0:
        raise ValueError("vec_avg of an empty list")
    _check_same_layout(*params)
    if len(params) == 1:
        return params[0].copy()
    acc = np.zeros(params[0].size)
    for p in params:
        acc += p.data
    return params[0].with_data(acc / len(params))


def nesterov_step(
    p: FlatParams,
    vel: FlatParams,
    grad: FlatParams,
    eta: float,
    mu: float,
) -> tuple[FlatParams, FlatParams]:
    """One Nesterov-momentum update; returns (new params, new velocity).

    Uses the look-ahead form

        v' = mu * v + g
        p' = p - eta * (g + mu * v')

    so that mu=0 reduces exactly to the plain gradient step p - eta*g.
    """
    _check_same_layout(p, vel, grad)
    if mu == 0.0:
        # keep the mu=0 path bitwise identical to plain SGD
        return p.with_data(p.data - eta * grad.data), vel.with_data(grad.data.copy())
    v_new = mu * vel.data + grad.data
    step = grad.data + mu * v_new
    return p.with_data(p.data - eta * step), vel.with_data(v_new)
