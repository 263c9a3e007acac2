"""Loss oracles: value-and-gradient interfaces the optimizers descend.

Two families: a convex quadratic whose Gaussian-smoothed gradient has a
closed form (the ground truth for the inner-cycle tests), and a small
ReLU MLP with softmax cross-entropy over a dataset shard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .datasets import Dataset
from .errors import DimensionMismatch, NonFiniteError
from .params import FlatParams
from .rng import Rng


def central_difference_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Two-sided finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    probe = x.copy()
    for i in range(x.size):
        probe[i] = x[i] + eps
        hi = f(probe)
        probe[i] = x[i] - eps
        lo = f(probe)
        probe[i] = x[i]
        out[i] = (hi - lo) / (2.0 * eps)
    return out


@runtime_checkable
class LossOracle(Protocol):
    """Duck interface every optimizer drives.

    ``value_grad`` evaluates the (possibly mini-batch) loss and its
    gradient at ``x``. Oracles are read-only after construction and safe
    to share across worker threads.
    """

    @property
    def dim(self) -> int: ...

    def value_grad(
        self, x: FlatParams, batch: Sequence[int] | None, rng: Rng | None
    ) -> tuple[float, FlatParams]: ...


# ---------------------------------------------------------------------------
# Quadratic


class QuadraticOracle:
    """f(x) = (x - xstar)' A (x - xstar) / 2 with A symmetric PSD."""

    def __init__(self, A: np.ndarray, xstar: np.ndarray):
        A = np.asarray(A, dtype=np.float64)
        xstar = np.asarray(xstar, dtype=np.float64).ravel()
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != xstar.size:
            raise DimensionMismatch(f"A is {A.shape}, xstar has {xstar.size} entries")
        if not np.allclose(A, A.T, atol=1e-12, rtol=0.0):
            raise ValueError("A must be symmetric within 1e-12")
        eigs = np.linalg.eigvalsh(A)
        if eigs.min() < -1e-10 * max(1.0, eigs.max()):
            raise ValueError(f"A must be PSD, smallest eigenvalue {eigs.min():g}")
        self.A = 0.5 * (A + A.T)
        self.xstar = xstar
        self._eigs = eigs

    @property
    def dim(self) -> int:
        return self.xstar.size

    @property
    def operator_norm(self) -> float:
        return float(self._eigs.max())

    @staticmethod
    def random(
        d: int, rng: Rng, eig_range: tuple[float, float] = (0.5, 2.0)
    ) -> "QuadraticOracle":
        """Random PSD quadratic with eigenvalues in `eig_range` and random basis."""
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        eigs = rng.uniform(eig_range[0], eig_range[1], size=d)
        a = (q * eigs) @ q.T
        return QuadraticOracle(0.5 * (a + a.T), rng.normal(size=d))

    def value_grad(
        self, x: FlatParams, batch: Sequence[int] | None = None, rng: Rng | None = None
    ) -> tuple[float, FlatParams]:
        """Exact full-batch value and gradient; batch and rng are ignored."""
        if x.size != self.dim:
            raise DimensionMismatch(f"x has {x.size} entries, oracle dim {self.dim}")
        r = x.data - self.xstar
        g = self.A @ r
        return float(0.5 * r @ g), x.with_data(g)

    def smoothed_grad(self, x: FlatParams, gamma: float) -> FlatParams:
        """Gradient of the Gaussian-smoothed loss, A (I + gamma A)^-1 (x - xstar).

        Exact for the quadratic (Gaussian convolved with a Gaussian stays
        Gaussian); serves as the ground-truth oracle for the inner-cycle
        implied gradient.
        """
        if gamma <= 0:
            raise ValueError("gamma must be > 0")
        r = x.data - self.xstar
        m = np.eye(self.dim) + gamma * self.A
        try:
            u = np.linalg.solve(m, r)
        except np.linalg.LinAlgError as e:  # cannot happen for PSD A, gamma > 0
            raise NonFiniteError(f"smoothed-gradient solve failed: {e}") from e
        return x.with_data(self.A @ u)

    def init_params(self, rng: Rng, scale: float = 1.0) -> FlatParams:
        return FlatParams(self.xstar + scale * rng.normal(size=self.dim))


quad_value_grad = QuadraticOracle.value_grad
quad_local_entropy_grad = QuadraticOracle.smoothed_grad


class NoisyQuadraticOracle:
    """Quadratic oracle with additive isotropic Gaussian gradient noise.

    Models mini-batch stochasticity explicitly so ergodic-average tests
    can control the noise scale.
    """

    def __init__(self, base: QuadraticOracle, sigma: float):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.base = base
        self.sigma = sigma

    @property
    def dim(self) -> int:
        return self.base.dim

    def value_grad(
        self, x: FlatParams, batch: Sequence[int] | None = None, rng: Rng | None = None
    ) -> tuple[float, FlatParams]:
        v, g = self.base.value_grad(x)
        if self.sigma > 0.0:
            if rng is None:
                raise ValueError("noisy oracle needs an rng")
            g = g.with_data(g.data + self.sigma * rng.normal(size=self.dim))
        return v, g


# ---------------------------------------------------------------------------
# MLP classifier


@dataclass(frozen=True)
class MlpOracle:
    """ReLU MLP with softmax cross-entropy over a dataset shard.

    ``sizes`` lists layer widths input..classes. The loss is the batch
    mean cross-entropy plus weight_decay * ||x||^2 / 2 over the whole
    parameter vector; gradients are exact backprop in float64.
    """

    sizes: tuple[int, ...]
    dataset: Dataset
    weight_decay: float = 0.0
    batch_size: int = 32

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if any(s < 1 for s in self.sizes):
            raise ValueError("layer sizes must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.dataset.n_features != self.sizes[0]:
            raise DimensionMismatch(
                f"dataset has {self.dataset.n_features} features, input layer {self.sizes[0]}"
            )
        if self.dataset.n_classes > self.sizes[-1]:
            raise DimensionMismatch(
                f"dataset has {self.dataset.n_classes} classes, output layer {self.sizes[-1]}"
            )

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        # weight matrices are (out, in): row = a unit's incoming weights
        out = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            out.append((fan_out, fan_in))
            out.append((fan_out,))
        return tuple(out)

    @property
    def dim(self) -> int:
        return sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    def init_params(self, rng: Rng) -> FlatParams:
        """He-scaled Gaussian weights, zero biases."""
        arrays = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            arrays.append(rng.normal(size=(fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
            arrays.append(np.zeros(fan_out))
        return FlatParams.from_arrays(arrays)

    def _unpack(self, x: FlatParams) -> list[tuple[np.ndarray, np.ndarray]]:
        """Layer views of a flat vector; accepts any layout of the right size."""
        if x.size != self.dim:
            raise DimensionMismatch(
                f"params have {x.size} entries, architecture needs {self.dim}"
            )
        views, off = [], 0
        for s in self.shapes:
            n = int(np.prod(s))
            views.append(x.data[off : off + n].reshape(s))
            off += n
        return [(views[i], views[i + 1]) for i in range(0, len(views), 2)]

    def _forward(self, layers, xb: np.ndarray):
        acts = [xb]
        h = xb
        for i, (w, b) in enumerate(layers):
            z = h @ w.T + b
            h = z if i == len(layers) - 1 else np.maximum(z, 0.0)
            acts.append(h)
        return acts

    def logits(self, x: FlatParams, indices: Sequence[int] | None = None) -> np.ndarray:
        layers = self._unpack(x)
        xb = self.dataset.inputs if indices is None else self.dataset.inputs[np.asarray(indices)]
        return self._forward(layers, xb)[-1]

    def value_grad(
        self, x: FlatParams, batch: Sequence[int] | None, rng: Rng | None = None
    ) -> tuple[float, FlatParams]:
        if batch is None:
            batch = np.arange(self.dataset.n_samples)
        idx = np.asarray(batch, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("empty mini-batch")
        if idx.min() < 0 or idx.max() >= self.dataset.n_samples:
            raise IndexError(
                f"batch index out of range [0, {self.dataset.n_samples})"
            )
        layers = self._unpack(x)
        xb = self.dataset.inputs[idx]
        yb = self.dataset.labels[idx]
        m = idx.size

        acts = self._forward(layers, xb)
        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_z - shifted[np.arange(m), yb]))

        probs = np.exp(shifted - log_z[:, None])
        delta = probs
        delta[np.arange(m), yb] -= 1.0
        delta /= m

        grads: list[np.ndarray] = [None] * (2 * len(layers))  # type: ignore[list-item]
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ w) * (acts[i] > 0.0)

        flat = np.concatenate([g.ravel() for g in grads])
        if self.weight_decay > 0.0:
            loss += 0.5 * self.weight_decay * float(x.data @ x.data)
            flat += self.weight_decay * x.data
        if not np.isfinite(loss):
            raise NonFiniteError("loss is not finite")
        return loss, FlatParams(flat, self.shapes)

    def loss_value(self, x: FlatParams, indices: Sequence[int] | None = None) -> float:
        """Forward-only loss (cross-entropy plus the weight-decay term)."""
        logits = self.logits(x, indices)
        labels = (
            self.dataset.labels
            if indices is None
            else self.dataset.labels[np.asarray(indices)]
        )
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_z - shifted[np.arange(labels.size), labels]))
        if self.weight_decay > 0.0:
            loss += 0.5 * self.weight_decay * float(x.data @ x.data)
        return loss

    def error_rate(self, x: FlatParams, indices: Sequence[int] | None = None) -> float:
        """Fraction of misclassified samples (argmax prediction)."""
        logits = self.logits(x, indices)
        labels = (
            self.dataset.labels
            if indices is None
            else self.dataset.labels[np.asarray(indices)]
        )
        return float(np.mean(np.argmax(logits, axis=1) != labels))
