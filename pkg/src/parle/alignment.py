"""Permutation alignment of MLPs and weight-space averaging.

Hidden units of a fully-connected network can be permuted, rows and
columns of successive weight matrices together, without changing the
function. Independently trained networks land in different unit
orderings, so averaging their raw weights destroys them; matching units
first makes one-shot weight averaging meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import DimensionMismatch, UndefinedSimilarity
from .params import FlatParams, vec_avg

Layer = tuple[np.ndarray, np.ndarray]  # (weights (out, in), biases (out,))


def mlp_layers(net: FlatParams) -> list[Layer]:
    """Split a flat vector into (weights, biases) pairs via its shape metadata."""
    shapes = net.shapes
    if len(shapes) < 4 or len(shapes) % 2 != 0:
        raise DimensionMismatch(f"not an MLP parameter layout: {shapes}")
    views = net.as_arrays()
    layers = []
    for i in range(0, len(views), 2):
        w, b = views[i], views[i + 1]
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"layer {i // 2} has shapes {w.shape}, {b.shape}")
        if i > 0 and w.shape[1] != views[i - 2].shape[0]:
            raise DimensionMismatch("consecutive layer widths do not chain")
        layers.append((w, b))
    return layers


def _check_same_arch(a: FlatParams, b: FlatParams) -> None:
    if a.shapes != b.shapes:
        raise DimensionMismatch(f"architectures differ: {a.shapes} vs {b.shapes}")


@dataclass(frozen=True)
class LayerPermutation:
    """One unit-index bijection per hidden layer (first/last layer untouched)."""

    perms: tuple[np.ndarray, ...]

    def __post_init__(self):
        perms = tuple(np.asarray(p, dtype=np.int64) for p in self.perms)
        for i, p in enumerate(perms):
            if sorted(p.tolist()) != list(range(p.size)):
                raise ValueError(f"hidden layer {i}: not a bijection: {p.tolist()}")
        object.__setattr__(self, "perms", perms)

    @staticmethod
    def identity(hidden_sizes: list[int]) -> "LayerPermutation":
        return LayerPermutation(tuple(np.arange(h) for h in hidden_sizes))

    def is_identity(self) -> bool:
        return all(np.array_equal(p, np.arange(p.size)) for p in self.perms)

    def inverse(self) -> "LayerPermutation":
        return LayerPermutation(tuple(np.argsort(p) for p in self.perms))


def apply_permutation(net: FlatParams, perm: LayerPermutation) -> FlatParams:
    """Reorder hidden units; returns a functionally identical network.

    For hidden layer l with permutation p, row i of the new weight matrix
    (and bias entry i) is row p[i] of the old one, and the columns of
    layer l+1 are reordered to match.
    """
    layers = mlp_layers(net)
    n_hidden = len(layers) - 1
    if len(perm.perms) != n_hidden:
        raise DimensionMismatch(
            f"{len(perm.perms)} permutations for {n_hidden} hidden layers"
        )
    new_w = [w.copy() for w, _ in layers]
    new_b = [b.copy() for _, b in layers]
    for l, p in enumerate(perm.perms):
        if p.size != layers[l][0].shape[0]:
            raise DimensionMismatch(
                f"hidden layer {l}: permutation size {p.size} vs width {layers[l][0].shape[0]}"
            )
        new_w[l] = new_w[l][p, :]
        new_b[l] = new_b[l][p]
        new_w[l + 1] = new_w[l + 1][:, p]
    arrays = []
    for w, b in zip(new_w, new_b):
        arrays.extend([w, b])
    return FlatParams.from_arrays(arrays)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise UndefinedSimilarity("cosine similarity against a zero-norm vector")
    return float(u @ v) / (nu * nv)


def _cosine_matrix(t_in: np.ndarray, s_in: np.ndarray) -> np.ndarray:
    tn = np.linalg.norm(t_in, axis=1)
    sn = np.linalg.norm(s_in, axis=1)
    if (tn == 0.0).any() or (sn == 0.0).any():
        raise UndefinedSimilarity("a unit has a zero-norm incoming-weight vector")
    return (t_in / tn[:, None]) @ (s_in / sn[:, None]).T


def _incoming(layers: list[Layer], l: int, col_perm: np.ndarray | None) -> np.ndarray:
    """Unit-by-feature matrix of incoming weights (bias included) for layer l."""
    w, b = layers[l]
    if col_perm is not None:
        w = w[:, col_perm]
    return np.hstack([w, b[:, None]])


def greedy_align(target: FlatParams, source: FlatParams) -> LayerPermutation:
    """Greedy layer-wise matching of source units onto target units.

    Walks the hidden layers from the input side. For each target unit, in
    index order, it picks the unused source unit whose incoming-weight
    vector (after reordering the source's input side by the upstream
    choice) has the highest cosine similarity; ties break toward the
    lowest source index. Applying the result to the source reorders it to
    mirror the target.
    """
    _check_same_arch(target, source)
    t_layers, s_layers = mlp_layers(target), mlp_layers(source)
    perms: list[np.ndarray] = []
    upstream: np.ndarray | None = None
    for l in range(len(t_layers) - 1):
        t_in = _incoming(t_layers, l, None)
        s_in = _incoming(s_layers, l, upstream)
        width = t_in.shape[0]
        sim = _cosine_matrix(t_in, s_in)
        chosen = np.full(width, -1, dtype=np.int64)
        used = np.zeros(width, dtype=bool)
        for i in range(width):
            order = sim[i].copy()
            order[used] = -np.inf
            # argmax returns the first (lowest) index among exact ties
            j = int(np.argmax(order))
            chosen[i] = j
            used[j] = True
        perms.append(chosen)
        upstream = chosen
    return LayerPermutation(tuple(perms))


def exhaustive_align(target: FlatParams, source: FlatParams) -> LayerPermutation:
    """Per-layer optimal matching by brute force; test oracle for widths <= 8."""
    _check_same_arch(target, source)
    t_layers, s_layers = mlp_layers(target), mlp_layers(source)
    perms: list[np.ndarray] = []
    upstream: np.ndarray | None = None
    for l in range(len(t_layers) - 1):
        t_in = _incoming(t_layers, l, None)
        s_in = _incoming(s_layers, l, upstream)
        width = t_in.shape[0]
        if width > 8:
            raise ValueError(f"exhaustive matching is limited to width 8, got {width}")
        sim = _cosine_matrix(t_in, s_in)
        best, best_total = None, -np.inf
        for cand in permutations(range(width)):
            total = sum(sim[i, cand[i]] for i in range(width))
            if total > best_total:
                best, best_total = cand, total
        perms.append(np.asarray(best, dtype=np.int64))
        upstream = perms[-1]
    return LayerPermutation(tuple(perms))


def overlap(a: FlatParams, b: FlatParams) -> float:
    """Mean per-layer cosine similarity of the flattened layer weights.

    1 exactly when every layer of b is a positive scalar multiple of the
    corresponding layer of a; compare after alignment for a
    permutation-invariant number.
    """
    _check_same_arch(a, b)
    a_layers, b_layers = mlp_layers(a), mlp_layers(b)
    sims = []
    for (wa, ba), (wb, bb) in zip(a_layers, b_layers):
        sims.append(_cosine(
            np.concatenate([wa.ravel(), ba]), np.concatenate([wb.ravel(), bb])
        ))
    return float(np.mean(sims))


def average_aligned(nets: list[FlatParams]) -> FlatParams:
    """Align every network onto the first, then average the weights."""
    if len(nets) < 2:
        raise ValueError("need at least two networks to average")
    ref = nets[0]
    aligned = [ref]
    for other in nets[1:]:
        aligned.append(apply_permutation(other, greedy_align(ref, other)))
    return vec_avg(aligned)
