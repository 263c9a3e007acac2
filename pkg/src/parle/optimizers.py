"""The training algorithms as step-level state machines over a loss oracle.

Five algorithms share the same primitives:

  sgd            Nesterov SGD baseline, no server.
  entropy_sgd    L proximal inner steps on y with an exponential average
                 z, then one outer step of x along (x - z).
  elastic_sgd    n replicas pulled toward a shared reference every step.
  parle          entropy_sgd inner cycles per replica plus the elastic
                 pull, reference reduced once every L steps.
  sheriff        two-level hierarchy: workers couple to deputies through
                 gamma, deputies couple to the sheriff through rho; the
                 deputy aggregates a spatial worker average where parle
                 aggregates a temporal one.

All updates run in float64 with no hidden global state; a run is fully
determined by the initial states and their rng substreams.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datasets import BatchSampler
from .errors import ConsistencyError, DivergenceError, NonFiniteError
from .ledger import CommLedger
from .params import FlatParams, nesterov_step, vec_avg
from .rng import Rng
from .schedule import HyperParams, gamma_at, rho_at


@dataclass
class ReplicaState:
    """Per-replica variables: slow x, inner y, exponential average z.

    y and z are re-anchored to x at every cycle start (k mod L == 0);
    vel_y and vel_x are the Nesterov buffers of the inner and slow
    updates. ``shard`` lists the sample indices this replica trains on.
    """

    x: FlatParams
    y: FlatParams
    z: FlatParams
    vel_y: FlatParams
    vel_x: FlatParams
    k: int = 0
    shard: np.ndarray | None = None
    sampler: BatchSampler | None = None
    rng: Rng | None = None

    @staticmethod
    def initial(
        x0: FlatParams,
        shard: np.ndarray | None = None,
        sampler: BatchSampler | None = None,
        rng: Rng | None = None,
    ) -> "ReplicaState":
        zero = x0.with_data(np.zeros(x0.size))
        return ReplicaState(
            x=x0.copy(), y=x0.copy(), z=x0.copy(),
            vel_y=zero, vel_x=zero.copy(), k=0,
            shard=shard, sampler=sampler, rng=rng,
        )


@dataclass
class ServerState:
    """The reference variable held by the (simulated) parameter server."""

    x: FlatParams
    round: int = 0


@dataclass
class DeputyState:
    """One deputy replica plus the worker group it controls."""

    replica: ReplicaState
    workers: list[ReplicaState] = field(default_factory=list)


def _next_batch(state: ReplicaState):
    return state.sampler.next_batch() if state.sampler is not None else None


def _ema(z: FlatParams, y: FlatParams, alpha: float) -> FlatParams:
    if alpha == 0.0:
        return y.copy()
    return z.with_data(alpha * z.data + (1.0 - alpha) * y.data)


# ---------------------------------------------------------------------------
# SGD baseline


def sgd_epoch(oracle, state: ReplicaState, hp: HyperParams) -> tuple[float, float]:
    """One pass of B Nesterov-SGD steps; returns (mean batch loss, train error).

    The train error is measured on the replica's shard after the pass
    (0.0 for oracles without a classification error).
    """
    hp.validate()
    loss_sum = 0.0
    for _ in range(hp.B):
        batch = _next_batch(state)
        try:
            loss, grad = oracle.value_grad(state.x, batch, state.rng)
            if not math.isfinite(loss):
                raise NonFiniteError("loss is not finite")
            state.x, state.vel_x = nesterov_step(
                state.x, state.vel_x, grad, hp.eta, hp.momentum
            )
        except NonFiniteError as e:
            raise DivergenceError(f"sgd diverged at step {state.k}: {e}") from e
        loss_sum += loss
        state.k += 1
    err = 0.0
    if hasattr(oracle, "error_rate"):
        err = oracle.error_rate(state.x, state.shard)
    return loss_sum / hp.B, err


# ---------------------------------------------------------------------------
# Shared inner cycle (the y / z machinery)


def _inner_cycle(oracle, state: ReplicaState, hp: HyperParams, gamma: float) -> None:
    """L proximal descent steps on y, tracking the exponential average z.

    y and z restart from x, and the inner momentum buffer is cleared, so
    that z summarizes only the current cycle's trajectory. Each step
    follows the gradient of f(y) plus the pull (y - x) / gamma.
    """
    if state.k % hp.L != 0:
        raise ConsistencyError(f"cycle entered at k={state.k}, not a multiple of L={hp.L}")
    state.y = state.x.copy()
    state.z = state.y.copy()
    state.vel_y = state.vel_y.with_data(np.zeros(state.x.size))
    inv_gamma = 1.0 / gamma
    for _ in range(hp.L):
        batch = _next_batch(state)
        try:
            loss, grad = oracle.value_grad(state.y, batch, state.rng)
            if not math.isfinite(loss):
                raise NonFiniteError("loss is not finite")
            g = grad.with_data(grad.data + inv_gamma * (state.y.data - state.x.data))
            state.y, state.vel_y = nesterov_step(
                state.y, state.vel_y, g, hp.eta_prime, hp.momentum
            )
        except NonFiniteError as e:
            raise DivergenceError(f"inner loop diverged at step {state.k}: {e}") from e
        state.z = _ema(state.z, state.y, hp.alpha)
        state.k += 1


def _slow_step(
    state: ReplicaState, hp: HyperParams, rho: float, reference: FlatParams | None
) -> None:
    """Replica update along (x - z) plus the elastic pull toward the reference."""
    g = state.x.data - state.z.data
    if reference is not None and not math.isinf(rho):
        g = g + (state.x.data - reference.data) / rho
    try:
        state.x, state.vel_x = nesterov_step(
            state.x, state.vel_x, state.x.with_data(g), hp.eta, hp.momentum
        )
    except NonFiniteError as e:
        raise DivergenceError(f"slow update diverged at step {state.k}: {e}") from e


# ---------------------------------------------------------------------------
# Entropy-SGD


def entropy_sgd_cycle(oracle, state: ReplicaState, hp: HyperParams) -> FlatParams:
    """One smoothing cycle: inner loop then the outer step x <- x - eta (x - z).

    No extra sampling noise is injected; mini-batch gradients supply all
    the stochasticity. Returns the updated x. The implied smoothed-loss
    gradient of the cycle is (x_old - z_final) / gamma.
    """
    hp.validate()
    gamma = gamma_at(state.k, hp)
    try:
        _inner_cycle(oracle, state, hp, gamma)
    except DivergenceError as e:
        raise DivergenceError(f"cycle {state.k // hp.L}: {e}") from e
    _slow_step(state, hp, math.inf, None)
    return state.x


# ---------------------------------------------------------------------------
# Elastic-SGD


def _check_aligned(replicas: Sequence[ReplicaState], L: int | None = None) -> int:
    ks = {st.k for st in replicas}
    if len(ks) != 1:
        raise ConsistencyError(f"replica counters misaligned: {sorted(ks)}")
    k0 = ks.pop()
    if L is not None and k0 % L != 0:
        raise ConsistencyError(f"round entered at k={k0}, not a multiple of L={L}")
    return k0


def _run_replicas(
    work: Callable[[int], None], n: int, pool: Executor | None
) -> None:
    # barrier semantics: all replicas finish before the reduce happens
    if pool is None:
        for a in range(n):
            work(a)
    else:
        futures = [pool.submit(work, a) for a in range(n)]
        for f in futures:
            f.result()


def elastic_sgd_step(
    oracles: Sequence,
    replicas: Sequence[ReplicaState],
    server: ServerState,
    hp: HyperParams,
    ledger: CommLedger | None = None,
    pool: Executor | None = None,
) -> None:
    """One synchronous elastic step for every replica, then the server update.

    Each replica descends its own loss plus the elastic pull
    (x_a - x)/rho; the server moves toward the fresh replica mean. The
    ledger is charged one reduce event per step.
    """
    hp.validate()
    n = len(replicas)
    k0 = _check_aligned(replicas)
    rho = rho_at(k0, hp)
    reference = server.x

    def work(a: int) -> None:
        st = replicas[a]
        batch = _next_batch(st)
        try:
            loss, grad = oracles[a].value_grad(st.x, batch, st.rng)
            if not math.isfinite(loss):
                raise NonFiniteError("loss is not finite")
            g = grad.data
            if not math.isinf(rho):
                g = g + (st.x.data - reference.data) / rho
            st.x, st.vel_x = nesterov_step(
                st.x, st.vel_x, st.x.with_data(g), hp.eta, hp.momentum
            )
        except NonFiniteError as e:
            raise DivergenceError(f"replica {a} diverged at step {st.k}: {e}") from e
        st.k += 1

    _run_replicas(work, n, pool)
    mean = vec_avg([st.x for st in replicas])
    server.x = server.x.with_data(server.x.data - hp.eta * (server.x.data - mean.data))
    server.round += 1
    if ledger is not None:
        ledger.charge_reduce(n, server.x.size)
        ledger.add_grad_evals(n)


# ---------------------------------------------------------------------------
# Parle


def parle_round(
    oracles: Sequence,
    replicas: Sequence[ReplicaState],
    server: ServerState,
    hp: HyperParams,
    ledger: CommLedger | None = None,
    pool: Executor | None = None,
) -> None:
    """One communication round: per-replica inner cycles, slow steps, reduce.

    gamma and rho are read from the scoping schedule at the round's start
    counter and advance once per round. With eta_dprime unset the
    reference update collapses to the plain replica average; the general
    form x <- x - (eta'' n / rho)(x - mean) is kept but experimental.
    """
    hp.validate()
    n = len(replicas)
    k0 = _check_aligned(replicas, hp.L)
    gamma = gamma_at(k0, hp)
    rho = rho_at(k0, hp)
    reference = server.x

    def work(a: int) -> None:
        st = replicas[a]
        try:
            _inner_cycle(oracles[a], st, hp, gamma)
            _slow_step(st, hp, rho, reference)
        except DivergenceError as e:
            raise DivergenceError(f"replica {a}, round {server.round}: {e}") from e

    _run_replicas(work, n, pool)
    mean = vec_avg([st.x for st in replicas])
    if hp.eta_dprime is None:
        server.x = mean
    else:
        coef = 0.0 if math.isinf(rho) else hp.eta_dprime * n / rho
        server.x = server.x.with_data(
            server.x.data - coef * (server.x.data - mean.data)
        )
    server.round += 1
    if ledger is not None:
        ledger.charge_reduce(n, server.x.size)
        ledger.add_grad_evals(n * hp.L)


# ---------------------------------------------------------------------------
# Sheriff / deputies


def sheriff_round(
    oracle,
    deputies: Sequence[DeputyState],
    server: ServerState,
    hp: HyperParams,
    ledger: CommLedger | None = None,
) -> None:
    """One round of the two-level hierarchy (desk scale, n <= 4 deputies).

    Worker groups run L elastic steps toward their deputy; the deputy
    then takes a slow step using the spatial mean of its workers in
    place of parle's temporal average z, and the sheriff averages the
    deputies. Workers restart from their deputy at every round.
    """
    hp.validate()
    n = len(deputies)
    if n > 4:
        raise ValueError(f"sheriff is desk-scale only: n={n} > 4 deputies")
    group = len(deputies[0].workers)
    if group < 1 or any(len(d.workers) != group for d in deputies):
        raise ConsistencyError("every deputy needs the same non-empty worker group")
    k0 = _check_aligned([d.replica for d in deputies], hp.L)
    gamma = gamma_at(k0, hp)
    rho = rho_at(k0, hp)
    reference = server.x
    inv_gamma = 1.0 / gamma

    for a, dep in enumerate(deputies):
        anchor = dep.replica.x
        for w in dep.workers:
            w.y = anchor.copy()
            w.vel_y = w.vel_y.with_data(np.zeros(anchor.size))
        for _ in range(hp.L):
            for b, w in enumerate(dep.workers):
                batch = _next_batch(w)
                try:
                    loss, grad = oracle.value_grad(w.y, batch, w.rng)
                    if not math.isfinite(loss):
                        raise NonFiniteError("loss is not finite")
                    g = grad.with_data(grad.data + inv_gamma * (w.y.data - anchor.data))
                    w.y, w.vel_y = nesterov_step(w.y, w.vel_y, g, hp.eta_prime, hp.momentum)
                except NonFiniteError as e:
                    raise DivergenceError(
                        f"deputy {a} worker {b} diverged at step {w.k}: {e}"
                    ) from e
                w.k += 1
        dep.replica.z = vec_avg([w.y for w in dep.workers])
        dep.replica.k += hp.L
        _slow_step(dep.replica, hp, rho, reference)

    server.x = vec_avg([d.replica.x for d in deputies])
    server.round += 1
    if ledger is not None:
        ledger.charge_reduce(n, server.x.size)
        ledger.add_grad_evals(n * group * hp.L)


def make_deputies(
    x0: FlatParams,
    n: int,
    rng: Rng,
    make_sampler: Callable[[Rng], BatchSampler | None] = lambda rng: None,
) -> list[DeputyState]:
    """n deputies with n workers each; worker (a, b) gets substream a*n + b."""
    deputies = []
    for a in range(n):
        workers = []
        for b in range(n):
            sub = rng.substream(a * n + b)
            st = ReplicaState.initial(x0, sampler=make_sampler(sub), rng=sub)
            workers.append(st)
        deputies.append(DeputyState(replica=ReplicaState.initial(x0), workers=workers))
    return deputies
