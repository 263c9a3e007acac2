"""Experiment runner over a simulated parameter server, plus the audit drivers.

The runner owns epoch bookkeeping, metric logging, and artifact files;
the drivers (communication ratio, equivalence trial, collapse metric)
check the claims the toolkit exists to verify. Costs are measured in
gradient evaluations; wall time is logged informationally only, in a
sidecar, so metric files stay byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import datasets as ds_mod
from .datasets import BatchSampler, Dataset
from .errors import ConfigError, ConsistencyError
from .ledger import CommLedger, RunMeta
from .optimizers import (
    DeputyState,
    ReplicaState,
    ServerState,
    elastic_sgd_step,
    entropy_sgd_cycle,
    parle_round,
    sgd_epoch,
    sheriff_round,
)
from .oracles import MlpOracle, QuadraticOracle
from .params import FlatParams
from .persist import canonical_config_text, config_hash, save_model
from .rng import Rng
from .schedule import HyperParams, gamma_at, rho_at

ALGORITHMS = ("sgd", "entropy_sgd", "elastic_sgd", "parle", "sheriff")

# fixed substream ids for run setup; replicas use substreams 0..n-1
DATA_STREAM = 0x100000
SPLIT_STREAM = 0x100001
INIT_STREAM = 0x100002
SHARD_STREAM = 0x100003
SUBSET_STREAM = 0x100004


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class RunConfig:
    algorithm: str
    epochs: int
    seed: int
    oracle: str = "mlp"
    dataset: str = "blobs"
    idx_images: str = ""
    idx_labels: str = ""
    csv_path: str = ""
    limit: int = 0
    blobs_classes: int = 3
    blobs_per_class: int = 200
    blobs_dim: int = 2
    blobs_spread: float = 0.15
    digits_per_class: int = 300
    digits_noise: float = 0.7
    val_fraction: float = 0.2
    batch_size: int = 32
    hidden: tuple[int, ...] = (64,)
    weight_decay: float = 0.0
    quad_dim: int = 10
    batches: int = 10
    n: int = 1
    fraction: float = 1.0
    subset_fraction: float = 1.0
    L: int = 25
    alpha: float = 0.75
    eta: float = 0.1
    eta_prime: float = 0.1
    eta_dprime: float | None = None
    gamma0: float = 100.0
    rho0: float = 1.0
    gamma_floor: float = 1.0
    rho_floor: float = 0.1
    momentum: float = 0.9
    mode: str = "sequential"

    def resolved(self) -> dict:
        out = {}
        for key in _SCHEMA:
            v = getattr(self, key)
            if key == "hidden":
                v = ",".join(str(h) for h in v)
            elif key == "eta_dprime":
                v = "" if v is None else repr(v)
            elif isinstance(v, float):
                v = repr(v)
            out[key] = v
        return out

    def hash(self) -> str:
        return config_hash(self.resolved())


def _parse_hidden(s: str) -> tuple[int, ...]:
    if not s.strip():
        return ()
    return tuple(int(t) for t in s.split(","))


def _parse_float(s: str) -> float:
    return float(s)  # accepts "inf"


_SCHEMA: dict[str, type | object] = {
    "algorithm": str, "epochs": int, "seed": int, "oracle": str, "dataset": str,
    "idx_images": str, "idx_labels": str, "csv_path": str, "limit": int,
    "blobs_classes": int, "blobs_per_class": int, "blobs_dim": int,
    "blobs_spread": _parse_float, "digits_per_class": int, "digits_noise": _parse_float,
    "val_fraction": _parse_float, "batch_size": int, "hidden": _parse_hidden,
    "weight_decay": _parse_float, "quad_dim": int, "batches": int, "n": int,
    "fraction": _parse_float, "subset_fraction": _parse_float, "L": int,
    "alpha": _parse_float, "eta": _parse_float, "eta_prime": _parse_float,
    "eta_dprime": _parse_float, "gamma0": _parse_float, "rho0": _parse_float,
    "gamma_floor": _parse_float, "rho_floor": _parse_float,
    "momentum": _parse_float, "mode": str,
}

_REQUIRED = ("algorithm", "epochs", "seed")


def make_config(values: dict[str, str], overrides: dict | None = None) -> RunConfig:
    """Validate flat key=value pairs against the schema and build a RunConfig."""
    merged = dict(values)
    if overrides:
        for k, v in overrides.items():
            if v is not None:
                merged[k] = str(v)
    unknown = sorted(set(merged) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED if k not in merged]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    kwargs = {}
    for key, raw in merged.items():
        conv = _SCHEMA[key]
        try:
            if key == "eta_dprime":
                kwargs[key] = None if raw == "" else float(raw)
            else:
                kwargs[key] = conv(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config key {key}={raw!r}: {e}") from e
    cfg = RunConfig(**kwargs)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if cfg.oracle not in ("mlp", "quadratic"):
        raise ConfigError(f"oracle must be mlp or quadratic, got {cfg.oracle!r}")
    if cfg.mode not in ("sequential", "parallel"):
        raise ConfigError(f"mode must be sequential or parallel, got {cfg.mode!r}")
    if cfg.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg.n < 1:
        raise ConfigError("n must be >= 1")
    if cfg.oracle == "mlp":
        if cfg.dataset not in ("blobs", "digits", "idx", "csv"):
            raise ConfigError(f"dataset must be blobs, digits, idx or csv, got {cfg.dataset!r}")
        if cfg.dataset == "idx" and not (cfg.idx_images and cfg.idx_labels):
            raise ConfigError("dataset=idx needs idx_images and idx_labels paths")
        if cfg.dataset == "csv" and not cfg.csv_path:
            raise ConfigError("dataset=csv needs csv_path")
        if not 0.0 < cfg.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if not 0.0 < cfg.subset_fraction <= 1.0:
            raise ConfigError("subset_fraction must lie in (0, 1]")
    try:
        _hyper_from_config(cfg, B=max(1, cfg.batches)).validate()
    except Exception as e:
        raise ConfigError(f"invalid hyper-parameters: {e}") from e


def _hyper_from_config(cfg: RunConfig, B: int) -> HyperParams:
    return HyperParams(
        eta=cfg.eta, eta_prime=cfg.eta_prime, eta_dprime=cfg.eta_dprime,
        gamma0=cfg.gamma0, rho0=cfg.rho0,
        gamma_floor=cfg.gamma_floor, rho_floor=cfg.rho_floor,
        L=cfg.L, alpha=cfg.alpha, momentum=cfg.momentum,
        n_replicas=cfg.n, B=B,
    )


# ---------------------------------------------------------------------------
# Run records


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    wall_time_s: float
    train_loss: float
    train_error_pct: float | None
    val_error_pct: float | None
    gamma: float
    rho: float
    ledger: dict

    def metrics_dict(self) -> dict:
        # wall time deliberately excluded: metric files must be byte-reproducible
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_error_pct": self.train_error_pct,
            "val_error_pct": self.val_error_pct,
            "gamma": self.gamma,
            "rho": self.rho,
            **self.ledger,
        }


@dataclass
class RunRecord:
    """Per-epoch metric rows plus the identity and ledger of the run."""

    meta: RunMeta
    ledger: CommLedger
    rows: list[EpochRow] = field(default_factory=list)
    final_params: FlatParams | None = None
    final_replicas: list[ReplicaState] | None = None
    final_server: ServerState | None = None

    def append(self, row: EpochRow) -> None:
        if self.rows:
            prev = self.rows[-1]
            if row.epoch <= prev.epoch:
                raise ConsistencyError(f"epoch {row.epoch} not increasing after {prev.epoch}")
            if row.gamma > prev.gamma or row.rho > prev.rho:
                raise ConsistencyError("gamma/rho must be non-increasing across epochs")
        self.rows.append(row)


# ---------------------------------------------------------------------------
# Dataset / oracle assembly


def _build_dataset(cfg: RunConfig, rng: Rng) -> Dataset:
    if cfg.dataset == "blobs":
        return ds_mod.make_blobs(
            cfg.blobs_classes, cfg.blobs_per_class, cfg.blobs_dim, cfg.blobs_spread, rng
        )
    if cfg.dataset == "digits":
        return ds_mod.make_digits(cfg.digits_per_class, rng, noise=cfg.digits_noise)
    limit = cfg.limit if cfg.limit > 0 else None
    if cfg.dataset == "idx":
        return ds_mod.load_idx(cfg.idx_images, cfg.idx_labels, limit)
    return ds_mod.load_csv(cfg.csv_path, limit)


@dataclass
class _Setup:
    oracles: list
    eval_oracle: object
    val_oracle: object | None
    x0: FlatParams
    hp: HyperParams
    shards: list[np.ndarray | None]
    samplers: list[BatchSampler | None]


def _setup_run(cfg: RunConfig, rng: Rng) -> _Setup:
    n = cfg.n
    if cfg.oracle == "quadratic":
        quad = QuadraticOracle.random(cfg.quad_dim, rng.substream(DATA_STREAM))
        hp = _hyper_from_config(cfg, B=cfg.batches).validate()
        x0 = quad.init_params(rng.substream(INIT_STREAM), scale=2.0)
        return _Setup(
            oracles=[quad] * n, eval_oracle=quad, val_oracle=None, x0=x0, hp=hp,
            shards=[None] * n, samplers=[None] * n,
        )

    full = _build_dataset(cfg, rng.substream(DATA_STREAM))
    train, val = ds_mod.split_train_val(full, cfg.val_fraction, rng.substream(SPLIT_STREAM))
    if cfg.subset_fraction < 1.0:
        keep = max(1, int(round(cfg.subset_fraction * train.n_samples)))
        pick = rng.substream(SUBSET_STREAM).choice(train.n_samples, size=keep)
        train = train.subset(np.sort(pick), train.name)
    sizes = (full.n_features, *cfg.hidden, full.n_classes)
    train_oracle = MlpOracle(sizes, train, cfg.weight_decay, cfg.batch_size)
    val_oracle = MlpOracle(sizes, val, cfg.weight_decay, cfg.batch_size)
    B = int(np.ceil(train.n_samples / cfg.batch_size))
    hp = _hyper_from_config(cfg, B=B).validate()
    x0 = train_oracle.init_params(rng.substream(INIT_STREAM))

    if n > 1 and cfg.fraction < 1.0:
        plan = ds_mod.shard(train, n, cfg.fraction, rng.substream(SHARD_STREAM))
        shards = list(plan.assignment)
    else:
        shards = [np.arange(train.n_samples)] * n
    samplers = [
        BatchSampler(shards[a], cfg.batch_size, rng.substream(a)) for a in range(n)
    ]
    return _Setup(
        oracles=[train_oracle] * n, eval_oracle=train_oracle, val_oracle=val_oracle,
        x0=x0, hp=hp, shards=shards, samplers=samplers,
    )


def _evaluate(setup: _Setup, x: FlatParams):
    if hasattr(setup.eval_oracle, "loss_value"):
        loss = setup.eval_oracle.loss_value(x, None)
    else:
        loss, _ = setup.eval_oracle.value_grad(x, None, None)
    train_err = val_err = None
    if hasattr(setup.eval_oracle, "error_rate"):
        train_err = 100.0 * setup.eval_oracle.error_rate(x, None)
    if setup.val_oracle is not None:
        val_err = 100.0 * setup.val_oracle.error_rate(x, None)
    return loss, train_err, val_err


# ---------------------------------------------------------------------------
# Output files


class _RunWriter:
    """Artifact files for one run; refuses to overwrite unless forced."""

    FILES = ("config.echo", "metrics.jsonl", "summary.csv", "model.bin", "timing.jsonl")

    def __init__(self, out_dir, cfg: RunConfig, force: bool):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        for name in self.FILES:
            target = self.dir / name
            if target.exists() and not force:
                raise ConfigError(f"refusing to overwrite {target} (pass --force)")
            if target.exists():
                target.unlink()
        self.cfg = cfg
        (self.dir / "config.echo").write_text(
            canonical_config_text(cfg.resolved()), encoding="utf-8"
        )

    def write_epoch(self, row: EpochRow) -> None:
        with open(self.dir / "metrics.jsonl", "a", encoding="utf-8") as f:
            f.write(json.dumps(row.metrics_dict(), sort_keys=True) + "\n")
        with open(self.dir / "timing.jsonl", "a", encoding="utf-8") as f:
            f.write(json.dumps({"epoch": row.epoch, "wall_time_s": row.wall_time_s}) + "\n")

    def finish(self, record: RunRecord) -> None:
        last = record.rows[-1]
        with open(self.dir / "summary.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow([
                "algorithm", "n", "N", "seed", "epochs", "final_train_loss",
                "final_train_error_pct", "final_val_error_pct",
                "grad_evals", "floats_up", "floats_down", "reduce_events",
            ])
            w.writerow([
                record.meta.algorithm, record.meta.n, record.meta.N, record.meta.seed,
                last.epoch, repr(last.train_loss),
                "" if last.train_error_pct is None else repr(last.train_error_pct),
                "" if last.val_error_pct is None else repr(last.val_error_pct),
                record.ledger.grad_evals, record.ledger.floats_up,
                record.ledger.floats_down, record.ledger.reduce_events,
            ])
        save_model(
            self.dir / "model.bin", record.final_params, self.cfg.seed, self.cfg.hash()
        )


# ---------------------------------------------------------------------------
# The experiment runner


def run_experiment(cfg: RunConfig, out_dir=None, force: bool = False) -> RunRecord:
    """Train per the config; log one metrics row per epoch; persist the model.

    Epoch cost in gradient evaluations per replica: B for sgd and
    elastic_sgd, B*L for entropy_sgd, parle and sheriff (those advance
    the scoping exponent by B per epoch).
    """
    rng = Rng(cfg.seed)
    setup = _setup_run(cfg, rng)
    hp, x0, n = setup.hp, setup.x0, cfg.n

    ledger = CommLedger()
    meta = RunMeta(algorithm=cfg.algorithm, n=n, N=x0.size, seed=cfg.seed)
    record = RunRecord(meta=meta, ledger=ledger)
    writer = _RunWriter(out_dir, cfg, force) if out_dir is not None else None

    server = ServerState(x=x0.copy())
    if cfg.algorithm == "sheriff":
        deputies = []
        for a in range(n):
            workers = []
            for b in range(n):
                sub = rng.substream(a * n + b)
                sampler = (
                    BatchSampler(setup.shards[a], cfg.batch_size, sub)
                    if setup.samplers[a] is not None
                    else None
                )
                workers.append(
                    ReplicaState.initial(x0, shard=setup.shards[a], sampler=sampler, rng=sub)
                )
            deputies.append(DeputyState(replica=ReplicaState.initial(x0), workers=workers))
        replicas = [d.replica for d in deputies]
    else:
        deputies = None
        replicas = [
            ReplicaState.initial(
                x0, shard=setup.shards[a], sampler=setup.samplers[a], rng=rng.substream(a)
            )
            for a in range(n)
        ]

    pool = None
    if cfg.mode == "parallel" and cfg.algorithm in ("parle", "elastic_sgd") and n > 1:
        pool = ThreadPoolExecutor(max_workers=n)
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            if cfg.algorithm == "sgd":
                sgd_epoch(setup.oracles[0], replicas[0], hp)
                ledger.add_grad_evals(hp.B)
            elif cfg.algorithm == "entropy_sgd":
                for _ in range(hp.B):
                    entropy_sgd_cycle(setup.oracles[0], replicas[0], hp)
                ledger.add_grad_evals(hp.B * hp.L)
            elif cfg.algorithm == "elastic_sgd":
                for _ in range(hp.B):
                    elastic_sgd_step(setup.oracles, replicas, server, hp, ledger, pool)
            elif cfg.algorithm == "parle":
                for _ in range(hp.B):
                    parle_round(setup.oracles, replicas, server, hp, ledger, pool)
            else:
                for _ in range(hp.B):
                    sheriff_round(setup.oracles[0], deputies, server, hp, ledger)

            x_eval = server.x if cfg.algorithm in ("elastic_sgd", "parle", "sheriff") else replicas[0].x
            loss, train_err, val_err = _evaluate(setup, x_eval)
            k = replicas[0].k
            row = EpochRow(
                epoch=epoch, wall_time_s=time.perf_counter() - t0,
                train_loss=loss, train_error_pct=train_err, val_error_pct=val_err,
                gamma=gamma_at(k, hp), rho=rho_at(k, hp), ledger=ledger.snapshot(),
            )
            record.append(row)
            if writer is not None:
                writer.write_epoch(row)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    record.final_params = x_eval
    record.final_replicas = replicas
    record.final_server = server
    if writer is not None:
        writer.finish(record)
    return record


# ---------------------------------------------------------------------------
# Audit drivers


def collapse_metric(replicas, server: ServerState) -> float:
    """max over replicas of ||x_a - x||_2."""
    if len(replicas) == 0:
        raise ValueError("collapse_metric needs at least one replica")
    return max(
        float(np.linalg.norm(st.x.data - server.x.data)) for st in replicas
    )


def comm_ratio(parle_rec: RunRecord, elastic_rec: RunRecord) -> float:
    """(parle floats per gradient eval) / (elastic floats per gradient eval).

    Computed from the integer ledgers with exact rational arithmetic; for
    matched runs this equals 1/L exactly.
    """
    if parle_rec.meta.n != elastic_rec.meta.n:
        raise ConsistencyError(
            f"mismatched replica counts: {parle_rec.meta.n} vs {elastic_rec.meta.n}"
        )
    if parle_rec.meta.N != elastic_rec.meta.N:
        raise ConsistencyError(
            f"mismatched model sizes: {parle_rec.meta.N} vs {elastic_rec.meta.N}"
        )
    if parle_rec.ledger.grad_evals != elastic_rec.ledger.grad_evals:
        raise ConsistencyError(
            f"mismatched gradient budgets: {parle_rec.ledger.grad_evals} vs "
            f"{elastic_rec.ledger.grad_evals}"
        )
    num = Fraction(parle_rec.ledger.floats_total, parle_rec.ledger.grad_evals)
    den = Fraction(elastic_rec.ledger.floats_total, elastic_rec.ledger.grad_evals)
    return float(num / den)


@dataclass(frozen=True)
class EquivalenceStats:
    """Distances between the temporal and spatial stationary averages."""

    gamma: float
    m: int
    sigma: float
    distances: tuple[float, ...]
    fixed_point_gap: float

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.distances))

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distances))


def equivalence_trial(
    gamma: float,
    m: int,
    sigma: float,
    seeds: int,
    *,
    d: int = 2,
    burn_in: int = 2000,
    eta_prime: float | None = None,
    base_seed: int = 2024,
    eig_range: tuple[float, float] = (1.0, 2.0),
) -> EquivalenceStats:
    """Compare the time average of one proximal chain with the snapshot mean
    of m parallel chains, both against a frozen reference point.

    Both sides run the same noisy update law
        y <- y - eta' [A (y - xstar) + sigma xi + (y - x0) / gamma]
    for burn_in + m steps; the temporal side averages its last m iterates,
    the spatial side averages its m chains at the final step. Returns the
    per-seed distances plus the worst gap to the proximal fixed point.
    """
    if m < 1 or seeds < 1:
        raise ValueError("m and seeds must be >= 1")
    setup_rng = Rng(base_seed ^ DATA_STREAM)
    oracle = QuadraticOracle.random(d, setup_rng, eig_range)
    x0 = oracle.xstar + setup_rng.normal(size=d)
    if eta_prime is None:
        eta_prime = 0.25 / (oracle.operator_norm + 1.0 / gamma)
    a_mat, xstar = oracle.A, oracle.xstar

    # proximal fixed point: argmin_y f(y) + ||y - x0||^2 / (2 gamma)
    prox = xstar + np.linalg.solve(np.eye(d) + gamma * a_mat, x0 - xstar)

    distances = []
    fp_gap = 0.0
    for s in range(seeds):
        rng = Rng(base_seed).substream(s)

        y = x0.copy()
        acc = np.zeros(d)
        for t in range(burn_in + m):
            g = a_mat @ (y - xstar) + (y - x0) / gamma
            if sigma > 0.0:
                g = g + sigma * rng.normal(size=d)
            y = y - eta_prime * g
            if t >= burn_in:
                acc += y
        temporal = acc / m

        chains = np.tile(x0, (m, 1))
        for _ in range(burn_in + m):
            g = (chains - xstar) @ a_mat + (chains - x0) / gamma
            if sigma > 0.0:
                g = g + sigma * rng.normal(size=(m, d))
            chains = chains - eta_prime * g
        spatial = chains.mean(axis=0)

        distances.append(float(np.linalg.norm(temporal - spatial)))
        fp_gap = max(
            fp_gap,
            float(np.linalg.norm(temporal - prox)),
            float(np.linalg.norm(spatial - prox)),
        )
    return EquivalenceStats(
        gamma=gamma, m=m, sigma=sigma, distances=tuple(distances), fixed_point_gap=fp_gap
    )
