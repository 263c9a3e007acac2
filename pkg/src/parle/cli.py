"""Command-line entry point.

Commands: train, align, gradcheck, equiv, commaudit, report. Every
randomized command needs an explicit seed (flag or config key); nothing
is ever seeded from the clock. Exit codes: 0 success, 1 config/usage
error, 2 data error, 3 divergence, 4 a requested check failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import (
    LayerPermutation,
    apply_permutation,
    average_aligned,
    greedy_align,
    overlap,
)
from .datasets import make_blobs
from .errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    ParleError,
)
from .harness import comm_ratio, equivalence_trial, make_config, run_experiment
from .oracles import MlpOracle, QuadraticOracle, central_difference_grad
from .params import FlatParams
from .persist import load_model, read_config, save_model
from .rng import Rng

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3
EXIT_CHECK_FAILED = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 means "data error" here, so remap
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="parle", description=__doc__)
    p.add_argument("--version", action="version", version=f"parle {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training experiment from a config file")
    t.add_argument("--config", required=True, help="flat key=value config file")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--algo", default=None, help="override the algorithm")
    t.add_argument("--n", type=int, default=None, help="override the replica count")
    t.add_argument("--epochs", type=int, default=None, help="override the epoch count")
    t.add_argument("--mode", choices=("sequential", "parallel"), default=None)
    t.add_argument("--out", required=True, help="output directory for run artifacts")
    t.add_argument("--force", action="store_true", help="overwrite existing artifacts")

    g = sub.add_parser("gradcheck", help="compare analytic gradients to central differences")
    g.add_argument("--oracle", choices=("quadratic", "mlp"), default="quadratic")
    g.add_argument("--trials", type=int, required=True, help="number of random test points")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--dim", type=int, default=8, help="quadratic dimension")
    g.add_argument("--sizes", default="2,4,3", help="mlp layer sizes, comma separated")
    g.add_argument("--tol", type=float, default=1e-4)

    e = sub.add_parser("equiv", help="temporal-vs-spatial average equivalence check")
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--gamma", type=float, default=1.0)
    e.add_argument("--m", type=int, default=64, help="window length and replica count")
    e.add_argument("--sigma", type=float, default=0.1)
    e.add_argument("--seeds", type=int, default=100)

    c = sub.add_parser("commaudit", help="audit the per-gradient communication ratio")
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--L", default="1,5,25", help="inner-loop lengths, comma separated")
    c.add_argument("--n", default="1,3,8", help="replica counts, comma separated")

    a = sub.add_parser("align", help="permutation-align model files and average them")
    a.add_argument("models", nargs="*", help="model files; first is the target")
    a.add_argument("--self-test", action="store_true", help="planted-permutation recovery check")
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--trials", type=int, default=100)
    a.add_argument("--out", default=None, help="write the aligned average model here")
    a.add_argument("--force", action="store_true")

    r = sub.add_parser("report", help="summarize finished run directories")
    r.add_argument("dirs", nargs="+", help="run output directories")
    return p


# ---------------------------------------------------------------------------
# train


def _cmd_train(args) -> int:
    values = read_config(args.config)
    overrides = {
        "seed": args.seed, "algorithm": args.algo, "n": args.n,
        "epochs": args.epochs, "mode": args.mode,
    }
    cfg = make_config(values, overrides)
    record = run_experiment(cfg, out_dir=args.out, force=args.force)
    last = record.rows[-1]
    msg = f"done: epochs={last.epoch} train_loss={last.train_loss:.6f}"
    if last.val_error_pct is not None:
        msg += f" val_error={last.val_error_pct:.2f}%"
    msg += f" grad_evals={record.ledger.grad_evals}"
    print(msg)
    print(f"artifacts in {Path(args.out)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def _gradcheck_quadratic(dim: int, trials: int, rng: Rng) -> float:
    oracle = QuadraticOracle.random(dim, rng)
    worst = 0.0
    for _ in range(trials):
        x = FlatParams(rng.normal(size=dim))
        _, grad = oracle.value_grad(x)
        fd = central_difference_grad(lambda v: oracle.value_grad(x.with_data(v))[0], x.data)
        worst = max(worst, _rel_err(grad.data, fd))
    return worst


def _gradcheck_mlp(sizes: tuple[int, ...], trials: int, rng: Rng) -> float:
    data = make_blobs(sizes[-1], 8, sizes[0], 0.3, rng)
    oracle = MlpOracle(sizes, data, weight_decay=1e-3, batch_size=8)
    worst = 0.0
    for _ in range(trials):
        x = oracle.init_params(rng)
        batch = rng.choice(data.n_samples, size=min(8, data.n_samples))
        _, grad = oracle.value_grad(x, batch)
        fd = central_difference_grad(
            lambda v: oracle.value_grad(x.with_data(v), batch)[0], x.data
        )
        worst = max(worst, _rel_err(grad.data, fd))
    return worst


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / denom


def _cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    rng = Rng(args.seed)
    if args.oracle == "quadratic":
        worst = _gradcheck_quadratic(args.dim, args.trials, rng)
    else:
        sizes = tuple(int(t) for t in args.sizes.split(","))
        if len(sizes) < 2:
            raise ConfigError("--sizes needs at least input,output")
        worst = _gradcheck_mlp(sizes, args.trials, rng)
    ok = worst <= args.tol
    print(f"gradcheck {args.oracle}: max relative error {worst:.3e} "
          f"(tol {args.tol:g}) {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# equiv


def _cmd_equiv(args) -> int:
    ok = True
    exact = equivalence_trial(args.gamma, args.m, 0.0, 1, base_seed=args.seed)
    exact_ok = exact.fixed_point_gap < 1e-9 and exact.max_distance < 1e-9
    ok &= exact_ok
    print(f"equiv sigma=0: fixed-point gap {exact.fixed_point_gap:.3e}, "
          f"distance {exact.max_distance:.3e} (tol 1e-09) {'PASS' if exact_ok else 'FAIL'}")
    if args.sigma > 0.0:
        noisy = equivalence_trial(args.gamma, args.m, args.sigma, args.seeds, base_seed=args.seed)
        bound = 5.0 * args.sigma / np.sqrt(args.m)
        noisy_ok = noisy.mean_distance <= bound
        ok &= noisy_ok
        print(f"equiv sigma={args.sigma:g}: mean distance {noisy.mean_distance:.4f} "
              f"over {args.seeds} seeds (bound {bound:.4f}) {'PASS' if noisy_ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# commaudit


def _audit_pair(L: int, n: int, seed: int):
    base = dict(
        oracle="quadratic", quad_dim=4, batches=4, seed=str(seed), n=str(n),
        L=str(L), eta="0.01", eta_prime="0.01", momentum="0.0", gamma0="10.0",
        rho0="1.0", gamma_floor="1.0", rho_floor="0.1",
    )
    parle_cfg = make_config({**base, "algorithm": "parle", "epochs": "1"})
    elastic_cfg = make_config({**base, "algorithm": "elastic_sgd", "epochs": str(L)})
    return run_experiment(parle_cfg), run_experiment(elastic_cfg)


def _cmd_commaudit(args) -> int:
    Ls = [int(t) for t in args.L.split(",")]
    ns = [int(t) for t in args.n.split(",")]
    ok = True
    for L in Ls:
        for n in ns:
            parle_rec, elastic_rec = _audit_pair(L, n, args.seed)
            ratio = comm_ratio(parle_rec, elastic_rec)
            expected = 1.0 / L
            good = ratio == expected
            ok &= good
            print(f"commaudit L={L} n={n}: ratio {ratio:.6f} "
                  f"(expected {expected:.6f}) {'PASS' if good else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# align


def _random_mlp(sizes, rng: Rng) -> FlatParams:
    arrays = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        arrays.append(rng.normal(size=(fan_out, fan_in)))
        arrays.append(rng.normal(size=fan_out))
    return FlatParams.from_arrays(arrays)


def _cmd_align(args) -> int:
    if args.self_test:
        if args.seed is None:
            raise ConfigError("align --self-test needs --seed")
        rng = Rng(args.seed)
        failures = 0
        worst_overlap = 1.0
        for _ in range(args.trials):
            width = int(rng.integers(4, 33))
            net = _random_mlp((3, width, 2), rng)
            planted = LayerPermutation((rng.permutation(width),))
            shuffled = apply_permutation(net, planted)
            recovered = apply_permutation(shuffled, greedy_align(net, shuffled))
            if not np.array_equal(recovered.data, net.data):
                failures += 1
            worst_overlap = min(worst_overlap, overlap(net, recovered))
        ok = failures == 0
        print(f"align self-test: {args.trials - failures}/{args.trials} recovered, "
              f"overlap {worst_overlap:.6f} {'PASS' if ok else 'FAIL'}")
        return EXIT_OK if ok else EXIT_CHECK_FAILED

    if len(args.models) < 2:
        raise ConfigError("align needs at least two model files (or --self-test)")
    nets = []
    for path in args.models:
        net, _ = load_model(path)
        nets.append(net)
    ref = nets[0]
    for path, other in zip(args.models[1:], nets[1:]):
        naive = overlap(ref, other)
        aligned = overlap(ref, apply_permutation(other, greedy_align(ref, other)))
        print(f"{path}: overlap naive {naive:.4f} -> aligned {aligned:.4f}")
    if args.out is not None:
        target = Path(args.out)
        if target.exists() and not args.force:
            raise ConfigError(f"refusing to overwrite {target} (pass --force)")
        avg = average_aligned(nets)
        save_model(target, avg, seed=0, config_hash="")
        print(f"aligned average written to {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _cmd_report(args) -> int:
    import csv as _csv

    rows = []
    for d in args.dirs:
        path = Path(d) / "summary.csv"
        if not path.exists():
            raise DataFormatError(f"no summary.csv in {d}")
        with open(path, newline="", encoding="utf-8") as f:
            for row in _csv.DictReader(f):
                rows.append((d, row))
    header = f"{'run':<28} {'algo':<12} {'n':>2} {'val_err%':>9} {'train_err%':>11} {'grad_evals':>11} {'floats':>13}"
    print(header)
    for d, row in rows:
        val = row["final_val_error_pct"] or "-"
        tr = row["final_train_error_pct"] or "-"
        floats = int(row["floats_up"]) + int(row["floats_down"])
        val_s = f"{float(val):.2f}" if val != "-" else val
        tr_s = f"{float(tr):.2f}" if tr != "-" else tr
        print(f"{Path(d).name:<28} {row['algorithm']:<12} {row['n']:>2} "
              f"{val_s:>9} {tr_s:>11} {row['grad_evals']:>11} {floats:>13}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "gradcheck": _cmd_gradcheck,
    "equiv": _cmd_equiv,
    "commaudit": _cmd_commaudit,
    "align": _cmd_align,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ParleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
