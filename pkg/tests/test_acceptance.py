"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run `pytest tests/test_acceptance.py -v -s` to see every line. Criteria
with statistical content use frozen seeds; every tolerance is stated
inline next to its assertion.
"""

import math
import time

import numpy as np
import pytest

from parle import (
    BatchSampler,
    DeputyState,
    FlatParams,
    HyperParams,
    LayerPermutation,
    MlpOracle,
    QuadraticOracle,
    ReplicaState,
    Rng,
    ServerState,
    apply_permutation,
    average_aligned,
    collapse_metric,
    comm_ratio,
    entropy_sgd_cycle,
    equivalence_trial,
    greedy_align,
    make_blobs,
    make_config,
    make_digits,
    nesterov_step,
    overlap,
    parle_round,
    run_experiment,
    save_idx,
    sgd_epoch,
    sheriff_round,
    split_train_val,
    vec_avg,
)
from parle.cli import main as cli_main

from conftest import random_mlp_params


def _report(num: int, name: str, ok: bool, detail: str, elapsed: float, limit: float):
    line = (
        f"ACCEPTANCE {num} {name}: {'PASS' if ok and elapsed < limit else 'FAIL'} "
        f"({detail}; {elapsed:.1f}s, limit {limit:.0f}s)"
    )
    print("\n" + line)
    assert ok, line
    assert elapsed < limit, line


# ---------------------------------------------------------------------------


def test_criterion_1_local_entropy_gradient_oracle():
    t0 = time.perf_counter()
    rng = Rng(123)
    worst = 0.0
    for trial in range(20):
        d = int(rng.integers(2, 21))
        low = 0.0 if trial % 2 == 0 else 0.05  # half the matrices are singular PSD
        oracle = QuadraticOracle.random(d, rng, (low, 2.0))
        x = FlatParams(oracle.xstar + rng.normal(size=d))
        for gamma in (0.1, 1.0, 10.0):
            hp = HyperParams(
                eta_prime=0.1 / (oracle.operator_norm + 1.0 / gamma),
                gamma0=gamma, gamma_floor=gamma, L=500, alpha=0.75,
                momentum=0.9, B=10**9,
            )
            st = ReplicaState.initial(x)
            x_old = st.x.copy()
            entropy_sgd_cycle(oracle, st, hp)
            implied = (x_old.data - st.z.data) / gamma
            exact = oracle.smoothed_grad(x_old, gamma).data
            worst = max(
                worst, np.linalg.norm(implied - exact) / np.linalg.norm(exact)
            )
    _report(
        1, "local-entropy gradient oracle", worst < 1e-3,
        f"worst rel err {worst:.2e} < 1e-3 over 20 quadratics x gamma {{0.1,1,10}}",
        time.perf_counter() - t0, 10.0,
    )


def test_criterion_2_temporal_spatial_equivalence():
    t0 = time.perf_counter()
    exact = equivalence_trial(1.0, 64, 0.0, 1, base_seed=42)
    exact_ok = exact.fixed_point_gap < 1e-9 and exact.max_distance < 1e-9
    sigma = 0.1
    noisy = equivalence_trial(1.0, 64, sigma, 100, base_seed=42)
    bound = 5.0 * sigma / math.sqrt(64)
    noisy_ok = noisy.mean_distance <= bound
    _report(
        2, "temporal/spatial average equivalence", exact_ok and noisy_ok,
        f"sigma=0 gap {exact.fixed_point_gap:.1e} < 1e-9; "
        f"sigma=0.1 mean {noisy.mean_distance:.4f} <= {bound:.4f} (100 seeds)",
        time.perf_counter() - t0, 60.0,
    )


def test_criterion_3_communication_ratio():
    t0 = time.perf_counter()
    ok = True
    checked = []
    for L in (1, 5, 25):
        for n in (1, 3, 8):
            base = dict(
                oracle="quadratic", quad_dim=4, batches="3", seed="17", n=str(n),
                L=str(L), eta="0.01", eta_prime="0.01", momentum="0.0", gamma0="10.0",
            )
            parle_rec = run_experiment(
                make_config({**base, "algorithm": "parle", "epochs": "1"})
            )
            elastic_rec = run_experiment(
                make_config({**base, "algorithm": "elastic_sgd", "epochs": str(L)})
            )
            ratio = comm_ratio(parle_rec, elastic_rec)
            ok &= ratio == 1.0 / L
            checked.append(f"L={L},n={n}")
    _report(
        3, "communication ratio == 1/L exactly", ok,
        f"{len(checked)} matched pairs, integer ledgers",
        time.perf_counter() - t0, 10.0,
    )


def test_criterion_4_replica_collapse():
    t0 = time.perf_counter()
    ok = True
    details = []
    for n in (2, 3, 6):
        rng = Rng(1000 + n)
        oracle = QuadraticOracle.random(10, rng, (0.5, 2.0))
        hp = HyperParams(
            eta=0.1, eta_prime=0.1 / (oracle.operator_norm + 1.0),
            gamma0=100.0, rho0=1.0, gamma_floor=1.0, rho_floor=0.1,
            L=25, alpha=0.75, momentum=0.9, n_replicas=n, B=10,
        )
        replicas = [
            ReplicaState.initial(oracle.init_params(rng.substream(a), scale=2.0),
                                 rng=rng.substream(a))
            for a in range(n)
        ]
        server = ServerState(
            x=FlatParams(np.mean([st.x.data for st in replicas], axis=0))
        )
        for _ in range(200):
            parle_round([oracle] * n, replicas, server, hp)
        col = collapse_metric(replicas, server)
        dist = float(np.linalg.norm(server.x.data - oracle.xstar))
        ok &= col < 1e-3 and dist < 1e-3
        details.append(f"n={n}: collapse {col:.1e}, |x-x*| {dist:.1e}")
    _report(
        4, "replica collapse under scoping", ok,
        "; ".join(details) + " (all < 1e-3 in 200 rounds)",
        time.perf_counter() - t0, 30.0,
    )


def test_criterion_5_degeneracy_identities():
    t0 = time.perf_counter()

    # (a) parle n=1 with the elastic term off is bitwise entropy-sgd
    data = make_blobs(3, 60, 2, 0.2, Rng(51))
    oracle = MlpOracle((2, 8, 3), data, batch_size=15)
    x0 = oracle.init_params(Rng(99))

    def state():
        rng = Rng(6)
        return ReplicaState.initial(
            x0, sampler=BatchSampler(np.arange(data.n_samples), 15, rng.substream(0)),
            rng=rng.substream(0),
        )

    hp = HyperParams(eta=0.1, eta_prime=0.05, momentum=0.9, L=25, alpha=0.75,
                     gamma0=100.0, rho0=math.inf, rho_floor=math.inf, B=4)
    st_e, st_p = state(), state()
    server = ServerState(x=x0.copy())
    a_ok = True
    for _ in range(6):
        entropy_sgd_cycle(oracle, st_e, hp)
        parle_round([oracle], [st_p], server, hp)
        a_ok &= bool(np.array_equal(st_p.x.data, st_e.x.data))

    # (b) nesterov with mu=0 is bitwise the plain gradient step
    rng = Rng(7)
    b_ok = True
    for _ in range(100):
        p0 = rng.normal(size=32)
        g0 = rng.normal(size=32)
        eta = float(rng.uniform(1e-4, 1.0))
        stepped, _ = nesterov_step(
            FlatParams(p0), FlatParams(np.zeros(32)), FlatParams(g0), eta, 0.0
        )
        b_ok &= bool(np.array_equal(stepped.data, p0 - eta * g0))

    # (c) sheriff n=1 is bitwise parle n=1 with alpha=0 (spatial z of one worker)
    hp_s = HyperParams(eta=0.1, eta_prime=0.05, momentum=0.9, L=25, alpha=0.0,
                       gamma0=100.0, rho0=1.0, B=4)

    def sampler():
        return BatchSampler(np.arange(data.n_samples), 15, Rng(8).substream(0))

    st_p2 = ReplicaState.initial(x0, sampler=sampler(), rng=Rng(8).substream(0))
    server_p = ServerState(x=x0.copy())
    dep = DeputyState(
        replica=ReplicaState.initial(x0),
        workers=[ReplicaState.initial(x0, sampler=sampler(), rng=Rng(8).substream(0))],
    )
    server_s = ServerState(x=x0.copy())
    c_ok = True
    for _ in range(6):
        parle_round([oracle], [st_p2], server_p, hp_s)
        sheriff_round(oracle, [dep], server_s, hp_s)
        c_ok &= bool(np.array_equal(dep.replica.x.data, st_p2.x.data))
        c_ok &= bool(np.array_equal(server_s.x.data, server_p.x.data))

    _report(
        5, "degeneracy identities (bitwise)", a_ok and b_ok and c_ok,
        f"parle(n=1,elastic 0)==entropy {a_ok}; nesterov(mu=0)==sgd {b_ok}; "
        f"sheriff(n=1)==reduction {c_ok}",
        time.perf_counter() - t0, 10.0,
    )


# ---------------------------------------------------------------------------
# Desk-scale training criteria share one IDX dataset on disk.


@pytest.fixture(scope="module")
def digits_idx(tmp_path_factory):
    root = tmp_path_factory.mktemp("digits")
    ds = make_digits(300, Rng(2026))  # 3000 samples -> 2000 train / 1000 val
    img, lab = root / "images.idx", root / "labels.idx"
    save_idx(ds, img, lab)
    return img, lab


def _digits_config(algorithm, seed, epochs, img, lab, **kw):
    values = dict(
        algorithm=algorithm, oracle="mlp", dataset="idx",
        idx_images=str(img), idx_labels=str(lab),
        val_fraction=str(1 / 3), batch_size="80", hidden="64",
        epochs=str(epochs), seed=str(seed), eta="0.05", eta_prime="0.05",
        momentum="0.9", L="25", alpha="0.75", gamma0="100.0", rho0="1.0",
        gamma_floor="1.0", rho_floor="0.1",
    )
    values.update({k: str(v) for k, v in kw.items()})
    return make_config(values)


def test_criterion_6_desk_scale_training(digits_idx):
    t0 = time.perf_counter()
    img, lab = digits_idx
    seeds = (1, 2, 3)
    sgd_val, sgd_train, parle_val, parle_train = [], [], [], []
    for seed in seeds:
        # matched budget: 150 sgd epochs x B=25 == parle 2 epochs x (3*25*25)
        rec_s = run_experiment(_digits_config("sgd", seed, 150, img, lab, n=1))
        rec_p = run_experiment(_digits_config("parle", seed, 2, img, lab, n=3))
        assert rec_s.ledger.grad_evals == rec_p.ledger.grad_evals == 3750
        sgd_val.append(rec_s.rows[-1].val_error_pct)
        sgd_train.append(rec_s.rows[-1].train_error_pct)
        parle_val.append(rec_p.rows[-1].val_error_pct)
        parle_train.append(rec_p.rows[-1].train_error_pct)
    mv_s, mv_p = np.mean(sgd_val), np.mean(parle_val)
    mt_s, mt_p = np.mean(sgd_train), np.mean(parle_train)
    val_ok = mv_p <= mv_s + 0.5
    train_ok = mt_p >= mt_s
    _report(
        6, "desk-scale training (2000/1000, mlp 784-64-10, 3 seeds)",
        val_ok and train_ok,
        f"val: parle {mv_p:.2f}% vs sgd {mv_s:.2f}% (allow +0.5); "
        f"train: parle {mt_p:.2f}% >= sgd {mt_s:.2f}%",
        time.perf_counter() - t0, 900.0,
    )


def test_criterion_7_split_data_direction(digits_idx):
    t0 = time.perf_counter()
    img, lab = digits_idx
    seeds = (1, 2, 3)
    parle_val, sgd_half_val = [], []
    for seed in seeds:
        rec_p = run_experiment(
            _digits_config("parle", seed, 2, img, lab, n=3, fraction=0.5)
        )
        rec_h = run_experiment(
            _digits_config("sgd", seed, 150, img, lab, n=1, subset_fraction=0.5)
        )
        parle_val.append(rec_p.rows[-1].val_error_pct)
        sgd_half_val.append(rec_h.rows[-1].val_error_pct)
    mv_p, mv_h = np.mean(parle_val), np.mean(sgd_half_val)
    _report(
        7, "split data: parle on 50% shards beats sgd on a 50% subset",
        mv_p < mv_h,
        f"parle {mv_p:.2f}% < sgd-on-half {mv_h:.2f}% (3 seeds)",
        time.perf_counter() - t0, 900.0,
    )


def test_criterion_8_alignment(tmp_path):
    t0 = time.perf_counter()

    # exact planted-permutation recovery, hidden widths 4..32
    rng = Rng(31415)
    recovered = 0
    trials = 1000
    for _ in range(trials):
        width = int(rng.integers(4, 33))
        net = random_mlp_params((3, width, 2), rng)
        perm = LayerPermutation((rng.permutation(width),))
        shuffled = apply_permutation(net, perm)
        back = apply_permutation(shuffled, greedy_align(net, shuffled))
        if np.array_equal(back.data, net.data) and overlap(net, back) > 1.0 - 1e-12:
            recovered += 1
    planted_ok = recovered == trials

    # aligned averaging beats naive averaging, 5/5 independent seed pairs
    def train_net(oracle, n_train, seed):
        rng_t = Rng(seed)
        hp = HyperParams(eta=0.05, momentum=0.9, B=int(np.ceil(n_train / 32)))
        st = ReplicaState.initial(
            oracle.init_params(rng_t),
            shard=np.arange(n_train),
            sampler=BatchSampler(np.arange(n_train), 32, rng_t.substream(1)),
            rng=rng_t.substream(1),
        )
        for _ in range(40):
            sgd_epoch(oracle, st, hp)
        return st.x

    wins = 0
    pair_details = []
    for pair in range(5):
        data_rng = Rng(9000 + pair)
        full = make_blobs(6, 200, 2, 0.22, data_rng)
        train, val = split_train_val(full, 0.25, data_rng.substream(3))
        oracle = MlpOracle((2, 12, 6), train, batch_size=32)
        val_oracle = MlpOracle((2, 12, 6), val, batch_size=32)
        a = train_net(oracle, train.n_samples, 100 + pair)
        b = train_net(oracle, train.n_samples, 200 + pair)
        naive_err = val_oracle.error_rate(vec_avg([a, b]))
        aligned_err = val_oracle.error_rate(average_aligned([a, b]))
        wins += aligned_err < naive_err
        pair_details.append(f"{100 * naive_err:.0f}->{100 * aligned_err:.0f}%")
    _report(
        8, "permutation alignment",
        planted_ok and wins == 5,
        f"planted recovery {recovered}/{trials}; aligned<naive {wins}/5 "
        f"(naive->aligned val err: {', '.join(pair_details)})",
        time.perf_counter() - t0, 300.0,
    )


def test_criterion_9_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "det.cfg"
    cfg.write_text(
        "algorithm=parle\noracle=mlp\ndataset=blobs\nblobs_classes=3\n"
        "blobs_per_class=100\nblobs_dim=2\nblobs_spread=0.15\nval_fraction=0.2\n"
        "batch_size=30\nhidden=8\nn=3\nL=5\neta=0.05\neta_prime=0.05\n"
        "momentum=0.9\ngamma0=10.0\nepochs=2\nseed=33\nmode=sequential\n"
    )
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        rc = cli_main(["train", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
    identical = all(
        (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        for name in ("metrics.jsonl", "summary.csv", "config.echo", "model.bin")
    )
    _report(
        9, "CLI determinism (byte-identical metrics files)", identical,
        "metrics.jsonl, summary.csv, config.echo, model.bin all byte-equal",
        time.perf_counter() - t0, 120.0,
    )
