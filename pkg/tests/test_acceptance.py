"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.

Run standalone for just the summary lines::

    python3 tests/test_acceptance.py
"""
import itertools
import sys
import time

import numpy as np
import pytest

from stcpriv.ambiguization import ambiguize_batch
from stcpriv.coding import (NoiseModel, TernaryCode, encode_batch, required_sparsity,
                            ternary_distance_bounds, ternary_encode)
from stcpriv.data import gen_clustered
from stcpriv.experiments import ExperimentConfig, clustered_setup, fig7_settings
from stcpriv.identification import communication_cost, private_decode
from stcpriv.privacy import distance_pdfs, kld_leak, kmeans_attack, ratio_table
from stcpriv.server import StorageClient, StorageServer, StorageService
from stcpriv.storage import enroll
from stcpriv.transform import (KeyMatrix, hard_threshold_columns, init_transform, learn_transform,
                               objective, sparse_code_step, transform_update)


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            sys.stdout.write(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}\n")
        return ok
    return emit


@pytest.fixture(scope="module")
def standard():
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    setup = clustered_setup(cfg)
    return cfg, setup, time.perf_counter() - t0


def test_transform_learning_planted(report):
    N, M, S = 64, 500, 4
    rng = np.random.default_rng(2024)
    Q, R = np.linalg.qr(rng.standard_normal((N, N)))
    Q = Q * np.sign(np.diag(R))
    A0 = np.zeros((N, M))
    for m in range(M):
        A0[rng.choice(N, S, replace=False), m] = rng.standard_normal(S) * 3
    X = Q.T @ A0
    key = KeyMatrix.random(N, seed=7)

    t0 = time.perf_counter()
    W = init_transform(key).W
    orth = [np.linalg.norm(W @ W.T - np.eye(N))]
    A = sparse_code_step(W, X, S)
    trace = [objective(W, X, A)]
    for _ in range(50):
        W = transform_update(X, A)
        orth.append(np.linalg.norm(W @ W.T - np.eye(N)))
        A = sparse_code_step(W, X, S)
        trace.append(objective(W, X, A))
    T = learn_transform(X, S, key, max_iters=50)
    elapsed = time.perf_counter() - t0

    F = T.W @ X
    residual = np.linalg.norm(F - hard_threshold_columns(F, S))
    monotone = bool(np.all(np.diff(T.objective_trace) <= 1e-12 * max(T.objective_trace[0], 1)))
    same_path = np.allclose(T.objective_trace, trace[: len(T.objective_trace)], rtol=1e-9, atol=1e-12)
    ok = residual < 1e-6 and max(orth) < 1e-9 and monotone and same_path and elapsed < 10
    assert report("transform learning (planted, N=L=64, M=500, S_x=4)", ok,
                  f"residual {residual:.2e} (<1e-6) after {len(T.objective_trace) - 1} updates, "
                  f"max orthogonality error {max(orth):.1e} (<1e-9), monotone={monotone}, {elapsed:.2f}s (<10s)")


def test_distance_bounds_exhaustive(report):
    L, S_x = 6, 2

    def codes(S):
        for pos in itertools.combinations(range(L), S):
            for signs in itertools.product((-1, 1), repeat=S):
                v = np.zeros(L, dtype=np.int64)
                v[list(pos)] = signs
                yield v

    A = np.array(list(codes(S_x)))
    violations = pairs = 0
    for S_y in (1, 2, 3):
        lo, hi = ternary_distance_bounds(S_x, S_y)
        B = np.array(list(codes(S_y)))
        D = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * A @ B.T
        violations += int(((D < lo) | (D > hi)).sum())
        pairs += D.size
    assert report("distance bounds (L=6, S_x=2, S_y in 1..3)", violations == 0,
                  f"{violations} violations over {pairs} pairs")


def test_zero_noise_identity(report, standard):
    cfg, (X, _, T, A), _ = standard
    db = enroll(A)
    bad = []
    for m in range(0, X.shape[1], 50):
        r = required_sparsity(T, X[:, m], NoiseModel(0.0), cfg.S_x, seed=m)
        b = ternary_encode(T, X[:, m], r.value)
        a = TernaryCode(A[:, m])
        res = private_decode(b, db, 0.0)
        d = dict(res.entries).get(m)
        if not (r.value == cfg.S_x and a.inner(b) == cfg.S_x and d == 0.0):
            bad.append(m)
    assert report("zero-noise identity", not bad,
                  f"S_y = S_x = {cfg.S_x}, <a,b> = S_x, decode distance 0 for all 20 probes" if not bad
                  else f"failed for items {bad}")


def test_cluster_distance_table(report, standard):
    cfg, (X, labels, T, A), setup_time = standard
    L, S_x = cfg.L, cfg.S_x
    t0 = time.perf_counter()
    low, full = ratio_table([(S_x / L, S_x / L), ((L - S_x) / L, (L - S_x) / L)], X, labels, T, S_x,
                            cfg.noise, codes=A, seed=cfg.seed)
    elapsed = setup_time + time.perf_counter() - t0
    checks = {
        "low diag in [0.79,1.07]": 0.79 <= low.d_diag_mean <= 1.07,
        "low off in [3.5,5.1]": 3.5 <= low.d_off_mean <= 5.1,
        "full entries in [19,26]": bool(np.all((full.matrix >= 19) & (full.matrix <= 26))),
        "full ratio in [0.95,1.10]": 0.95 <= full.ratio <= 1.10,
        "runtime < 120s": elapsed < 120,
    }
    failed = [k for k, v in checks.items() if not v]
    assert report("cluster distance table", not failed,
                  f"low block (S_ns={low.S_ns}, S_nq={low.S_nq}) diag {low.d_diag_mean:.3f} off {low.d_off_mean:.3f}; "
                  f"full block entries {full.matrix.min():.2f}..{full.matrix.max():.2f} ratio {full.ratio:.3f}; "
                  f"{elapsed:.1f}s" + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_ratio_vs_disclosed_fraction(report, standard):
    cfg, (X, labels, T, A), _ = standard
    tables = ratio_table(fig7_settings(cfg.L, cfg.S_x), X, labels, T, cfg.S_x, cfg.noise, codes=A, seed=cfg.seed)
    frac = np.array([t.disclosed_fraction for t in tables])
    ratio = np.array([t.ratio for t in tables])
    at_055 = ratio[np.argmin(np.abs(frac - 0.055))]
    at_1 = ratio[np.argmin(np.abs(frac - 1.0))]
    inversions = int(np.sum(ratio[1:] > ratio[:-1] * 1.05))
    ok = at_055 >= 3 and at_1 <= 1.1 and inversions <= 1
    curve = ", ".join(f"{f:.3f}:{r:.2f}" for f, r in zip(frac, ratio))
    assert report("distance ratio vs disclosed fraction", ok,
                  f"ratio {at_055:.2f} at 0.055 (>=3), {at_1:.3f} at 1.0 (<=1.1), {inversions} inversions; curve {curve}")


def test_kmeans_attack(report, standard):
    cfg, (_, labels, _, A), _ = standard
    base = kmeans_attack(A, cfg.k, labels, restarts=20, rng_seed=0).accuracy
    accs = []
    for s in range(20):
        P = ambiguize_batch(A, cfg.L - cfg.S_x, seed=1000 + s)
        accs.append(kmeans_attack(P, cfg.k, labels, restarts=20, rng_seed=s).accuracy)
    mean = float(np.mean(accs))
    ok = base >= 0.95 and 0.18 <= mean <= 0.32
    assert report("k-means attack", ok,
                  f"beta_x=0 accuracy {base:.3f} (>=0.95); full ambiguization mean {mean:.3f} over 20 seeds "
                  f"(range {min(accs):.3f}..{max(accs):.3f}; target [0.18, 0.32])")


def test_kld_leak(report, standard):
    cfg, (_, labels, _, A), _ = standard
    L, S_x = cfg.L, cfg.S_x
    reps = {}
    for S_ns in (0, 62, 123, 185, L - S_x):
        P = ambiguize_batch(A, S_ns, seed=cfg.seed + 7919 * S_ns)
        reps[S_ns] = kld_leak(distance_pdfs(P, labels, alpha_x=S_x / L, beta_x=S_ns / L))
    k0, kf = reps[0].kld, reps[L - S_x].kld
    nonneg = all(r.kld >= 0 for r in reps.values())
    ident = max(abs(r.decomposition - r.kld) for r in reps.values())
    ok = kf <= 0.1 * k0 and nonneg and ident < 1e-9
    assert report("KLD leak", ok,
                  f"D(P1||P2) {k0:.4f} at beta_x=0, {kf:.2e} at full ambiguization (ratio {kf / k0:.2e}, <=0.1); "
                  f"non-negative={nonneg}; decomposition error {ident:.1e}")


def test_communication_cost(report):
    c = communication_cost(10**9, 0.03125, 16)
    ok = c.bits == 5e8 and c.megabytes == 62.5 and round(c.megabytes) in (62, 63)
    assert report("communication cost", ok, f"{c.bits:.3g} bits = {c.megabytes} MB")


def test_protocol_differential(report):
    N = L = 512
    S_x, S_ns = 10, 6
    X, _ = gen_clustered(4, 250, N, seed=3)
    T = learn_transform(X, S_x, KeyMatrix.random(N, seed=4), max_iters=20)
    A = encode_batch(T, X, S_x)
    P = ambiguize_batch(A, S_ns, seed=5)
    service = StorageService(enroll(P))
    srv = StorageServer(service)
    srv.start_background()
    rng = np.random.default_rng(6)
    mismatches, volumes, wire_bytes = 0, [], []
    gamma = (S_x + S_x + S_ns) / L
    try:
        with StorageClient(port=srv.port) as c:
            for _ in range(100):
                m = int(rng.integers(X.shape[1]))
                b = ternary_encode(T, X[:, m] + np.sqrt(0.15) * rng.standard_normal(N), S_x)
                if c.query_full(b, gamma) != private_decode(b, service.db, gamma).entries:
                    mismatches += 1
                positions = np.sort(rng.choice(L, 16, replace=False))
                lists = c.query_positions(positions)
                volumes.append(lists.volume())
                wire_bytes.append(len(c.last_reply))
    finally:
        srv.shutdown()
        srv.server_close()
    predicted = communication_cost(service.db.M, service.db.density, 16).bits
    rel = abs(np.mean(volumes) - predicted) / predicted
    ok = mismatches == 0 and rel <= 0.10
    assert report("protocol differential", ok,
                  f"{mismatches}/100 SHORTLIST mismatches; mean returned volume {np.mean(volumes):.1f} id-bits vs "
                  f"predicted {predicted:.1f} ({100 * rel:.1f}% off, <=10%); per-query {min(volumes)}..{max(volumes)}; "
                  f"mean LISTS frame {np.mean(wire_bytes):.0f} bytes")


def test_client_side_invariance(report, standard):
    cfg, (X, _, T, A), _ = standard
    rng = np.random.default_rng(9)
    probes = np.stack([ternary_encode(T, X[:, m] + np.sqrt(cfg.sigma_z_sq) * rng.standard_normal(cfg.N), cfg.S_x).values
                       for m in rng.choice(X.shape[1], 20, replace=False)], axis=1).astype(np.int64)
    support = A != 0

    def client_view(P):
        P = P.astype(np.int64)
        # squared distance over each item's true support, for every probe
        return np.stack([(((P - probes[:, [j]]) ** 2) * support).sum(0) for j in range(probes.shape[1])])

    clean = client_view(ambiguize_batch(A, 0, seed=1))
    dense = client_view(ambiguize_batch(A, cfg.L - cfg.S_x, seed=1))
    ok = clean.shape == (20, 1000) and np.array_equal(clean, dense)
    assert report("client-side invariance", ok,
                  f"{clean.size} true-support distances, {int((clean != dense).sum())} differ between "
                  f"S_ns=0 and S_ns={cfg.L - cfg.S_x}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
