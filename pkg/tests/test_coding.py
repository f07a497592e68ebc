import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import pearsonr, spearmanr

from stcpriv.coding import (
    NoiseModel,
    TernaryCode,
    binary_embed_baseline,
    distortion,
    encode_batch,
    hard_threshold,
    mse,
    pack_code,
    reconstruct,
    required_sparsity,
    ternary_distance_bounds,
    ternary_encode,
    unpack_code,
)
from stcpriv.transform import KeyMatrix, init_transform


def key_W(n, seed):
    return init_transform(KeyMatrix.random(n, seed=seed)).W


def test_hard_threshold_examples():
    np.testing.assert_array_equal(hard_threshold(np.array([3, -1, 0.5, -4]), 2), [3, 0, 0, -4])
    f = np.array([0.1, -2.0, 7.0])
    np.testing.assert_array_equal(hard_threshold(f, 3), f)
    np.testing.assert_array_equal(hard_threshold(np.ones(3), 2), [1, 1, 0])


def test_ternary_encode_examples():
    x = np.array([3, -1, 0.5, -4])
    assert list(ternary_encode(np.eye(4), x, 2).values) == [1, 0, 0, -1]
    z = ternary_encode(np.eye(4), np.zeros(4), 2)
    assert z.S == 0 and z.support.size == 0


def test_zero_noise_identity(rng):
    W = key_W(32, 1)
    x = rng.standard_normal(32)
    a, b = ternary_encode(W, x, 7), ternary_encode(W, x.copy(), 7)
    assert a == b and a.inner(b) == 7


def test_code_validation():
    with pytest.raises(ValueError):
        TernaryCode(np.array([0, 2, 0]))
    c = TernaryCode(np.array([1, 0, -1, 0]))
    assert list(c.support) == [0, 2] and c.S == 2 and c.L == 4


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100) | st.floats(-100, -0.01), st.integers(1, 16))
def test_sign_equivariance(seed, c, S):
    rng = np.random.default_rng(seed)
    W = key_W(16, 3)
    x = rng.standard_normal(16)
    a = ternary_encode(W, x, S).values
    np.testing.assert_array_equal(ternary_encode(W, c * x, S).values, np.sign(c) * a)


def test_reconstruct_examples(rng):
    assert not reconstruct(np.eye(3), TernaryCode(np.zeros(3, dtype=np.int8))).any()
    np.testing.assert_array_equal(reconstruct(np.eye(3), TernaryCode(np.array([1, 0, -1]))), [1, 0, -1])
    W = key_W(16, 2)
    x = rng.standard_normal(16)
    xhat = reconstruct(W, ternary_encode(W, x, 16))
    np.testing.assert_allclose(xhat, W.T @ np.sign(W @ x))
    assert distortion(x[:, None], xhat[:, None]) == pytest.approx(np.linalg.norm(x - xhat) / 16)


def test_distortion_examples():
    X = np.random.default_rng(0).standard_normal((4, 3))
    assert distortion(X, X) == 0
    e1 = np.zeros((4, 1))
    e1[0] = 1
    assert distortion(e1, np.zeros((4, 1))) == pytest.approx(0.25)
    assert mse(e1, np.zeros((4, 1))) == pytest.approx(0.25)


def test_distortion_sweep_monotone_with_analytic_oracle(rng):
    N = 128
    W = key_W(N, 5)
    X = rng.standard_normal((N, 200))
    F = W @ X
    prev = np.inf
    for S in range(1, N // 2 + 1):
        Xhat = W.T @ encode_batch(W, X, S)
        d = distortion(X, Xhat)
        # ||x - W^T sign(H_S(Wx))||^2 = ||x||^2 - 2 * sum of the S largest |f| + S
        top = -np.sort(-np.abs(F), axis=0)[:S].sum(axis=0)
        oracle = np.mean(np.sqrt(np.maximum((X**2).sum(0) - 2 * top + S, 0))) / N
        assert d == pytest.approx(oracle, rel=1e-9)
        assert d <= prev + 1e-15
        prev = d


def _brute_force_sparsity(W, x, z, sigma_z_sq, S_x):
    """Evaluate the sparsity rule at every candidate S, then follow the orbit from S_x."""
    L, N = W.shape
    fx, fy = W @ x, W @ (x + z)
    a = np.zeros(L)
    top = np.lexsort((np.arange(L), -np.abs(fx)))[:S_x]
    a[top] = np.sign(fx[top])
    order = np.lexsort((np.arange(L), -np.abs(fy)))
    table = {}
    for S in range(1, L + 1):
        b = np.zeros(L)
        b[order[:S]] = np.sign(fy[order[:S]])
        table[S] = min(max(math.floor(N * sigma_z_sq + 2 * int(a @ b) - S_x), 1), L)
    seen, s = [], S_x
    while s not in seen:
        seen.append(s)
        s = table[s]
    return s


def test_required_sparsity_fixture():
    W = key_W(128, 7)
    x = np.random.default_rng(7).standard_normal(128)
    noise = NoiseModel(0.15)
    z = noise.sample(128, np.random.default_rng(7))
    r = required_sparsity(W, x, noise, 10, seed=7)
    assert r.converged
    assert r.value == _brute_force_sparsity(W, x, z, 0.15, 10) == 29


def test_required_sparsity_zero_noise(rng):
    W = key_W(64, 2)
    for _ in range(5):
        r = required_sparsity(W, rng.standard_normal(64), NoiseModel(0.0), 9)
        assert r.value == 9 and r.converged and r.history == (9,)


def test_required_sparsity_monotone_in_noise(rng):
    N = 256
    W = key_W(N, 9)
    X = rng.standard_normal((N, 20))
    Z = rng.standard_normal((N, 20))
    curve = []
    for v in np.linspace(0, 0.6, 7):
        curve.append(np.mean([required_sparsity(W, X[:, m], NoiseModel(v), 10, z=np.sqrt(v) * Z[:, m]).value
                              for m in range(20)]))
    assert np.all(np.diff(curve) >= 0)


def test_required_sparsity_bad_rounds():
    with pytest.raises(ValueError):
        required_sparsity(np.eye(4), np.ones(4), NoiseModel(0.1), 1, max_rounds=0)


def test_distance_bound_examples():
    assert ternary_distance_bounds(10, 10) == (0, 40)
    assert ternary_distance_bounds(10, 4) == (6, 22)
    assert ternary_distance_bounds(0, 5) == (5, 5)


def _codes(L, S):
    for pos in itertools.combinations(range(L), S):
        for signs in itertools.product((-1, 1), repeat=S):
            v = np.zeros(L, dtype=np.int64)
            v[list(pos)] = signs
            yield v


@pytest.mark.parametrize("L,S_x,S_y", [(5, 2, 2), (5, 1, 3), (6, 3, 2), (4, 0, 2)])
def test_bounds_exhaustive_small(L, S_x, S_y):
    lo, hi = ternary_distance_bounds(S_x, S_y)
    m = min(S_x, S_y)
    A = np.array(list(_codes(L, S_x)))
    B = np.array(list(_codes(L, S_y)))
    G = A @ B.T
    D = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2 * G
    assert D.min() >= lo and D.max() <= hi
    assert np.abs(G).max() <= m


def test_rank_correlation_within_noise_radius():
    N, sigma = 128, 0.15
    rng = np.random.default_rng(0)
    W = key_W(N, 3)
    X = rng.standard_normal((N, 400))
    Y = X + np.sqrt(sigma * rng.uniform(0, 1, 400)) * rng.standard_normal((N, 400))
    S_x = 48
    S_y = int(np.median([required_sparsity(W, X[:, m], NoiseModel(sigma), S_x, seed=m).value for m in range(40)]))
    dx = np.linalg.norm(X - Y, axis=0)
    keep = dx**2 <= N * sigma
    da = np.linalg.norm(encode_batch(W, X, S_x) - encode_batch(W, Y, S_y), axis=0)
    rho = spearmanr(dx[keep], da[keep])[0]
    assert rho > 0.8, f"rank correlation {rho:.3f} at S_x={S_x}, S_y={S_y}"


def test_binary_baseline_examples():
    np.testing.assert_array_equal(binary_embed_baseline(np.eye(2), np.array([2.0, -3.0]), np.zeros(2)), [1, -1])
    np.testing.assert_array_equal(binary_embed_baseline(np.eye(2), np.zeros(2), np.zeros(2)), [1, 1])
    with pytest.raises(ValueError):
        binary_embed_baseline(np.eye(2), np.zeros(2), np.zeros(3))


def test_binary_baseline_distance_correlation(rng):
    N = 64
    R = rng.standard_normal((256, N))
    dither = rng.uniform(-1, 1, 256)
    X = rng.standard_normal((N, 300))
    for r in (0.5, 2.0, 5.0, 10.0, 20.0):
        U = rng.standard_normal((N, 300))
        U /= np.linalg.norm(U, axis=0)
        radius = r * rng.uniform(0.5, 1.5, 300)
        Y = X + U * radius
        h = (binary_embed_baseline(R, X, dither) != binary_embed_baseline(R, Y, dither)).sum(axis=0)
        assert pearsonr(radius, h)[0] > 0


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from([-1, 0, 1]), min_size=1, max_size=70))
def test_pack_roundtrip(vals):
    c = TernaryCode(np.array(vals, dtype=np.int8))
    data = pack_code(c)
    assert len(data) == 2 * ((c.L + 7) // 8)
    assert unpack_code(data, c.L) == c


def test_unpack_rejects_conflicting_bits():
    with pytest.raises(ValueError):
        unpack_code(b"\x01\x01", 3)
    with pytest.raises(ValueError):
        unpack_code(b"\x01", 3)
