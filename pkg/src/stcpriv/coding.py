"""Sparse ternary encoding, reconstruction and the distance machinery around it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .transform import SparsifyingTransform, hard_threshold_columns

__all__ = [
    "TernaryCode",
    "NoiseModel",
    "DistanceBound",
    "RequiredSparsity",
    "hard_threshold",
    "ternary_encode",
    "encode_batch",
    "approximation_error",
    "reconstruct",
    "distortion",
    "mse",
    "required_sparsity",
    "ternary_distance_bounds",
    "binary_embed_baseline",
    "pack_code",
    "unpack_code",
]


def _matrix(W) -> np.ndarray:
    return W.W if isinstance(W, SparsifyingTransform) else np.asarray(W, dtype=np.float64)


@dataclass(frozen=True)
class TernaryCode:
    """Length-L vector over {-1, 0, +1}."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 1:
            raise ValueError("ternary code must be one-dimensional")
        if not np.isin(v, (-1, 0, 1)).all():
            raise ValueError("ternary code entries must lie in {-1, 0, +1}")
        object.__setattr__(self, "values", v.astype(np.int8))

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values)

    @property
    def S(self) -> int:
        return int(np.count_nonzero(self.values))

    def inner(self, other: "TernaryCode") -> int:
        return int(np.dot(self.values.astype(np.int64), other.values.astype(np.int64)))

    def sq_distance(self, other: "TernaryCode") -> int:
        d = self.values.astype(np.int64) - other.values.astype(np.int64)
        return int(np.dot(d, d))

    def __eq__(self, other):
        return isinstance(other, TernaryCode) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True)
class NoiseModel:
    sigma_z_sq: float
    sigma_x_sq: float = 1.0

    def __post_init__(self):
        if self.sigma_z_sq < 0:
            raise ValueError("sigma_z_sq must be >= 0")
        if self.sigma_x_sq <= 0:
            raise ValueError("sigma_x_sq must be > 0")

    @property
    def ratio(self) -> float:
        return self.sigma_z_sq / self.sigma_x_sq

    def sample(self, shape, rng: np.random.Generator) -> np.ndarray:
        return np.sqrt(self.sigma_z_sq) * rng.standard_normal(shape)


class DistanceBound(NamedTuple):
    lower: int
    upper: int

    def contains(self, d: float) -> bool:
        return self.lower <= d <= self.upper


class RequiredSparsity(NamedTuple):
    value: int
    converged: bool
    history: tuple[int, ...]


def hard_threshold(f: np.ndarray, S: int) -> np.ndarray:
    """Keep the ``S`` largest magnitudes of ``f``; ties resolved toward the lower index."""
    return hard_threshold_columns(np.asarray(f, dtype=np.float64), S)


def ternary_encode(W, x: np.ndarray, S: int) -> TernaryCode:
    f = _matrix(W) @ np.asarray(x, dtype=np.float64)
    return TernaryCode(np.sign(hard_threshold(f, S)).astype(np.int8))


def encode_batch(W, X: np.ndarray, S: int) -> np.ndarray:
    """Encode every column of ``X``; returns an ``L x M`` int8 matrix."""
    F = _matrix(W) @ np.asarray(X, dtype=np.float64)
    return np.sign(hard_threshold_columns(F, S)).astype(np.int8)


def approximation_error(W, x: np.ndarray, S: int) -> np.ndarray:
    """Transform-domain residual ``W x - T(W x)`` of the ternary map (diagnostic only)."""
    f = _matrix(W) @ np.asarray(x, dtype=np.float64)
    return f - np.sign(hard_threshold(f, S))


def reconstruct(W, a) -> np.ndarray:
    """``W^T a``; the pseudo-inverse of an orthonormal-row transform is its transpose."""
    values = a.values if isinstance(a, TernaryCode) else np.asarray(a)
    return _matrix(W).T @ values.astype(np.float64)


def distortion(X: np.ndarray, Xhat: np.ndarray) -> float:
    """Mean over columns of ``||x - xhat||_2 / N``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64).T).T
    Xhat = np.atleast_2d(np.asarray(Xhat, dtype=np.float64).T).T
    if X.shape != Xhat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {Xhat.shape}")
    N = X.shape[0]
    return float(np.mean(np.linalg.norm(X - Xhat, axis=0)) / N)


def mse(X: np.ndarray, Xhat: np.ndarray) -> float:
    """Mean squared error per component."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {Xhat.shape}")
    return float(np.mean((X - Xhat) ** 2))


def _sparsity_rule(N: int, sigma_z_sq: float, inner: int, S_x: int, L: int) -> int:
    s = int(np.floor(N * sigma_z_sq + 2 * inner - S_x))
    return min(max(s, 1), L)


def required_sparsity(
    W,
    x: np.ndarray,
    noise: NoiseModel,
    S_x: int,
    max_rounds: int = 50,
    seed: int | None = None,
    z: np.ndarray | None = None,
) -> RequiredSparsity:
    """Fixed point of ``S_y = floor(N sigma_z^2 + 2 <a, b> - S_x)`` for one noisy realization.

    ``b`` is the code of ``y = x + z`` at the current ``S_y``; iteration starts at
    ``S_y = S_x`` and the result is clamped to ``[1, L]``. A single noise draw
    (from ``seed``, or ``z`` if given) is reused for every round. If the map
    cycles or ``max_rounds`` runs out, the last value is returned with
    ``converged=False``.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    Wm = _matrix(W)
    L, N = Wm.shape
    x = np.asarray(x, dtype=np.float64)
    if z is None:
        z = noise.sample(N, np.random.default_rng(seed))
    a = ternary_encode(Wm, x, S_x)
    f_y = Wm @ (x + z)

    s = S_x
    history = [s]
    for _ in range(max_rounds):
        b = np.sign(hard_threshold(f_y, s))
        nxt = _sparsity_rule(N, noise.sigma_z_sq, int(a.values @ b), S_x, L)
        if nxt == s:
            return RequiredSparsity(s, True, tuple(history))
        if nxt in history:
            history.append(nxt)
            return RequiredSparsity(nxt, False, tuple(history))
        s = nxt
        history.append(s)
    return RequiredSparsity(s, False, tuple(history))


def ternary_distance_bounds(S_x: int, S_y: int) -> DistanceBound:
    """Range of ``||a - b||^2`` for ternary codes with ``S_x`` and ``S_y`` nonzeros."""
    m = min(S_x, S_y)
    return DistanceBound(S_x + S_y - 2 * m, S_x + S_y + 2 * m)


def binary_embed_baseline(R: np.ndarray, x: np.ndarray, dither: np.ndarray) -> np.ndarray:
    """Dense dithered sign embedding ``sign(R x + dither)`` with ``sign(0) = +1``."""
    R = np.asarray(R, dtype=np.float64)
    dither = np.asarray(dither, dtype=np.float64)
    if dither.shape[0] != R.shape[0]:
        raise ValueError("dither length must equal the output length")
    f = R @ np.asarray(x, dtype=np.float64) + (dither if np.ndim(x) == 1 else dither[:, None])
    return np.where(f >= 0, 1, -1).astype(np.int8)


def pack_code(code) -> bytes:
    """Serialize as positive-mask bitmap followed by negative-mask bitmap (LSB-first)."""
    v = code.values if isinstance(code, TernaryCode) else np.asarray(code)
    return np.packbits(v > 0, bitorder="little").tobytes() + np.packbits(v < 0, bitorder="little").tobytes()


def unpack_code(data: bytes, L: int) -> TernaryCode:
    nbytes = (L + 7) // 8
    if len(data) != 2 * nbytes:
        raise ValueError(f"expected {2 * nbytes} bytes for L={L}, got {len(data)}")
    buf = np.frombuffer(data, dtype=np.uint8)
    pos = np.unpackbits(buf[:nbytes], bitorder="little")[:L].astype(bool)
    neg = np.unpackbits(buf[nbytes:], bitorder="little")[:L].astype(bool)
    if np.any(pos & neg):
        raise ValueError("malformed code: position marked both positive and negative")
    return TernaryCode(pos.astype(np.int8) - neg.astype(np.int8))
