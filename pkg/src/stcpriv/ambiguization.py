"""Selective ±1 noise on the zero positions of a ternary code."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coding import TernaryCode

__all__ = [
    "AmbiguizationOverflow",
    "AmbiguizedCode",
    "AmbiguityBudget",
    "ambiguize",
    "ambiguize_batch",
    "ambiguity_entropy",
    "column_rng",
]


class AmbiguizationOverflow(ValueError):
    pass


@dataclass(frozen=True)
class AmbiguizedCode:
    """Public code plus the owner-side record of which positions are genuine."""

    public_values: np.ndarray
    true_support: np.ndarray
    S_x: int
    S_ns: int

    @property
    def L(self) -> int:
        return self.public_values.shape[0]

    @property
    def public(self) -> TernaryCode:
        return TernaryCode(self.public_values)

    @property
    def noise_positions(self) -> np.ndarray:
        return np.setdiff1d(np.flatnonzero(self.public_values), self.true_support)

    def owner_code(self) -> TernaryCode:
        """The unambiguized code, recoverable only with ``true_support``."""
        v = np.zeros_like(self.public_values)
        v[self.true_support] = self.public_values[self.true_support]
        return TernaryCode(v)


@dataclass(frozen=True)
class AmbiguityBudget:
    bits: float


def column_rng(seed: int | None, column: int) -> np.random.Generator:
    """Independent per-column stream, so batch output does not depend on scheduling."""
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(np.random.SeedSequence([int(seed), column]))


def _noise_into(values: np.ndarray, S_ns: int, rng: np.random.Generator) -> None:
    zeros = np.flatnonzero(values == 0)
    if S_ns > zeros.size:
        raise AmbiguizationOverflow(
            f"ambiguization overflow: S_ns={S_ns} exceeds the {zeros.size} zero positions"
        )
    if S_ns == 0:
        return
    pos = rng.choice(zeros, size=S_ns, replace=False)
    values[pos] = rng.choice(np.array([-1, 1], dtype=np.int8), size=S_ns)


def ambiguize(a: TernaryCode, S_ns: int, rng_seed: int | None = None) -> AmbiguizedCode:
    """Fill ``S_ns`` uniformly chosen zero positions of ``a`` with equiprobable ±1."""
    if S_ns < 0:
        raise ValueError("S_ns must be >= 0")
    values = a.values.copy()
    _noise_into(values, S_ns, np.random.default_rng(rng_seed))
    return AmbiguizedCode(values, a.support, a.S, S_ns)


def ambiguize_batch(A: np.ndarray, S_ns: int, seed: int | None = None) -> np.ndarray:
    """Ambiguize every column of an ``L x M`` code matrix; column ``m`` uses ``column_rng(seed, m)``."""
    if S_ns < 0:
        raise ValueError("S_ns must be >= 0")
    P = np.array(A, dtype=np.int8, copy=True)
    for m in range(P.shape[1]):
        col = P[:, m]
        _noise_into(col, S_ns, column_rng(seed, m))
        P[:, m] = col
    return P


def ambiguity_entropy(S_x: int, S_ns: int) -> AmbiguityBudget:
    """``log2 C(S_x + S_ns, S_x)`` from the exact integer binomial."""
    if S_x < 0 or S_ns < 0:
        raise ValueError("sparsities must be >= 0")
    c = math.comb(S_x + S_ns, S_x)
    return AmbiguityBudget(0.0 if c == 1 else math.log2(c))
