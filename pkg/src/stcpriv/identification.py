"""Private gamma-NN decoding and the public position-disclosure protocol.

Private mode: the client sends its full ternary probe and the server returns
every item within squared distance ``gamma * L``.

Public mode: the client discloses only a position set (true support plus
decoys), the server returns the +1/-1 posting lists for those positions, and
the client drops the decoy lists and aggregates sign votes locally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .coding import TernaryCode, ternary_encode
from .storage import PublicDatabase

__all__ = [
    "QueryOverflow",
    "QueryRequest",
    "PositionLists",
    "CandidateList",
    "CommunicationCost",
    "code_matrix",
    "sq_distances",
    "private_decode",
    "build_query",
    "server_lookup",
    "aggregate_scores",
    "default_score_threshold",
    "default_gamma",
    "communication_cost",
]


class QueryOverflow(ValueError):
    pass


@dataclass(frozen=True)
class QueryRequest:
    """Client-side query state. Only ``positions`` ever leaves the client."""

    positions: np.ndarray
    true_positions: np.ndarray
    true_signs: np.ndarray
    decoys: np.ndarray

    @property
    def S_y(self) -> int:
        return int(self.true_positions.size)

    @property
    def S_nq(self) -> int:
        return int(self.decoys.size)

    @property
    def signs(self) -> dict[int, int]:
        return {int(l): int(s) for l, s in zip(self.true_positions, self.true_signs)}


@dataclass
class PositionLists:
    lists: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.lists)

    def plus(self, l: int) -> np.ndarray:
        return self.lists[l][0]

    def minus(self, l: int) -> np.ndarray:
        return self.lists[l][1]

    def volume(self) -> int:
        """Total number of ids across all returned lists."""
        return sum(len(p) + len(m) for p, m in self.lists.values())


@dataclass
class CandidateList:
    entries: list[tuple[int, float]]
    gamma: float | None = None
    decision: str = "H0"
    matched: int | None = None

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


class CommunicationCost(NamedTuple):
    bits: float
    megabytes: float


def code_matrix(db) -> np.ndarray:
    """Coerce a database, code list or matrix into an ``L x M`` int8 matrix."""
    if isinstance(db, PublicDatabase):
        return db.codes()
    if isinstance(db, np.ndarray):
        return db.astype(np.int8) if db.ndim == 2 else db.astype(np.int8)[:, None]
    cols = [c.values if isinstance(c, TernaryCode) else np.asarray(c) for c in db]
    return np.stack(cols, axis=1).astype(np.int8)


def sq_distances(b: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from ternary ``b`` to every column of ``P``."""
    b = np.asarray(b, dtype=np.int64)
    P64 = P.astype(np.int64)
    return (P64 * P64).sum(axis=0) + b @ b - 2 * (b @ P64)


def default_gamma(S_x: int, S_y: int, L: int) -> float:
    """Radius at the midpoint of the ternary distance bounds (``S_x + S_y``), expressed as gamma."""
    return (S_x + S_y) / L


def private_decode(b, db, gamma: float) -> CandidateList:
    """All items with ``||a(m) - b||^2 <= gamma * L``, ascending by distance then id."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    bv = b.values if isinstance(b, TernaryCode) else np.asarray(b)
    P = code_matrix(db)
    if P.shape[1] == 0:
        return CandidateList([], gamma, "H0", None)
    if P.shape[0] != bv.shape[0]:
        raise ValueError(f"code length {bv.shape[0]} does not match database length {P.shape[0]}")
    d = sq_distances(bv, P)
    radius = gamma * P.shape[0]
    hits = np.flatnonzero(d <= radius + 1e-9)
    order = hits[np.lexsort((hits, d[hits]))]
    entries = [(int(m), float(d[m])) for m in order]
    if entries:
        return CandidateList(entries, gamma, "H1", entries[0][0])
    return CandidateList([], gamma, "H0", None)


def build_query(y: np.ndarray, W, S_y: int, S_nq: int, rng_seed: int | None = None) -> QueryRequest:
    """Encode ``y`` at sparsity ``S_y`` and hide its support among ``S_nq`` decoy positions."""
    b = ternary_encode(W, y, S_y)
    L = b.L
    if S_y + S_nq > L:
        raise QueryOverflow(f"query overflow: S_y + S_nq = {S_y + S_nq} exceeds L = {L}")
    true_pos = b.support
    rng = np.random.default_rng(rng_seed)
    complement = np.setdiff1d(np.arange(L), true_pos)
    decoys = np.sort(rng.choice(complement, size=S_nq, replace=False)) if S_nq else complement[:0]
    positions = np.union1d(true_pos, decoys)
    return QueryRequest(positions, true_pos, b.values[true_pos].astype(np.int8), decoys)


def server_lookup(I, db: PublicDatabase) -> PositionLists:
    """Posting lists for positions ``I``; the only input the server ever sees."""
    out = PositionLists()
    for l in np.asarray(I, dtype=np.int64).ravel():
        if not 0 <= l < db.L:
            raise IndexError(f"position {l} out of range [0, {db.L})")
        out.lists[int(l)] = db.lists(int(l))
    return out


def default_score_threshold(S_y: int) -> int:
    return math.ceil(S_y / 2)


def aggregate_scores(lists: PositionLists, req: QueryRequest, score_threshold: int | None = None) -> CandidateList:
    """Sum sign-agreement votes over the true positions; decoy lists are discarded.

    ``score(m) = sum_l sign_l * (+1 if m in L+(l), -1 if m in L-(l))``.
    """
    missing = [int(l) for l in req.positions if int(l) not in lists.lists]
    if missing:
        raise ValueError(f"lists missing for requested positions {missing}")
    ids, votes = [], []
    for l, s in zip(req.true_positions, req.true_signs):
        p, m = lists.lists[int(l)]
        ids += [p, m]
        votes += [np.full(p.size, int(s)), np.full(m.size, -int(s))]
    if ids:
        all_ids = np.concatenate(ids).astype(np.int64)
        all_votes = np.concatenate(votes)
    else:
        all_ids = np.zeros(0, dtype=np.int64)
        all_votes = np.zeros(0, dtype=np.int64)
    if score_threshold is None:
        score_threshold = default_score_threshold(req.S_y)
    if all_ids.size == 0:
        return CandidateList([], None, "H0", None)
    uniq, inv = np.unique(all_ids, return_inverse=True)
    scores = np.bincount(inv, weights=all_votes, minlength=uniq.size).astype(np.int64)
    order = np.lexsort((uniq, -scores))
    entries = [(int(uniq[i]), float(scores[i])) for i in order]
    top_id, top = entries[0]
    if top >= score_threshold:
        return CandidateList(entries, None, "H1", top_id)
    return CandidateList(entries, None, "H0", None)


def communication_cost(M: int, density: float, positions: int) -> CommunicationCost:
    """Returned list volume ``M * density * positions`` at one bit per listed id."""
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    bits = float(M) * density * positions
    return CommunicationCost(bits, bits / 8.0 / 1e6)
