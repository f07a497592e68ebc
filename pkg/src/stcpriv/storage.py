"""Position-major inverted index over public ternary codes, and its file format.

File layout (all little-endian)::

    b"STCDB1" | u32 L | u32 M | f64 density
    then for each position l = 0..L-1:
        u32 n_plus  | n_plus  x u32 ids
        u32 n_minus | n_minus x u32 ids
"""
from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "DimensionMismatch",
    "PublicDatabase",
    "enroll",
    "save_db",
    "load_db",
]

_MAGIC = b"STCDB1"


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PublicDatabase:
    """What the server stores: per position, sorted ids holding +1 and -1."""

    L: int
    M: int
    plus: tuple[np.ndarray, ...]
    minus: tuple[np.ndarray, ...]
    density: float = 0.0
    created: float | None = field(default=None, compare=False)

    @classmethod
    def empty(cls, L: int) -> "PublicDatabase":
        e = tuple(np.zeros(0, dtype=np.uint32) for _ in range(L))
        return cls(L, 0, e, e, 0.0, time.time())

    @classmethod
    def from_matrix(cls, P: np.ndarray, first_id: int = 0) -> "PublicDatabase":
        P = np.asarray(P)
        L, M = P.shape
        plus = tuple((np.flatnonzero(P[l] > 0) + first_id).astype(np.uint32) for l in range(L))
        minus = tuple((np.flatnonzero(P[l] < 0) + first_id).astype(np.uint32) for l in range(L))
        density = float(np.count_nonzero(P)) / (L * M) if M else 0.0
        return cls(L, M, plus, minus, density, time.time())

    def extend(self, P: np.ndarray) -> "PublicDatabase":
        """New database with the columns of ``P`` appended as ids ``M, M+1, ...``."""
        P = np.asarray(P)
        if P.ndim != 2 or P.shape[0] != self.L:
            raise DimensionMismatch(f"dimension mismatch: expected codes of length {self.L}")
        if self.M == 0:
            return PublicDatabase.from_matrix(P)
        add = PublicDatabase.from_matrix(P, first_id=self.M)
        M = self.M + P.shape[1]
        nnz = self.density * self.L * self.M + add.density * self.L * P.shape[1]
        return PublicDatabase(
            self.L,
            M,
            tuple(np.concatenate([a, b]) for a, b in zip(self.plus, add.plus)),
            tuple(np.concatenate([a, b]) for a, b in zip(self.minus, add.minus)),
            float(nnz / (self.L * M)),
            time.time(),
        )

    def codes(self) -> np.ndarray:
        """Rebuild the ``L x M`` int8 public code matrix from the posting lists."""
        P = np.zeros((self.L, self.M), dtype=np.int8)
        for l in range(self.L):
            P[l, self.plus[l]] = 1
            P[l, self.minus[l]] = -1
        return P

    def lists(self, l: int) -> tuple[np.ndarray, np.ndarray]:
        return self.plus[l], self.minus[l]

    def list_lengths(self) -> np.ndarray:
        return np.array([len(p) + len(m) for p, m in zip(self.plus, self.minus)])

    def check(self) -> None:
        """Raise if any structural invariant is violated."""
        for l in range(self.L):
            p, m = self.plus[l], self.minus[l]
            for ids in (p, m):
                if ids.size and (ids.max() >= self.M or np.any(np.diff(ids.astype(np.int64)) <= 0)):
                    raise ValueError(f"position {l}: ids out of range or not strictly increasing")
            if np.intersect1d(p, m).size:
                raise ValueError(f"position {l}: id listed under both signs")

    def to_bytes(self) -> bytes:
        parts = [_MAGIC, struct.pack("<IId", self.L, self.M, self.density)]
        for p, m in zip(self.plus, self.minus):
            for ids in (p, m):
                parts.append(struct.pack("<I", len(ids)))
                parts.append(np.ascontiguousarray(ids, dtype="<u4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicDatabase":
        if data[:6] != _MAGIC:
            raise ValueError("not a public database file")
        L, M, density = struct.unpack_from("<IId", data, 6)
        off = 6 + 16
        plus, minus = [], []
        for _ in range(L):
            for out in (plus, minus):
                (n,) = struct.unpack_from("<I", data, off)
                off += 4
                out.append(np.frombuffer(data, dtype="<u4", count=n, offset=off).astype(np.uint32))
                off += 4 * n
        if off != len(data):
            raise ValueError("trailing bytes in database file")
        return cls(L, M, tuple(plus), tuple(minus), density, None)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def enroll(codes: Iterable[np.ndarray] | np.ndarray, L: int | None = None) -> PublicDatabase:
    """Build the index from public codes (a list of vectors or an ``L x M`` matrix)."""
    if isinstance(codes, np.ndarray) and codes.ndim == 2:
        return PublicDatabase.from_matrix(codes)
    codes = [np.asarray(c) for c in codes]
    if not codes:
        if L is None:
            raise ValueError("L is required to enroll an empty code list")
        return PublicDatabase.empty(L)
    lengths = {c.shape for c in codes}
    if len(lengths) != 1 or codes[0].ndim != 1:
        raise DimensionMismatch("dimension mismatch: codes have differing lengths")
    return PublicDatabase.from_matrix(np.stack(codes, axis=1))


def save_db(path: str | Path, db: PublicDatabase) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(db.to_bytes())
    tmp.replace(path)


def load_db(path: str | Path) -> PublicDatabase:
    return PublicDatabase.from_bytes(Path(path).read_bytes())
