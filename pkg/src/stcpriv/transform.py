"""Key-seeded sparsifying transform learning.

The transform ``W`` (L x N, orthonormal rows, L <= N) is learned by alternating
a hard-threshold sparse coding step with an orthogonal Procrustes update,
starting from the left singular vectors of a secret key matrix.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "DegenerateKeyError",
    "DegenerateUpdateError",
    "KeyMatrix",
    "SparsifyingTransform",
    "canonical_svd",
    "hard_threshold_columns",
    "init_transform",
    "sparse_code_step",
    "transform_update",
    "objective",
    "learn_transform",
    "save_transform",
    "load_transform",
]

_MAGIC = b"STCW"
_VERSION = 1
_RANK_RTOL = 1e-10


class DegenerateKeyError(ValueError):
    pass


class DegenerateUpdateError(ValueError):
    pass


def canonical_svd(M: np.ndarray, full_matrices: bool = False):
    """SVD with each left singular vector flipped so its largest-magnitude entry is positive.

    The matching right singular vector is flipped too, so ``U @ diag(s) @ Vt`` is unchanged.
    """
    U, s, Vt = np.linalg.svd(M, full_matrices=full_matrices)
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    k = min(len(signs), Vt.shape[0])
    Vt = Vt.copy()
    Vt[:k] *= signs[:k, None]
    return U, s, Vt


@dataclass(frozen=True)
class KeyMatrix:
    """Shared secret N x N matrix used to seed transform learning."""

    entries: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.entries, dtype=np.float64)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise DegenerateKeyError(f"degenerate key: expected a square matrix, got shape {K.shape}")
        s = np.linalg.svd(K, compute_uv=False)
        if s[0] == 0 or s[-1] <= _RANK_RTOL * s[0]:
            raise DegenerateKeyError("degenerate key: matrix is rank deficient")
        object.__setattr__(self, "entries", K)

    @classmethod
    def random(cls, n: int, seed: int | None = None) -> "KeyMatrix":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n, n)))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def key_id(self) -> bytes:
        """16-byte digest identifying the key without revealing it."""
        return hashlib.blake2b(np.ascontiguousarray(self.entries).tobytes(), digest_size=16).digest()


@dataclass
class SparsifyingTransform:
    W: np.ndarray
    source_key_id: bytes = b"\x00" * 16
    objective_trace: list[float] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.W.shape[1]

    def orthogonality_error(self) -> float:
        """Frobenius norm of ``W W^T - I``."""
        return float(np.linalg.norm(self.W @ self.W.T - np.eye(self.L)))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.W @ X


def hard_threshold_columns(F: np.ndarray, S: int) -> np.ndarray:
    """Keep the ``S`` largest-magnitude entries of every column (ties go to the lower index)."""
    F = np.asarray(F, dtype=np.float64)
    squeeze = F.ndim == 1
    if squeeze:
        F = F[:, None]
    L = F.shape[0]
    if not 0 <= S <= L:
        raise ValueError(f"sparsity {S} outside [0, {L}]")
    out = np.zeros_like(F)
    if S == L:
        out[:] = F
    elif S > 0:
        # stable sort on -|f| keeps the lower index first among equal magnitudes
        idx = np.argsort(-np.abs(F), axis=0, kind="stable")[:S]
        np.put_along_axis(out, idx, np.take_along_axis(F, idx, axis=0), axis=0)
    return out[:, 0] if squeeze else out


def init_transform(key: KeyMatrix, L: int | None = None) -> SparsifyingTransform:
    """Initial transform from the key: the first ``L`` rows of ``U_K``.

    For the square case (``L == N``, the default) this is ``U_K`` itself.
    """
    U, _, _ = canonical_svd(key.entries, full_matrices=True)
    L = key.n if L is None else L
    if not 1 <= L <= key.n:
        raise ValueError(f"code length L={L} must lie in [1, {key.n}]")
    return SparsifyingTransform(np.ascontiguousarray(U[:L]), key.key_id, [])


def sparse_code_step(W: SparsifyingTransform | np.ndarray, X: np.ndarray, S_x: int) -> np.ndarray:
    W = W.W if isinstance(W, SparsifyingTransform) else np.asarray(W)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if W.shape[1] != X.shape[0]:
        raise ValueError(f"dimension mismatch: W is {W.shape}, X is {X.shape}")
    return hard_threshold_columns(W @ X, S_x)


def transform_update(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Orthogonal Procrustes: argmin over W with orthonormal rows of ||W X - A||_F.

    Solved by ``W = U V^T`` from the thin SVD of ``A X^T``.
    """
    X = np.asarray(X, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if A.shape[1] != X.shape[1] or A.shape[0] > X.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, X is {X.shape}")
    C = A @ X.T
    if not np.any(C):
        raise DegenerateUpdateError("degenerate update: A X^T is identically zero")
    U, _, Vt = np.linalg.svd(C, full_matrices=False)
    return U @ Vt


def objective(W: np.ndarray, X: np.ndarray, A: np.ndarray) -> float:
    return float(np.linalg.norm(W @ X - A) ** 2)


def learn_transform(
    X: np.ndarray,
    S_x: int,
    key: KeyMatrix,
    max_iters: int = 50,
    rel_tol: float = 1e-6,
    L: int | None = None,
) -> SparsifyingTransform:
    """Alternate sparse coding and Procrustes updates from the key-seeded start.

    ``objective_trace[t]`` is the post-threshold residual ``||W X - H(W X)||_F^2``
    for the t-th iterate, so ``max_iters`` updates give ``max_iters + 1`` entries.
    Stops early once the relative decrease drops below ``rel_tol``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != key.n:
        raise ValueError(f"dimension mismatch: key is {key.n}x{key.n}, X has {X.shape[0]} rows")
    W = init_transform(key, L).W
    A = sparse_code_step(W, X, S_x)
    trace = [objective(W, X, A)]
    for _ in range(max_iters):
        W = transform_update(X, A)
        A = sparse_code_step(W, X, S_x)
        trace.append(objective(W, X, A))
        prev, cur = trace[-2], trace[-1]
        if prev == 0 or (prev - cur) / prev < rel_tol:
            break
    return SparsifyingTransform(W, key.key_id, trace)


def save_transform(path: str | Path, transform: SparsifyingTransform) -> None:
    """Write ``magic | u16 version | u32 L | u32 N | 16-byte key id | f64 row-major W``."""
    L, N = transform.shape
    key_id = bytes(transform.source_key_id).ljust(16, b"\x00")[:16]
    header = _MAGIC + struct.pack("<HII", _VERSION, L, N) + key_id
    body = np.ascontiguousarray(transform.W, dtype="<f8").tobytes()
    Path(path).write_bytes(header + body)


def load_transform(path: str | Path) -> SparsifyingTransform:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a transform file")
    version, L, N = struct.unpack_from("<HII", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported transform version {version}")
    key_id = data[14:30]
    expected = 30 + 8 * L * N
    if len(data) != expected:
        raise ValueError(f"{path}: truncated transform ({len(data)} of {expected} bytes)")
    W = np.frombuffer(data, dtype="<f8", offset=30).reshape(L, N).astype(np.float64)
    return SparsifyingTransform(W, key_id, [])
