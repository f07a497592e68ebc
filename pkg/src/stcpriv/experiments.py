"""Experiment harness: each ``run_*`` function writes a deterministic CSV.

Every CSV starts with a header row; the first column, ``schema``, carries a
versioned table name (``fig2/1`` and so on) so downstream tooling can detect
layout changes. Rows are emitted in sorted grid order.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ambiguization import ambiguize_batch
from .coding import NoiseModel, encode_batch, required_sparsity
from .data import gen_clustered, gen_iid
from .privacy import distance_pdfs, kld_leak, kmeans_attack, ratio_table
from .transform import KeyMatrix, init_transform, learn_transform

__all__ = [
    "ExperimentConfig",
    "write_csv",
    "run_fig2",
    "run_fig4",
    "run_fig5_table",
    "run_table1_fig7",
    "table1_settings",
    "fig7_settings",
    "clustered_setup",
]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    N: int = 512
    L: int = 256
    M: int = 1000
    k: int = 4
    S_x: int = 10
    S_y: int | None = None
    S_ns: int = 0
    S_nq: int = 0
    sigma_x_sq: float = 1.0
    sigma_z_sq: float = 0.15
    cluster_variance: float = 0.1
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        S_y = self.S_x if self.S_y is None else self.S_y
        if min(self.N, self.L, self.M, self.k) < 1:
            raise ValueError("N, L, M and k must be positive")
        if self.L > self.N:
            raise ValueError(f"L = {self.L} exceeds N = {self.N}")
        if self.M % self.k:
            raise ValueError(f"M = {self.M} is not a multiple of k = {self.k}")
        if not 1 <= self.S_x <= self.L or not 1 <= S_y <= self.L:
            raise ValueError("sparsity levels must lie in [1, L]")
        if self.S_ns > self.L - self.S_x or self.S_nq > self.L - S_y:
            raise ValueError("noise counts exceed the free positions of the code")
        if self.S_ns < 0 or self.S_nq < 0:
            raise ValueError("noise counts must be non-negative")
        if self.sigma_x_sq <= 0 or self.sigma_z_sq < 0 or self.cluster_variance < 0:
            raise ValueError("sigma_x_sq must be > 0; other variances >= 0")

    @property
    def sparsity_y(self) -> int:
        return self.S_x if self.S_y is None else self.S_y

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.sigma_z_sq, self.sigma_x_sq)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        """Read ``key = value`` lines; a section header is optional."""
        text = Path(path).read_text()
        if not text.lstrip().startswith("["):
            text = "[stc]\n" + text
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        values = {}
        for section in cp.sections():
            values.update(cp[section])
        return cls.from_mapping({**values, **overrides})

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for name, raw in values.items():
            if raw is None:
                continue
            if name not in kinds:
                raise ValueError(f"unknown config key {name!r}")
            kind = str(kinds[name])
            if isinstance(raw, str):
                raw = raw.strip().strip('"').strip("'")
                if raw.lower() in ("", "none"):
                    kw[name] = None
                    continue
            if kind.startswith("int"):
                kw[name] = int(raw)
            elif kind.startswith("float"):
                kw[name] = float(raw)
            else:
                kw[name] = str(raw)
        return cls(**kw)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(rows: Sequence[dict], name: str, path: str | Path | None = None) -> str:
    """Serialize ``rows`` (all sharing the same keys) and optionally write them to ``path``."""
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema", *cols])
    tag = f"{name}/{SCHEMA_VERSION}"
    for r in rows:
        w.writerow([tag, *(_fmt(r[c]) for c in cols)])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


# -- required probe sparsity ---------------------------------------------------

def run_fig2(Ns: Iterable[int] = (500, 1000, 1500), S_xs: Iterable[int] = (10, 40),
             sigma_ratios: Iterable[float] | None = None, M: int = 50, seed: int = 0,
             sigma_x_sq: float = 1.0, out: str | Path | None = None) -> list[dict]:
    """Mean required ``S_y / L`` versus ``sigma_z^2 / sigma_x^2`` with ``L = N``.

    The same base noise direction is scaled across the noise grid (common random
    numbers), which keeps each curve free of sampling jitter.
    """
    ratios = np.linspace(0.0, 0.9, 10) if sigma_ratios is None else np.asarray(list(sigma_ratios), float)
    rows = []
    for N in sorted(Ns):
        X = gen_iid(M, N, sigma_x_sq, seed=seed + N)
        Z0 = np.random.default_rng(seed + 31 * N).standard_normal((N, M))
        Wm = init_transform(KeyMatrix.random(N, seed=seed + N)).W
        for S_x in sorted(S_xs):
            for r in sorted(ratios):
                var_z = r * sigma_x_sq
                noise = NoiseModel(var_z, sigma_x_sq)
                vals = [required_sparsity(Wm, X[:, m], noise, S_x, z=np.sqrt(var_z) * Z0[:, m]).value
                        for m in range(M)]
                rows.append({"N": N, "S_x": S_x, "sigma_ratio": float(r), "Sy_over_L": float(np.mean(vals)) / N})
    if out is not None:
        write_csv(rows, "fig2", out)
    return rows


# -- server and client views of ambiguized distances -------------------

def run_fig4(radii: Iterable[float] = (2.1, 5.8), S_ns_grid: Iterable[int] | None = None,
             N: int = 512, S_x: int = 10, M: int = 200, seed: int = 0,
             out: str | Path | None = None) -> list[dict]:
    """Distances between enrolled codes and probes at fixed feature-domain radius.

    The server sees ``||p - b||^2`` with ``p`` the ambiguized public code; the
    client restricts ``p`` to the owner's true support before comparing.
    """
    L = N
    free = L - S_x
    fracs = (0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0)
    grid = sorted(S_ns_grid) if S_ns_grid is not None else sorted({int(round(f * free)) for f in fracs})
    if grid[-1] > L - S_x:
        raise ValueError("S_ns grid exceeds L - S_x")
    X = gen_iid(M, N, 1.0, seed=seed)
    key = KeyMatrix.random(N, seed=seed + 1)
    W = learn_transform(X, S_x, key, max_iters=20).W
    A = encode_batch(W, X, S_x)
    rng = np.random.default_rng(seed + 2)
    U = rng.standard_normal((N, M))
    U /= np.linalg.norm(U, axis=0)
    rows = []
    for r in sorted(radii):
        B = encode_batch(W, X + r * U, S_x).astype(np.int64)
        for S_ns in grid:
            P = ambiguize_batch(A, S_ns, seed=seed + 7919 * S_ns).astype(np.int64)
            owner = np.where(A != 0, P, 0)
            server = ((P - B) ** 2).sum(axis=0)
            client = ((owner - B) ** 2).sum(axis=0)
            rows.append({"radius": float(r), "S_ns": S_ns,
                         "server_mean": float(server.mean()), "server_std": float(server.std()),
                         "server_cv": float(server.std() / server.mean()) if server.mean() > 0 else 0.0,
                         "client_mean": float(client.mean()), "client_std": float(client.std())})
    if out is not None:
        write_csv(rows, "fig4", out)
    return rows


# -- KLD leak and clustering attack -----------------------------------

def clustered_setup(cfg: ExperimentConfig, S_x: int | None = None, max_iters: int = 50):
    """Standard clustered dataset, learned transform and its codes."""
    S_x = cfg.S_x if S_x is None else S_x
    X, labels = gen_clustered(cfg.k, cfg.M // cfg.k, cfg.N, cfg.sigma_x_sq, cfg.cluster_variance, seed=cfg.seed)
    key = KeyMatrix.random(cfg.N, seed=cfg.seed + 1)
    T = learn_transform(X, S_x, key, max_iters=max_iters, L=cfg.L)
    return X, labels, T, encode_batch(T, X, S_x)


def run_fig5_table(beta_grid: Iterable[float] = (0.0, 0.1, 0.25, 0.5, 1.0),
                   alpha_grid: Iterable[float] | None = None, cfg: ExperimentConfig | None = None,
                   restarts: int = 20, delta: float = 0.05, out: str | Path | None = None,
                   json_out: str | Path | None = None) -> tuple[list[dict], dict]:
    """KLD leak and k-means accuracy over a ``(alpha_x, beta_x)`` grid.

    ``beta_x`` values are clipped to ``(L - S_x) / L``; ``beta_x = 1`` therefore
    means full ambiguization for every ``alpha_x``.
    """
    cfg = cfg or ExperimentConfig()
    L = cfg.L
    alphas = sorted(alpha_grid) if alpha_grid is not None else [cfg.S_x / L]
    rows = []
    for alpha in alphas:
        S_x = max(1, int(round(alpha * L)))
        _, labels, _, A = clustered_setup(cfg, S_x)
        seen = set()
        for beta in sorted(beta_grid):
            S_ns = min(int(round(beta * L)), L - S_x)
            if S_ns in seen:
                continue
            seen.add(S_ns)
            P = ambiguize_batch(A, S_ns, seed=cfg.seed + 7919 * S_ns)
            rep = kld_leak(distance_pdfs(P, labels, alpha_x=S_x / L, beta_x=S_ns / L), delta)
            att = kmeans_attack(P, cfg.k, labels, restarts=restarts, rng_seed=cfg.seed)
            rows.append({"alpha_x": S_x / L, "beta_x": S_ns / L, "S_x": S_x, "S_ns": S_ns,
                         "kld": rep.kld, "kld_intra": rep.kld_intra, "kld_inter": rep.kld_inter,
                         "convexity_bound": rep.convexity_bound, "passed": rep.passed,
                         "accuracy": att.accuracy})
    default = [r for r in rows if r["S_x"] == cfg.S_x] or rows
    base = min(default, key=lambda r: r["S_ns"])
    full = max(default, key=lambda r: r["S_ns"])
    summary = {
        "delta": delta,
        "S_x": full["S_x"],
        "S_ns": full["S_ns"],
        "kld": full["kld"],
        "passed": bool(full["passed"]),
        "accuracy": full["accuracy"],
        "kld_unambiguized": base["kld"],
        "ratio": full["kld"] / base["kld"] if base["kld"] > 0 else float("nan"),
        "cells": len(rows),
    }
    if out is not None:
        write_csv(rows, "fig5", out)
    if json_out is not None:
        Path(json_out).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return rows, summary


# -- cluster distance ratios ---------------------------------------------------

def table1_settings(L: int = 256, S_x: int = 10, S_y: int | None = None) -> list[tuple[float, float]]:
    """Low, medium and full noise on both sides (a 3 x 3 grid of ``(beta_x, beta_y)``)."""
    S_y = S_x if S_y is None else S_y
    bx = [S_x / L, 0.16, (L - S_x) / L]
    by = [S_y / L, 0.16, (L - S_y) / L]
    return [(a, b) for a in bx for b in by]


def fig7_settings(L: int = 256, S_x: int = 10, S_y: int | None = None,
                  S_nq_grid: Sequence[int] | None = None) -> list[tuple[float, float]]:
    """Full database ambiguization with a sweep of query decoys up to ``L - S_y``."""
    S_y = S_x if S_y is None else S_y
    grid = S_nq_grid if S_nq_grid is not None else [0, 4, 10, 22, 46, 86, 126, 166, 206, L - S_y]
    return [((L - S_x) / L, s / L) for s in sorted(set(min(s, L - S_y) for s in grid))]


def run_table1_fig7(settings: Sequence[tuple[float, float]] | None = None, cfg: ExperimentConfig | None = None,
                    n_queries: int = 10, out: str | Path | None = None, setup=None) -> list[dict]:
    """Pairwise-mean matrices with ``d_diag``, ``d_off`` and their ratio per setting."""
    cfg = cfg or ExperimentConfig()
    if setup is None:
        setup = clustered_setup(cfg)
    X, labels, T, A = setup
    if settings is None:
        settings = table1_settings(cfg.L, cfg.S_x, cfg.sparsity_y) + fig7_settings(cfg.L, cfg.S_x, cfg.sparsity_y)
    tables = ratio_table(sorted(set(settings)), X, labels, T, cfg.S_x, cfg.noise, S_y=cfg.sparsity_y,
                         n_queries=n_queries, seed=cfg.seed, codes=A)
    rows = []
    for t in tables:
        row = {"beta_x": t.beta_x, "beta_y": t.beta_y, "S_ns": t.S_ns, "S_nq": t.S_nq, "S_y": t.S_y,
               "disclosed_fraction": t.disclosed_fraction, "d_diag": t.d_diag_mean, "d_off": t.d_off_mean,
               "ratio": t.ratio}
        k = t.matrix.shape[0]
        for i in range(k):
            for j in range(k):
                row[f"m{i}{j}"] = float(t.matrix[i, j])
        rows.append(row)
    if out is not None:
        write_csv(rows, "table1", out)
    return rows


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
