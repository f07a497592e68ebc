"""``stc`` command line: data generation, enrollment, queries, experiments and the storage service."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .ambiguization import ambiguize_batch
from .coding import encode_batch, ternary_encode
from .data import gen_clustered
from .identification import (aggregate_scores, build_query, default_gamma, private_decode,
                             server_lookup)
from .server import ServiceError, StorageClient, StorageServer, StorageService, resolve_db_path
from .storage import PublicDatabase, load_db, save_db
from .transform import KeyMatrix, learn_transform, load_transform, save_transform

log = logging.getLogger("stc")


def _config(args) -> ex.ExperimentConfig:
    overrides = {}
    for name in ("N", "L", "M", "k", "S_x", "S_y", "S_ns", "S_nq", "sigma_z_sq"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "config", None):
        return ex.ExperimentConfig.from_file(args.config, **overrides)
    return ex.ExperimentConfig.from_mapping(overrides)


def _out(args, default: str) -> Path:
    return Path(getattr(args, "out", None) or default)


def _load_key(args, N: int, seed: int) -> KeyMatrix:
    if getattr(args, "key", None):
        return KeyMatrix(np.load(args.key))
    return KeyMatrix.random(N, seed=seed + 1)


def _load_data(path: str):
    with np.load(path) as f:
        return f["X"], f["labels"]


def _server_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


# -- subcommands -------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _config(args)
    X, labels = gen_clustered(cfg.k, cfg.M // cfg.k, cfg.N, cfg.sigma_x_sq, cfg.cluster_variance, seed=cfg.seed)
    out = _out(args, "data.npz")
    np.savez(out, X=X, labels=labels)
    if args.key_out:
        np.save(args.key_out, KeyMatrix.random(cfg.N, seed=cfg.seed + 1).entries)
    print(f"wrote {X.shape[0]}x{X.shape[1]} features to {out}")
    return 0


def cmd_learn(args) -> int:
    cfg = _config(args)
    X, _ = _load_data(args.data)
    T = learn_transform(X, cfg.S_x, _load_key(args, X.shape[0], cfg.seed), max_iters=args.iters, L=cfg.L)
    out = _out(args, "transform.stcw")
    save_transform(out, T)
    print(f"transform {T.L}x{T.N}, residual {T.objective_trace[-1]:.6g} after "
          f"{len(T.objective_trace) - 1} updates -> {out}")
    return 0


def cmd_enroll(args) -> int:
    cfg = _config(args)
    X, _ = _load_data(args.data)
    if args.transform:
        T = load_transform(args.transform)
    else:
        T = learn_transform(X, cfg.S_x, _load_key(args, X.shape[0], cfg.seed), max_iters=args.iters, L=cfg.L)
    A = encode_batch(T, X, cfg.S_x)
    P = ambiguize_batch(A, cfg.S_ns, seed=cfg.seed)
    owner = Path(args.owner or _out(args, "owner.npz"))
    if args.server:
        with StorageClient(*_server_addr(args.server)) as c:
            first, count, M = c.enroll(P)
        where = args.server
    else:
        db_path = resolve_db_path(args.db) or "db.stcdb"
        db = load_db(db_path) if Path(db_path).exists() else PublicDatabase.empty(T.L)
        first, count = db.M, P.shape[1]
        db = db.extend(P)
        save_db(db_path, db)
        M, where = db.M, db_path
    t_path = owner.with_suffix(".stcw")
    save_transform(t_path, T)
    np.savez(owner, support=np.packbits(A != 0, axis=0), L=T.L, first_id=first, transform=str(t_path))
    print(f"enrolled {count} items as ids {first}..{first + count - 1} (M={M}) at {where}; "
          f"S_x={cfg.S_x}, S_ns={cfg.S_ns}; owner record {owner}")
    return 0


def _probe(args, T, cfg) -> np.ndarray:
    if args.vector:
        y = np.load(args.vector).astype(np.float64).ravel()
    else:
        X, _ = _load_data(args.data)
        y = X[:, args.item].copy()
    if args.noise:
        y = y + np.sqrt(args.noise) * np.random.default_rng(cfg.seed).standard_normal(y.shape)
    return y


def cmd_query(args) -> int:
    cfg = _config(args)
    T = load_transform(args.transform)
    y = _probe(args, T, cfg)
    S_y = cfg.sparsity_y
    client = StorageClient(*_server_addr(args.server)) if args.server else None
    db = None if client else load_db(resolve_db_path(args.db) or "db.stcdb")
    try:
        if args.mode == "private":
            b = ternary_encode(T, y, S_y)
            # ambiguized items sit S_ns further out, so the default radius moves with them
            gamma = args.gamma if args.gamma is not None else default_gamma(cfg.S_x, S_y, T.L) + cfg.S_ns / T.L
            if client:
                entries = client.query_full(b, gamma)
                decision = "H1" if entries else "H0"
            else:
                res = private_decode(b, db, gamma)
                entries, decision = res.entries, res.decision
            label = f"gamma={gamma:g} (radius {gamma * T.L:g})"
        else:
            req = build_query(y, T, S_y, cfg.S_nq, rng_seed=cfg.seed)
            lists = client.query_positions(req.positions) if client else server_lookup(req.positions, db)
            res = aggregate_scores(lists, req, args.threshold)
            entries, decision = res.entries, res.decision
            label = f"{req.positions.size} positions disclosed ({req.S_nq} decoys)"
    finally:
        if client:
            client.close()
    print(f"mode={args.mode} {label}")
    print(f"decision: {decision}")
    col = "sq_distance" if args.mode == "private" else "score"
    print(f"{'id':>8}  {col}")
    for i, v in entries[: args.top]:
        print(f"{i:>8}  {v:g}")
    return 0


def cmd_fig2(args) -> int:
    cfg = _config(args)
    out = _out(args, "fig2.csv")
    ex.run_fig2(M=args.items, seed=cfg.seed, sigma_x_sq=cfg.sigma_x_sq, out=out)
    print(f"wrote {out}")
    return 0


def cmd_fig4(args) -> int:
    cfg = _config(args)
    out = _out(args, "fig4.csv")
    ex.run_fig4(N=cfg.N, S_x=cfg.S_x, M=args.items, seed=cfg.seed, out=out)
    print(f"wrote {out}")
    return 0


def cmd_fig5(args) -> int:
    cfg = _config(args)
    out = _out(args, "fig5.csv")
    alphas = [float(a) for a in args.alpha.split(",")] if args.alpha else None
    betas = [float(b) for b in args.beta.split(",")]
    _, summary = ex.run_fig5_table(betas, alphas, cfg, restarts=args.restarts, delta=args.delta,
                                   out=out, json_out=out.with_suffix(".json"))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_table1(args) -> int:
    cfg = _config(args)
    out = _out(args, "table1.csv")
    rows = ex.run_table1_fig7(cfg=cfg, n_queries=args.queries, out=out)
    for r in rows:
        print(f"beta_x={r['beta_x']:.3f} beta_y={r['beta_y']:.3f} d_diag={r['d_diag']:.3f} "
              f"d_off={r['d_off']:.3f} ratio={r['ratio']:.3f}")
    print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    path = resolve_db_path(args.db_path)
    service = StorageService(db_path=path, readonly=args.readonly, L=args.L)
    srv = StorageServer(service, args.host, args.port)
    print(f"serving {service.db.M} codes (L={service.db.L}) on {args.host}:{srv.port}", flush=True)
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed (default 0)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value file of experiment settings")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output path")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    sizes = argparse.ArgumentParser(add_help=False)
    for name, kind in (("N", int), ("L", int), ("M", int), ("k", int), ("S_x", int), ("S_y", int),
                       ("S_ns", int), ("S_nq", int), ("sigma_z_sq", float)):
        sizes.add_argument("--" + (name.replace('_', '-') if name.startswith('sigma') else name.replace('_', '')), dest=name, type=kind)

    p = argparse.ArgumentParser(prog="stc", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help, *extra):
        sp = sub.add_parser(name, help=help, parents=[common, *extra])
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen", cmd_gen, "generate the clustered synthetic database", sizes)
    sp.add_argument("--key-out", help="also write a random key matrix (.npy)")

    sp = add("learn", cmd_learn, "learn a sparsifying transform from a key", sizes)
    sp.add_argument("--data", required=True)
    sp.add_argument("--key", help="key matrix (.npy); default derives one from --seed")
    sp.add_argument("--iters", type=int, default=50)

    sp = add("enroll", cmd_enroll, "encode, ambiguize and store a database", sizes)
    sp.add_argument("--data", required=True)
    sp.add_argument("--key")
    sp.add_argument("--transform", help="reuse a learned transform instead of learning one")
    sp.add_argument("--iters", type=int, default=50)
    sp.add_argument("--db", help="database file (STC_DB overrides)")
    sp.add_argument("--server", help="host:port of a running service")
    sp.add_argument("--owner", help="owner record path (support masks + transform)")

    sp = add("query", cmd_query, "identify a probe", sizes)
    sp.add_argument("--mode", choices=("private", "public"), default="private")
    sp.add_argument("--transform", required=True)
    sp.add_argument("--db")
    sp.add_argument("--server")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--vector", help="probe vector (.npy)")
    g.add_argument("--item", type=int, help="column index into --data")
    sp.add_argument("--data")
    sp.add_argument("--noise", type=float, default=0.0, help="add N(0, noise) to the probe")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--threshold", type=int, help="public-mode vote threshold")
    sp.add_argument("--top", type=int, default=10)

    sp = add("fig2", cmd_fig2, "required sparsity versus noise level", sizes)
    sp.add_argument("--items", type=int, default=50)

    sp = add("fig4", cmd_fig4, "server-side and client-side distances versus ambiguization", sizes)
    sp.add_argument("--items", type=int, default=200)

    sp = add("fig5", cmd_fig5, "KLD leak and k-means attack grid", sizes)
    sp.add_argument("--beta", default="0,0.04,0.1,0.25,0.5,0.75,1")
    sp.add_argument("--alpha", help="comma-separated alpha_x values (default S_x / L)")
    sp.add_argument("--restarts", type=int, default=20)
    sp.add_argument("--delta", type=float, default=0.05)

    sp = add("table1", cmd_table1, "cluster distance matrices and ratio sweep", sizes)
    sp.add_argument("--queries", type=int, default=10)

    sp = add("serve", cmd_serve, "run the storage service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=7707)
    sp.add_argument("--db-path", help="database file (STC_DB overrides)")
    sp.add_argument("--readonly", action="store_true")
    sp.add_argument("--L", type=int, default=256, help="code length for a new empty database")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, ServiceError) as e:
        print(f"stc: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
