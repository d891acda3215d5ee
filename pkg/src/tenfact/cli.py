"""Operator surface: seeded, reproducible subcommands wiring generation,
training, search, verification, rendering and the oracle together.

Every command writes a resolved-config snapshot next to its outputs; the only
timestamp lives in that snapshot's first comment line so byte-level
reproducibility stays testable.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time

import numpy as np

from .errors import (BudgetError, CorruptionError, FormatError,
                     GenerationError, IncompatibleError, SearchError,
                     TenfactError, UsageError)
from .model import (TrainConfig, config_for_variant, load_checkpoint,
                    save_checkpoint, train)
from .oracle import OracleConfig, brute_force_rank
from .search import ModelGuide, SearchConfig, decompose
from .synth import GenParams, generate_dataset, read_dataset, write_dataset
from .tensors import (build_matmul_tensor, read_certificate, read_tensor,
                      render_algorithm, verify_decomposition,
                      verify_matmul_algorithm, write_certificate, write_tensor)

_CONFIG_KEYS = {
    "gen": {"s", "f_max", "r_min", "r_max", "sparsity", "pool_size", "n",
            "filter", "seed", "filter_mode", "filter_sign", "basis_clip"},
    "train": {"epochs", "batch_size", "lr", "value_weight", "shuffle_period",
              "held_fraction", "basis_prob", "variant", "seed", "hidden",
              "embed_dim", "chunk"},
    "search": {"simulations", "k", "c_puct", "temperature", "r_limit", "seed"},
    "run": {"out", "master_seed", "variant"},
}


def load_config(path):
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise UsageError(f"cannot read config file {path}")
    out = {}
    for section in cp.sections():
        if section not in _CONFIG_KEYS:
            raise UsageError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in _CONFIG_KEYS[section]:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
        out[section] = dict(cp[section])
    return out


def _snapshot(out_dir, sections):
    lines = [f"# timestamp={time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    for name, values in sections.items():
        lines.append(f"[{name}]")
        for k in sorted(values):
            lines.append(f"{k} = {values[k]}")
        lines.append("")
    with open(os.path.join(out_dir, "resolved.ini"), "w") as fh:
        fh.write("\n".join(lines))


def _parse_target(spec):
    """'matmul:n,m,p' or a tensor file path."""
    if spec.startswith("matmul:"):
        try:
            n, m, p = (int(x) for x in spec[len("matmul:"):].split(","))
        except ValueError:
            raise UsageError(f"bad matmul target {spec!r} (want matmul:n,m,p)")
        return build_matmul_tensor(n, m, p), (n, m, p)
    return read_tensor(spec), None


def _gen_params(cfg, args):
    sec = cfg.get("gen", {})

    def pick(name, cast, default):
        val = getattr(args, name, None)
        if val is not None:
            return val
        if name in sec:
            return cast(sec[name])
        return default

    return GenParams(
        s=pick("s", int, 4),
        f_max=pick("f_max", int, 2),
        r_min=pick("r_min", int, 3),
        r_max=pick("r_max", int, 8),
        sparsity=pick("sparsity", float, 0.75),
        pool_size=pick("pool_size", int, 0),
        seed=pick("seed", int, 0),
        filter_mode=sec.get("filter_mode", "duplicate"),
        filter_sign=sec.get("filter_sign", "up_to_sign"),
        basis_clip=sec.get("basis_clip", "reject"),
    )


def cmd_gen(args):
    cfg = load_config(args.config) if args.config else {}
    params = _gen_params(cfg, args)
    n = args.n if args.n is not None else int(cfg.get("gen", {}).get("n", 1000))
    filtered = not args.no_filter
    if not filtered and cfg.get("gen", {}).get("filter", "").lower() == "true":
        filtered = True
    os.makedirs(args.out, exist_ok=True)
    demos, stats = generate_dataset(params, n, filtered=filtered)
    write_dataset(demos, os.path.join(args.out, "demos.txt"), params)
    with open(os.path.join(args.out, "stats.txt"), "w") as fh:
        fh.write(stats.report())
    _snapshot(args.out, {"gen": {**params.__dict__, "n": n, "filter": filtered}})
    print(f"wrote {n} demos; rejection_fraction={stats.fraction:.4f}")
    return 0


def _train_config(cfg, args):
    sec = cfg.get("train", {})

    def pick(name, cast, default):
        val = getattr(args, name, None)
        if val is not None:
            return val
        if name in sec:
            return cast(sec[name])
        return default

    hidden = pick("hidden", str, "512,512")
    if isinstance(hidden, str):
        hidden = tuple(int(x) for x in hidden.split(","))
    tc = TrainConfig(
        epochs=pick("epochs", int, 100),
        batch_size=pick("batch_size", int, 256),
        lr=pick("lr", float, 1e-3),
        value_weight=pick("value_weight", float, 0.5),
        shuffle_period=pick("shuffle_period", int, 10),
        held_fraction=pick("held_fraction", float, 0.1),
        basis_prob=pick("basis_prob", float, 0.25),
        seed=pick("seed", int, 0),
        hidden=hidden,
        embed_dim=pick("embed_dim", int, 16),
        chunk=pick("chunk", int, 4),
    )
    variant = args.variant or sec.get("variant", "baseline")
    return config_for_variant(tc, variant)


def _last_epoch(log_lines):
    last = 0
    for line in log_lines:
        if line.startswith("epoch="):
            last = max(last, int(line.split()[0].split("=")[1]))
    return last


def cmd_train(args):
    cfg = load_config(args.config) if args.config else {}
    tc = _train_config(cfg, args)
    header, demos = read_dataset(args.dataset)
    gen_params = GenParams(s=header["s"], f_max=header["f_max"])
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "checkpoint.ckpt")
    log_path = os.path.join(args.out, "train_log.txt")

    params, start_epoch, log = None, 1, []
    if args.resume:
        if not (os.path.exists(ckpt_path) and os.path.exists(log_path)):
            raise UsageError("--resume needs an existing checkpoint and log in --out")
        params = load_checkpoint(ckpt_path, expect_s=header["s"])
        with open(log_path) as fh:
            log = fh.read().splitlines()
        start_epoch = _last_epoch(log) + 1

    try:
        params, log = train(demos, tc, gen_params, params=params,
                            start_epoch=start_epoch, log=log)
    finally:
        if params is not None and params.finite():
            save_checkpoint(params, ckpt_path)
    with open(log_path, "w") as fh:
        fh.write("\n".join(log) + "\n")
    with open(os.path.join(args.out, "loss_table.tsv"), "w") as fh:
        fh.write("epoch\tsplit\tloss\tvariant\n")
        for line in log:
            kv = dict(f.split("=", 1) for f in line.split())
            fh.write(f"{kv['epoch']}\t{kv['split']}\t{kv['loss']}\t{kv['variant']}\n")
    _snapshot(args.out, {"train": {**{k: getattr(tc, k) for k in
                                      ("epochs", "batch_size", "lr", "value_weight",
                                       "shuffle_period", "held_fraction", "basis_prob",
                                       "seed", "variant", "embed_dim", "chunk")},
                                   "hidden": ",".join(map(str, tc.hidden)),
                                   "dataset": args.dataset}})
    print(f"trained variant={tc.variant} epochs={tc.epochs}; checkpoint at {ckpt_path}")
    return 0


def _search_config(cfg, args):
    sec = cfg.get("search", {})

    def pick(name, cast, default):
        val = getattr(args, name, None)
        if val is not None:
            return val
        if name in sec:
            return cast(sec[name])
        return default

    return SearchConfig(
        simulations=pick("simulations", int, 400),
        k=pick("k", int, 16),
        c_puct=pick("c_puct", float, 1.25),
        temperature=pick("temperature", float, 1.0),
        r_limit=pick("r_limit", int, 12),
        seed=pick("seed", int, 0),
    )


def cmd_decompose(args):
    cfg = load_config(args.config) if args.config else {}
    sc = _search_config(cfg, args)
    T, dims = _parse_target(args.target)
    if T.shape[0] != T.shape[1] or T.shape[1] != T.shape[2]:
        raise UsageError("decompose needs a cubic S x S x S target")
    params = load_checkpoint(args.checkpoint, expect_s=T.shape[0])
    os.makedirs(args.out, exist_ok=True)
    guide = ModelGuide(params)
    try:
        dec, lines = decompose(T, guide, sc)
    except SearchError as exc:
        print(f"search failed: {exc}", file=sys.stderr)
        return 1
    with open(os.path.join(args.out, "episode.log"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _snapshot(args.out, {"search": {**{k: getattr(sc, k) for k in
                                       ("simulations", "k", "c_puct", "temperature",
                                        "r_limit", "seed")},
                                    "target": args.target,
                                    "checkpoint": args.checkpoint}})
    if not dec.complete:
        nnz = int(np.count_nonzero(dec.residual))
        print(f"fail: hit step limit with residual_nnz={nnz}", file=sys.stderr)
        return 1
    write_certificate(os.path.join(args.out, "certificate.txt"), dec.factors,
                      params.cfg.f_max)
    print(f"success: rank={dec.rank_witness}")
    return 0


def cmd_verify(args):
    s, f_max, factors = read_certificate(args.certificate)
    T, dims = _parse_target(args.target)
    ok_dec = T.shape == (s, s, s) if dims is None else True
    if dims is not None:
        n, m, p = dims
        if (len(factors[0].u), len(factors[0].v), len(factors[0].w)) != (n * m, m * p, n * p):
            raise UsageError(f"certificate S={s} does not match target dims {dims}")
    elif T.shape != (s, s, s):
        raise UsageError(f"certificate S={s} does not match tensor shape {T.shape}")
    ok = verify_decomposition(T, factors)
    print(f"decomposition: {'pass' if ok else 'FAIL'} (r={len(factors)})")
    all_ok = ok
    if dims is not None:
        n, m, p = dims
        ok2 = verify_matmul_algorithm(n, m, p, factors, trials=args.trials, seed=args.seed)
        print(f"matmul algorithm ({args.trials} trials): {'pass' if ok2 else 'FAIL'}")
        all_ok = all_ok and ok2
    return 0 if all_ok else 1


def cmd_render(args):
    s, f_max, factors = read_certificate(args.certificate)
    if not args.target.startswith("matmul:"):
        raise UsageError("render needs a matmul:n,m,p target")
    _, dims = _parse_target(args.target)
    n, m, p = dims
    print(render_algorithm(factors, n, m, p))
    return 0


def cmd_oracle(args):
    T = read_tensor(args.tensor)
    cfg = OracleConfig(s=T.shape[0], r_max=args.r_max)
    res = brute_force_rank(T, cfg)
    if res is None:
        print(f"rank > {args.r_max} (not found within oracle depth)")
        return 1
    rank, witness = res
    print(f"rank={rank}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        if witness:
            write_certificate(os.path.join(args.out, "witness.txt"), witness,
                              max(cfg.entries))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="tenfact",
                                 description="matrix-multiplication algorithm discovery "
                                             "via guided tensor decomposition")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic demo dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--s", type=int)
    g.add_argument("--f-max", dest="f_max", type=int)
    g.add_argument("--r-min", dest="r_min", type=int)
    g.add_argument("--r-max", dest="r_max", type=int)
    g.add_argument("--sparsity", type=float)
    g.add_argument("--pool-size", dest="pool_size", type=int)
    g.add_argument("--no-filter", action="store_true")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="supervised training on a demo dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--variant", choices=["baseline", "augmented", "full"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--value-weight", dest="value_weight", type=float)
    t.add_argument("--shuffle-period", dest="shuffle_period", type=int)
    t.add_argument("--held-fraction", dest="held_fraction", type=float)
    t.add_argument("--basis-prob", dest="basis_prob", type=float)
    t.add_argument("--hidden")
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--chunk", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decompose", help="decompose a target tensor with MCTS")
    d.add_argument("target", help="matmul:n,m,p or a tensor file")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--config")
    d.add_argument("--simulations", type=int)
    d.add_argument("--k", type=int)
    d.add_argument("--c-puct", dest="c_puct", type=float)
    d.add_argument("--temperature", type=float)
    d.add_argument("--r-limit", dest="r_limit", type=int)
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_decompose)

    v = sub.add_parser("verify", help="verify a factor certificate against a target")
    v.add_argument("certificate")
    v.add_argument("target")
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("render", help="print the bilinear algorithm of a certificate")
    r.add_argument("certificate")
    r.add_argument("target")
    r.set_defaults(func=cmd_render)

    o = sub.add_parser("oracle", help="exact minimal rank of a tiny tensor")
    o.add_argument("tensor")
    o.add_argument("--r-max", dest="r_max", type=int, default=3)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, BudgetError, IncompatibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, CorruptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SearchError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TenfactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
