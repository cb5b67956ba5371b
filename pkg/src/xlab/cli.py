"""Command-line experiment runner.

Every command produces a list of CSV rows and a JSON report.  Without
``--out`` the CSV goes to stdout; with ``--out PATH`` it is written to
``PATH`` (suffix ``.csv``) and the JSON report next to it (suffix ``.json``).
A one-line human summary always goes to stderr.

Exit codes: 0 when every check passed, 2 when a mathematical check failed,
1 for usage, input or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import conformal, healy, martingale, sampler
from .errors import XlabError
from .expander import make_rng, parse_graph, random_walk, seed_length, seeded_walk

COMMANDS = ("gt-verify", "tail", "tail-exact", "healy", "mgf", "martingale", "graph-info", "sample", "sweep")
MAX_CELLS = 10**4
# config keys whose CSV column has a different name
COLUMN_ALIAS = {"eps": "epsilon"}
GT_TOL = 1e-6

CSV_FIELDS = {
    "gt-verify": ["command", "gen", "count", "d", "nodes", "lhs", "rhs", "margin", "integrand_min", "passed"],
    "tail": ["command", "graph", "fn", "side", "k", "epsilon", "p_hat", "ci_low", "ci_high", "bound",
             "lambda", "d", "n", "trials", "seed", "satisfied"],
    "tail-exact": ["command", "graph", "fn", "side", "k", "epsilon", "p_hat", "ci_low", "ci_high", "bound",
                   "lambda", "d", "n", "trials", "satisfied"],
    "healy": ["command", "graph", "fn", "t", "gamma", "b", "lambda", "vectors", "seed",
              "slack1", "slack2", "slack3", "slack4", "passed"],
    "mgf": ["command", "graph", "fn", "k", "t", "gamma", "b", "lambda", "value", "rhs", "chain",
            "recursion_slack", "satisfied"],
    "martingale": ["command", "graph", "fn", "k", "epsilon", "walks", "seed", "T", "max_residual",
                   "max_conditional_mean", "max_Z_over_TM", "max_W", "shrink_ratio", "passed"],
    "graph-info": ["command", "graph", "n", "D", "lambda"],
    "sample": ["command", "graph", "k", "seed", "bits", "walk"],
}


class UsageError(XlabError):
    pass


@dataclass
class ExperimentConfig:
    command: str = ""
    graph: str | None = None
    fn: str | None = None
    gen: str | None = None
    k: int | None = None
    eps: float | None = None
    t: float | None = None
    gamma: float | None = None
    b: float | None = None
    trials: int | None = None
    nodes: int | None = None
    seed: int = 0
    side: str = "max"
    bits: str | None = None
    out: str | None = None
    grid: dict = field(default_factory=dict)
    base: str | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise UsageError(f"{self.command} needs " + ", ".join("--" + n for n in missing))


def _fmt(value) -> str:
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def render_csv(fieldnames, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_fmt(row.get(name)) for name in fieldnames])
    return buf.getvalue()


def _load_fn(cfg: ExperimentConfig, n: int) -> sampler.MatrixFn:
    if cfg.fn is not None:
        f = sampler.MatrixFn.load(cfg.fn)
    elif cfg.gen is not None:
        seed, fn_n, d = _parse_gen(cfg.gen)
        f = sampler.gen_mean_zero_fn(seed, fn_n, d)
    else:
        raise UsageError(f"{cfg.command} needs --fn or --gen")
    if f.n != n:
        raise UsageError(f"function has {f.n} vertices but the graph has {n}")
    return f


def _parse_gen(text: str):
    parts = str(text).split(":")
    try:
        seed, n, d = (int(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"--gen expects seed:n:d, got {text!r}") from exc
    return seed, n, d


def _fn_label(cfg):
    return cfg.fn if cfg.fn is not None else f"gen:{cfg.gen}"


def _graph_fn(cfg):
    cfg.require("graph")
    G = parse_graph(cfg.graph)
    return G, _load_fn(cfg, G.n)


def run_gt_verify(cfg):
    cfg.require("gen")
    seed, count, d = _parse_gen(cfg.gen)
    Hs = conformal.random_tuple(make_rng(seed), count, d)
    nodes = cfg.nodes if cfg.nodes is not None else 128
    rep = conformal.gt_multi_verify(Hs, m=nodes)
    passed = rep.margin >= -GT_TOL
    row = {"command": cfg.command, "gen": cfg.gen, "count": count, "d": d, "nodes": nodes, "lhs": rep.lhs,
           "rhs": rep.rhs, "margin": rep.margin, "integrand_min": rep.integrand_min, "passed": passed}
    return [row], rep.to_json(), passed


def _tail_row(cfg, rep):
    row = rep.csv_row()
    row.update(command=cfg.command, graph=cfg.graph, fn=_fn_label(cfg), side=rep.side, seed=cfg.seed)
    return row


def run_tail(cfg):
    cfg.require("k", "eps", "trials")
    G, f = _graph_fn(cfg)
    rep = sampler.tail_mc(G, f, cfg.k, cfg.eps, cfg.trials, cfg.seed, side=cfg.side)
    return [_tail_row(cfg, rep)], rep.to_json(), rep.satisfied


def run_tail_exact(cfg):
    cfg.require("k", "eps")
    G, f = _graph_fn(cfg)
    rep = sampler.tail_exact(G, f, cfg.k, cfg.eps, side=cfg.side)
    return [_tail_row(cfg, rep)], rep.to_json(), rep.satisfied


def run_healy(cfg):
    cfg.require("t", "gamma", "b")
    G, f = _graph_fn(cfg)
    T = healy.build_transfer(G, f, cfg.t, cfg.gamma, cfg.b)
    trials = cfg.trials if cfg.trials is not None else 1000
    rep = healy.check_healy_lemma(T, trials, cfg.seed)
    row = {"command": cfg.command, "graph": cfg.graph, "fn": _fn_label(cfg), "t": cfg.t, "gamma": cfg.gamma,
           "b": cfg.b, "lambda": G.lam, "vectors": rep.vectors, "seed": cfg.seed, "passed": rep.passed}
    row.update({f"slack{i + 1}": s for i, s in enumerate(rep.max_slack)})
    return [row], rep.to_json(), rep.passed


def run_mgf(cfg):
    cfg.require("k", "t", "gamma", "b")
    G, f = _graph_fn(cfg)
    rep = healy.check_mgf_bound(G, f, cfg.k, cfg.t, cfg.gamma, cfg.b)
    row = {"command": cfg.command, "graph": cfg.graph, "fn": _fn_label(cfg), "k": cfg.k, "t": cfg.t,
           "gamma": cfg.gamma, "b": cfg.b, "lambda": G.lam, "value": rep.value, "rhs": rep.rhs,
           "chain": rep.chain, "recursion_slack": rep.recursion_slack, "satisfied": rep.satisfied}
    return [row], rep.to_json(), rep.satisfied


def run_martingale(cfg):
    cfg.require("k", "eps")
    G, f = _graph_fn(cfg)
    walks = cfg.trials if cfg.trials is not None else 100
    mart = martingale.verify_martingale_property(G, f, cfg.eps, cfg.k, walks, cfg.seed)
    shrink = martingale.verify_shrink(G, f)
    ratio = 0.0
    max_w = 0.0
    ok = mart["passed"] and shrink["passed"]
    dumps = []
    rng = make_rng(cfg.seed)
    for _ in range(walks):
        walk = random_walk(G, int(rng.integers(2**63)), cfg.k)
        dec = martingale.decompose(G, f, walk, cfg.eps)
        bounds = martingale.verify_bounds(dec, f, lam=G.lam)
        ok &= bounds["passed"] and dec.residual <= 1e-12
        ratio = max(ratio, max(v["max_Z"] / v["TM"] for v in bounds["norms"].values()))
        max_w = max(max_w, bounds["W_schatten2"])
        if len(dumps) < 10:
            dumps.append(martingale.decomposition_json(dec))
    row = {"command": cfg.command, "graph": cfg.graph, "fn": _fn_label(cfg), "k": cfg.k, "epsilon": cfg.eps,
           "walks": walks, "seed": cfg.seed, "T": mart["T"], "max_residual": mart["max_residual"],
           "max_conditional_mean": max(mart["max_conditional_mean"], mart["sampled_conditional_mean"]),
           "max_Z_over_TM": ratio, "max_W": max_w, "shrink_ratio": shrink["ratio"], "passed": ok}
    return [row], {"martingale": mart, "shrink": shrink, "decompositions": dumps}, ok


def run_graph_info(cfg):
    cfg.require("graph")
    G = parse_graph(cfg.graph)
    print(f"{G.name}: n = {G.n}, D = {G.D}, lambda = {G.lam:.12f}", file=sys.stderr)
    row = {"command": cfg.command, "graph": cfg.graph, "n": G.n, "D": G.D, "lambda": G.lam}
    return [row], dict(row), True


def run_sample(cfg):
    cfg.require("graph", "k")
    G = parse_graph(cfg.graph)
    if cfg.bits is not None:
        walk = seeded_walk(G, cfg.bits, cfg.k)
    else:
        walk = random_walk(G, cfg.seed, cfg.k)
    row = {"command": cfg.command, "graph": cfg.graph, "k": cfg.k, "seed": cfg.seed, "bits": cfg.bits,
           "walk": " ".join(str(int(v)) for v in walk)}
    report = dict(row)
    report["seed_length"] = seed_length(G.n, G.D, cfg.k)
    return [row], report, True


RUNNERS = {
    "gt-verify": run_gt_verify,
    "tail": run_tail,
    "tail-exact": run_tail_exact,
    "healy": run_healy,
    "mgf": run_mgf,
    "martingale": run_martingale,
    "graph-info": run_graph_info,
    "sample": run_sample,
}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("XLAB_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(cfg):
    """Run ``cfg.base`` over the Cartesian product of ``cfg.grid`` in key order."""
    if cfg.base not in RUNNERS:
        raise UsageError(f"sweep needs 'base' set to one of {sorted(RUNNERS)}")
    names = list(cfg.grid)
    for name in names:
        if name not in RUNNERS and name not in {f.name for f in fields(ExperimentConfig)}:
            raise UsageError(f"unknown grid parameter {name!r}")
        if not isinstance(cfg.grid[name], list):
            raise UsageError(f"grid entry {name!r} must be a list")
    cells = math.prod(len(cfg.grid[n]) for n in names) if names else 0
    if cells > MAX_CELLS:
        raise UsageError(f"grid has {cells} cells; the limit is {MAX_CELLS}")
    base = asdict(cfg)
    base.update(command=cfg.base, grid={}, base=None)
    combos = list(itertools.product(*(cfg.grid[n] for n in names))) if names else []

    columns = [COLUMN_ALIAS.get(n, n) for n in names]

    def one(values):
        cell = ExperimentConfig(**{**base, **dict(zip(names, values))})
        grid_values = dict(zip(columns, values))
        try:
            rows, _, ok = RUNNERS[cell.command](cell)
            return {**rows[0], **grid_values, "status": "ok" if ok else "violated"}
        except (XlabError, OSError) as exc:
            return {"command": cell.command, **grid_values, "status": f"error: {exc}"}

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(one, combos))
    fieldnames = CSV_FIELDS[cfg.base] + [c for c in columns if c not in CSV_FIELDS[cfg.base]] + ["status"]
    statuses = [r["status"] for r in rows]
    ok = all(s == "ok" for s in statuses)
    report = {"base": cfg.base, "grid": cfg.grid, "cells": len(rows),
              "violated": sum(s == "violated" for s in statuses),
              "errors": sum(s.startswith("error") for s in statuses)}
    return rows, report, ok, fieldnames


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xlab", description="Matrix expander Chernoff experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("target", nargs="?", help="graph spec (shorthand for --graph)")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--graph")
    p.add_argument("--fn", help="MatrixFn JSON file")
    p.add_argument("--gen", help="generated input as seed:n:d (for gt-verify: seed:count:d)")
    p.add_argument("--k", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--side", choices=("max", "min"))
    p.add_argument("--bits", help="seed bit string for `sample`")
    p.add_argument("--out", help="output path; writes PATH.csv and PATH.json")
    return p


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
    cfg = ExperimentConfig.from_json({k: v for k, v in data.items() if k != "command"})
    cfg.command = args.command
    for name in ("graph", "fn", "gen", "k", "eps", "t", "gamma", "b", "trials", "nodes", "seed", "side",
                 "bits", "out"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    if args.target is not None:
        cfg.graph = args.target
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    return cfg


def _write_outputs(cfg, text, report):
    if cfg.out is None:
        sys.stdout.write(text)
        return
    out = Path(cfg.out)
    out.with_suffix(".csv").write_text(text, encoding="utf-8")
    out.with_suffix(".json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    start = time.perf_counter()
    try:
        cfg = load_config(args)
        if cfg.command == "sweep":
            rows, report, ok, fieldnames = run_sweep(cfg)
        else:
            rows, report, ok = RUNNERS[cfg.command](cfg)
            fieldnames = CSV_FIELDS[cfg.command]
        report = {"config": cfg.to_json(), "result": report, "passed": ok,
                  "runtime_seconds": time.perf_counter() - start}
        _write_outputs(cfg, render_csv(fieldnames, rows), report)
    except (XlabError, OSError) as exc:
        print(f"xlab: error: {exc}", file=sys.stderr)
        return 1
    print(f"xlab {cfg.command}: {'passed' if ok else 'FAILED'}", file=sys.stderr)
    if cfg.command == "sweep" and report["result"]["errors"]:
        return 1
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
