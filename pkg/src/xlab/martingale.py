"""Martingale approximation of expander-walk sums.

For a walk ``v_1..v_k`` and truncation depth ``T`` define
``Y_1^(t) = P^(t-1) f(v_1)`` and ``Y_i^(t) = P^(t-1) f(v_i) - P^t f(v_(i-1))``,
``Z_i = sum_{t <= min(k+1-i, T)} Y_i^(t)`` and
``W = (1/k) sum_{i <= k-T} (P^T f)(v_i)``.  Then
``(1/k) sum f(v_i) = W + (1/k) sum Z_i`` by telescoping, and each ``Z_i``
has zero conditional mean given the past of the walk.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInput, NonExpander
from .expander import ExpanderGraph, make_rng, random_walks
from .linalg import singular_values
from .sampler import MatrixFn, tail_mc

SLACK = 1e-9


def _spectral(X):
    return singular_values(X)[..., -1]


def _schatten2(X):
    return np.sqrt(np.sum(np.abs(X) ** 2, axis=(-1, -2)))


def _schatten1(X):
    return singular_values(X).sum(axis=-1)


def _entry_max(X):
    return np.max(np.abs(X), axis=(-1, -2))


NORMS = {"spectral": _spectral, "schatten2": _schatten2, "schatten1": _schatten1, "max": _entry_max}


def p_power_table(G: ExpanderGraph, f: MatrixFn, T: int) -> list[np.ndarray]:
    """``[P^0 f, P^1 f, ..., P^(T-1) f]`` as (n, d, d) tables."""
    if T < 1:
        raise InvalidInput("T must be >= 1")
    if f.n != G.n:
        raise InvalidInput("function and graph have different vertex counts")
    tables = [f.table]
    for _ in range(T - 1):
        tables.append(G.average(tables[-1]))
    return tables


def truncation_depth(F: float, epsilon: float, lam: float, k: int) -> int:
    return min(k, math.ceil(2 * math.log(F / epsilon) / (1 - lam)))


@dataclass
class MartingaleDecomp:
    T: int
    Z: np.ndarray
    W: np.ndarray
    epsilon_target: float
    walk: np.ndarray
    residual: float

    @property
    def k(self) -> int:
        return len(self.walk)


class _Prefix:
    """Prefix sums ``C[m] = sum_{s<m} P^s f`` shared by decomposition and the martingale check."""

    def __init__(self, G, f, T):
        tables = p_power_table(G, f, T + 1)
        self.C = np.concatenate([np.zeros((1,) + f.table.shape, dtype=complex),
                                 np.cumsum(np.stack(tables), axis=0)])
        self.PT = tables[T]

    def head(self, m):
        return self.C[m]

    def tail(self, m):
        # sum_{s=1..m} P^s f
        return self.C[m + 1] - self.C[1]


def _setup(G, f, epsilon, k):
    lam = G.lam
    if lam >= 1:
        raise NonExpander(f"graph has lambda = {lam}; the decomposition needs lambda < 1")
    F = f.F
    if not 0 < epsilon < F:
        raise InvalidInput(f"epsilon must lie in (0, F) = (0, {F})")
    if k < 1:
        raise InvalidInput("walk must have at least one vertex")
    T = truncation_depth(F, epsilon, lam, k)
    return T, _Prefix(G, f, T)


def _decompose_with(prefix, T, f, walk, epsilon):
    k = len(walk)
    Z = np.empty((k,) + f.table.shape[1:], dtype=complex)
    for i in range(k):
        m = min(k - i, T)
        Z[i] = prefix.head(m)[walk[i]]
        if i > 0:
            Z[i] -= prefix.tail(m)[walk[i - 1]]
    W = prefix.PT[walk[:k - T]].sum(axis=0) / k if k > T else np.zeros(f.table.shape[1:], dtype=complex)
    lhs = f.table[walk].sum(axis=0) / k
    residual = float(np.max(np.abs(lhs - W - Z.sum(axis=0) / k)))
    return MartingaleDecomp(T, Z, W, float(epsilon), walk, residual)


def decompose(G: ExpanderGraph, f: MatrixFn, walk, epsilon: float) -> MartingaleDecomp:
    walk = np.asarray(walk, dtype=np.int64)
    if walk.ndim != 1 or walk.min() < 0 or walk.max() >= G.n:
        raise InvalidInput("walk must be a sequence of vertices of G")
    T, prefix = _setup(G, f, epsilon, len(walk))
    return _decompose_with(prefix, T, f, walk, epsilon)


def verify_martingale_property(G: ExpanderGraph, f: MatrixFn, epsilon: float, k: int,
                               samples: int = 0, rng_seed: int = 0) -> dict:
    """Exact conditional means of ``Z_i`` given the previous vertex.

    ``Z_i`` depends on the past only through ``v_(i-1) = u``, so
    ``E[Z_i | past] = sum_w P(u, w) Z_i(u -> w)`` is evaluated for every u.
    Sampled walks are then checked the same way at their actual prefixes,
    and their decompositions contribute reconstruction residuals.
    """
    T, prefix = _setup(G, f, epsilon, k)
    first = float(np.max(np.abs(prefix.head(min(k, T)).mean(axis=0))))
    worst = first
    for i in range(1, k):
        m = min(k - i, T)
        cond = G.average(prefix.head(m)) - prefix.tail(m)
        worst = max(worst, float(np.max(np.abs(cond))))
    sampled = 0.0
    residual = 0.0
    if samples:
        walks = random_walks(G, make_rng(rng_seed), k, samples)
        for walk in walks:
            residual = max(residual, _decompose_with(prefix, T, f, walk, epsilon).residual)
            for i in range(1, k):
                m = min(k - i, T)
                u = walk[i - 1]
                nxt = G.adj[u]
                cond = (prefix.head(m)[nxt] - prefix.tail(m)[u]).mean(axis=0)
                sampled = max(sampled, float(np.max(np.abs(cond))))
    return {"T": T, "k": k, "first_mean": first, "max_conditional_mean": worst,
            "sampled_conditional_mean": sampled, "max_residual": residual,
            "passed": bool(max(worst, sampled) <= 1e-10 and residual <= 1e-12)}


def verify_bounds(decomp: MartingaleDecomp, f: MatrixFn, norms=tuple(NORMS), lam: float | None = None) -> dict:
    """``||Z_i||_* <= T M_*`` per norm and ``||W||_2 <= eps``.

    ``2 T M_*`` (the triangle-inequality bound over both sums in ``Y``) and,
    when ``lam`` is given, ``lambda^(T/2) F`` are reported next to them.
    """
    out = {"T": decomp.T, "norms": {}}
    ok = True
    for name in norms:
        if name not in NORMS:
            raise InvalidInput(f"unknown norm {name!r}")
        fn = NORMS[name]
        M = float(np.max(fn(f.table)))
        z = fn(decomp.Z)
        zmax = float(np.max(z))
        passed = zmax <= decomp.T * M + SLACK
        ok &= passed
        out["norms"][name] = {"max_Z": zmax, "M": M, "TM": decomp.T * M, "2TM": 2 * decomp.T * M,
                              "passed": bool(passed)}
    w2 = float(_schatten2(decomp.W))
    out["W_schatten2"] = w2
    out["W_passed"] = bool(w2 <= decomp.epsilon_target + SLACK)
    if lam is not None:
        chain = lam ** (decomp.T / 2) * f.F if decomp.k > decomp.T else 0.0
        out["W_chain"] = chain
        out["W_chain_passed"] = bool(w2 <= chain + SLACK)
        out["W_passed"] &= out["W_chain_passed"]
    out["passed"] = bool(ok and out["W_passed"])
    return out


def verify_shrink(G: ExpanderGraph, f: MatrixFn) -> dict:
    """``sum_v ||Pf(v)||_2^2 <= lambda sum_v ||f(v)||_2^2``; the lambda^2 form is reported only."""
    lhs = float(np.sum(np.abs(G.average(f.table)) ** 2))
    base = float(np.sum(np.abs(f.table) ** 2))
    lam = G.lam
    return {"lhs": lhs, "base": base, "lambda": lam, "ratio": lhs / base if base else 0.0,
            "lambda_sq_holds": bool(lhs <= lam**2 * base * (1 + 1e-12) + 1e-15),
            "passed": bool(lhs <= lam * base * (1 + 1e-12) + 1e-15)}


def decomposition_json(decomp: MartingaleDecomp) -> dict:
    return {
        "T": decomp.T,
        "k": decomp.k,
        "epsilon": decomp.epsilon_target,
        "Z_norms": {name: [float(x) for x in fn(decomp.Z)] for name, fn in NORMS.items()},
        "W_schatten2": float(_schatten2(decomp.W)),
        "residual": decomp.residual,
    }


def fit_tail_constant(G: ExpanderGraph, f: MatrixFn, k: int, epsilon: float, trials: int, rng_seed: int) -> dict:
    """Monte-Carlo tail and the implied constant c in
    ``2d exp(-c k eps^2 (1-lambda)^2 / log^2(nd))``.  Reported, never asserted.
    """
    rep = tail_mc(G, f, k, epsilon, trials, rng_seed)
    lam = G.lam
    scale = k * epsilon**2 * (1 - lam) ** 2 / math.log(G.n * f.d) ** 2 if G.n * f.d > 1 else math.nan
    c = -math.log(rep.p_hat / (2 * f.d)) / scale if rep.p_hat > 0 and scale > 0 else math.inf
    return {"p_hat": rep.p_hat, "ci_high": rep.ci_high, "lambda": lam, "implied_constant": c}
