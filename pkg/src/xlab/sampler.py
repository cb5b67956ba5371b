"""Matrix-valued functions on vertices and tail probabilities of walk averages.

Exact tails use the fact that ``sum_j f(v_j)`` only depends on how often each
vertex is visited.  :func:`walk_law` runs a dynamic program over
(visit-count vector, current vertex) states with integer walk
multiplicities, which gives the exact law of the visit-count vector for all
``n * D^(k-1)`` equally likely walks.  Tail probabilities are then ratios of
integers.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import BudgetExceeded, InvalidInput
from .expander import ExpanderGraph, make_rng, random_walks
from .linalg import as_hermitian, eigvalsh, matrix_from_json, matrix_to_json, random_hermitian

# walk averages within this distance below epsilon count as exceedances
TIE_TOL = 1e-12
ENUMERATE_BUDGET = 10**8
LAW_ROW_BUDGET = 6 * 10**7
MC_CHUNK = 8192


@dataclass(frozen=True, eq=False)
class MatrixFn:
    """Table ``v -> f(v)`` of Hermitian d x d matrices, mean zero, spectral norm <= 1."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table)
        if t.ndim != 3:
            raise InvalidInput("MatrixFn table must have shape (n, d, d)")
        t = as_hermitian(t, "f(v)")
        n = t.shape[0]
        if np.max(np.abs(t.sum(axis=0))) > 1e-10 * n:
            raise InvalidInput("MatrixFn is not mean-zero")
        object.__setattr__(self, "table", t)
        if self.M_max > 1 + 1e-10:
            raise InvalidInput(f"MatrixFn has spectral norm {self.M_max} > 1")

    @property
    def n(self) -> int:
        return self.table.shape[0]

    @property
    def d(self) -> int:
        return self.table.shape[1]

    @cached_property
    def norms(self) -> np.ndarray:
        lam = eigvalsh(self.table)
        return np.maximum(np.abs(lam[:, 0]), np.abs(lam[:, -1]))

    @cached_property
    def M_max(self) -> float:
        return float(self.norms.max())

    @cached_property
    def F(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.table) ** 2)))

    def negated(self) -> "MatrixFn":
        return MatrixFn(-self.table)

    def to_json(self) -> dict:
        return {"n": self.n, "d": self.d, "matrices": [matrix_to_json(A) for A in self.table]}

    @classmethod
    def from_json(cls, obj) -> "MatrixFn":
        try:
            mats = [matrix_from_json(m) for m in obj["matrices"]]
            n, d = int(obj["n"]), int(obj["d"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInput(f"bad MatrixFn JSON: {exc}") from exc
        if len(mats) != n or any(m.shape != (d, d) for m in mats):
            raise InvalidInput("MatrixFn JSON sizes do not match its header")
        return cls(np.stack(mats))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MatrixFn":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInput(f"cannot read MatrixFn from {path}: {exc}") from exc


def gen_mean_zero_fn(rng_seed: int, n: int, d: int) -> MatrixFn:
    """Random Hermitian table, centered and scaled so the largest norm is 1."""
    if n < 2 or d < 1:
        raise InvalidInput("gen_mean_zero_fn needs n >= 2 and d >= 1")
    H = random_hermitian(make_rng(rng_seed), d, size=n)
    H = H - H.mean(axis=0)
    lam = eigvalsh(H)
    top = np.max(np.maximum(np.abs(lam[:, 0]), np.abs(lam[:, -1])))
    if top == 0:
        raise InvalidInput("degenerate draw: every f(v) vanished")
    return MatrixFn(H / top)


def empirical_mean(f: MatrixFn, walk) -> np.ndarray:
    """``(1/k) sum_j f(v_j)`` along a walk."""
    walk = np.asarray(walk, dtype=np.int64)
    if walk.ndim != 1 or len(walk) == 0:
        raise InvalidInput("walk must be a non-empty 1-d sequence")
    if walk.min() < 0 or walk.max() >= f.n:
        raise InvalidInput("walk visits a vertex outside the function's domain")
    return f.table[walk].sum(axis=0) / len(walk)


def bound_main(d: int, lam: float, k: int, epsilon: float, chain: bool = False) -> float:
    """``d^(2 - pi/4) exp(-eps^2 (1 - lam) k / 80)``.

    ``chain=True`` uses 72 in place of 80, the constant reached at the end of
    the proof's explicit chain of estimates.
    """
    if d < 1 or k < 1:
        raise InvalidInput("bound_main needs d >= 1 and k >= 1")
    if not 0 <= lam <= 1:
        raise InvalidInput("lambda must lie in [0, 1]")
    if not 0 < epsilon <= 1:
        raise InvalidInput("epsilon must lie in (0, 1]")
    return _bound(d, lam, k, epsilon, 72.0 if chain else 80.0)


def _bound(d, lam, k, epsilon, const=80.0):
    return d ** (2 - np.pi / 4) * math.exp(-(epsilon**2) * (1 - lam) * k / const)


def bound_iid(d: int, k: int, epsilon: float) -> float:
    """Two-sided matrix Hoeffding bound for independent samples: ``2d exp(-k eps^2 / 8)``."""
    return 2 * d * math.exp(-k * epsilon**2 / 8)


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials <= 0:
        raise InvalidInput("Wilson interval needs at least one trial")
    z = float(norm.ppf(0.5 + confidence / 2))
    p = successes / trials
    z2n = z * z / trials
    center = (p + z2n / 2) / (1 + z2n)
    half = z / (1 + z2n) * math.sqrt(p * (1 - p) / trials + z2n / (4 * trials))
    return max(0.0, min(p, center - half)), min(1.0, max(p, center + half))


@dataclass
class TailReport:
    k: int
    epsilon: float
    trials: int
    p_hat: float
    ci_low: float
    ci_high: float
    bound: float
    satisfied: bool
    lam: float
    d: int
    n: int
    side: str = "max"
    exceed: int = 0
    total: int = 0

    CSV_FIELDS = ("k", "epsilon", "p_hat", "ci_low", "ci_high", "bound", "lambda", "d", "n", "trials", "satisfied")

    def to_json(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    def csv_row(self) -> dict:
        js = self.to_json()
        return {key: js[key] for key in self.CSV_FIELDS}


def _side_values(f: MatrixFn, sums: np.ndarray, k: int, side: str) -> np.ndarray:
    # largest eigenvalue of the walk average, or of its negation for the lower tail
    if f.d == 1:
        vals = sums[..., 0, 0].real
    else:
        lam = eigvalsh(sums)
        vals = lam[..., -1] if side == "max" else -lam[..., 0]
    if side == "min" and f.d == 1:
        vals = -vals
    return vals / k


def _check_side(side):
    if side not in ("max", "min"):
        raise InvalidInput("side must be 'max' or 'min'")


def _report_bound(f, lam, k, epsilon):
    return _bound(f.d, lam, k, epsilon) if epsilon > 0 else float("inf")


def tail_mc(G: ExpanderGraph, f: MatrixFn, k: int, epsilon: float, trials: int, rng_seed: int,
            side: str = "max", confidence: float = 0.95) -> TailReport:
    """Monte-Carlo estimate of ``P[lambda_max(mean_j f(v_j)) >= epsilon]``.

    Trials are drawn in fixed-size chunks; chunk ``c`` uses the Philox stream
    keyed by `rng_seed` jumped ``c`` times, so results do not depend on how
    chunks are scheduled.  ``side="min"`` estimates the lower tail through
    the negated function.
    """
    _check_side(side)
    if trials < 100:
        raise InvalidInput("tail_mc needs at least 100 trials")
    if k < 1:
        raise InvalidInput("k must be >= 1")
    if f.n != G.n:
        raise InvalidInput("function and graph have different vertex counts")
    hits = 0
    done = 0
    chunk = 0
    while done < trials:
        size = min(MC_CHUNK, trials - done)
        bitgen = np.random.Philox(int(rng_seed) & 0xFFFFFFFFFFFFFFFF).jumped(chunk)
        walks = random_walks(G, np.random.Generator(bitgen), k, size)
        sums = f.table[walks].sum(axis=1)
        vals = _side_values(f, sums, k, side)
        hits += int(np.count_nonzero(vals >= epsilon - TIE_TOL))
        done += size
        chunk += 1
    p = hits / trials
    lo, hi = wilson_interval(hits, trials, confidence)
    bound = _report_bound(f, G.lam, k, epsilon)
    return TailReport(k, float(epsilon), trials, p, lo, hi, bound, bool(lo <= bound), G.lam, f.d, f.n,
                      side, hits, trials)


def _pack_ok(n, k):
    return n * math.log2(k + 1) + math.log2(max(n, 2)) <= 62


@lru_cache(maxsize=16)
def walk_law(G: ExpanderGraph, k: int, budget: int = LAW_ROW_BUDGET):
    """Exact law of the visit-count vector of a stationary walk of length `k`.

    Returns ``(counts, mult, total)``: ``counts[i]`` is a visit-count vector
    (length n), ``mult[i]`` the number of the ``total = n * D^(k-1)`` equally
    likely adjacency-slot sequences that produce it.
    """
    if k < 1:
        raise InvalidInput("k must be >= 1")
    n, D = G.n, G.D
    total = n * D ** (k - 1)
    if total >= 2**62:
        raise BudgetExceeded("walk count overflows 64-bit multiplicities")
    trans = G.transitions()
    width = max(len(nb) for nb, _ in trans)
    nbr = np.zeros((n, width), dtype=np.int64)
    wts = np.zeros((n, width), dtype=np.int64)
    for v, (nb, mu) in enumerate(trans):
        nbr[v, :len(nb)] = nb
        wts[v, :len(nb)] = mu
    if _pack_ok(n, k):
        return _law_packed(n, k, nbr, wts, total, budget)
    return _law_rows(n, k, nbr, wts, total, budget)


def _law_packed(n, k, nbr, wts, total, budget):
    base = k + 1
    pw = np.array([base**i for i in range(n)], dtype=np.int64)
    vert = np.arange(n, dtype=np.int64)
    ms = pw.copy()
    mult = np.ones(n, dtype=np.int64)
    for _ in range(k - 1):
        rows = len(ms) * nbr.shape[1]
        if rows > budget:
            raise BudgetExceeded(f"walk law needs {rows} rows (budget {budget})")
        w = nbr[vert]
        mu = wts[vert] * mult[:, None]
        keep = mu > 0
        new_v = w[keep]
        new_ms = (ms[:, None] + pw[w])[keep]
        key = new_ms * n + new_v
        uniq, inv = np.unique(key, return_inverse=True)
        mult = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(mult, inv, mu[keep])
        ms, vert = np.divmod(uniq, n)
    uniq, inv = np.unique(ms, return_inverse=True)
    out_mult = np.zeros(len(uniq), dtype=np.int64)
    np.add.at(out_mult, inv, mult)
    counts = (uniq[:, None] // pw[None, :]) % base
    return counts.astype(np.int32), out_mult, total


def _law_rows(n, k, nbr, wts, total, budget):
    dtype = np.uint8 if k < 256 else np.uint16
    rows_ = np.zeros((n, n + 1), dtype=dtype)
    rows_[np.arange(n), np.arange(n)] = 1
    rows_[:, n] = np.arange(n) if n < np.iinfo(dtype).max else 0
    vert = np.arange(n, dtype=np.int64)
    mult = np.ones(n, dtype=np.int64)
    for _ in range(k - 1):
        width = nbr.shape[1]
        if len(rows_) * width > budget:
            raise BudgetExceeded(f"walk law needs {len(rows_) * width} rows (budget {budget})")
        w = nbr[vert]
        mu = wts[vert] * mult[:, None]
        keep = (mu > 0).ravel()
        new = np.repeat(rows_, width, axis=0)[keep]
        new_v = w.ravel()[keep]
        new[np.arange(len(new)), new_v] += 1
        full = np.concatenate([new[:, :n].astype(np.int64), new_v[:, None]], axis=1)
        uniq, inv = np.unique(full, axis=0, return_inverse=True)
        mult = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(mult, inv.ravel(), mu.ravel()[keep])
        vert = uniq[:, n]
        rows_ = np.zeros((len(uniq), n + 1), dtype=dtype)
        rows_[:, :n] = uniq[:, :n]
    uniq, inv = np.unique(rows_[:, :n], axis=0, return_inverse=True)
    out_mult = np.zeros(len(uniq), dtype=np.int64)
    np.add.at(out_mult, inv.ravel(), mult)
    return uniq.astype(np.int32), out_mult, total


def _enumerate_values(G, f, k, side):
    """Reference path: every adjacency-slot sequence, one at a time in blocks."""
    total = G.n * G.D ** (k - 1)
    if total > ENUMERATE_BUDGET:
        raise BudgetExceeded(f"{total} walks exceed the enumeration budget {ENUMERATE_BUDGET}")
    vals = np.empty(total)
    block = max(1, 2**20 // k)
    for start in range(0, total, block):
        idx = np.arange(start, min(total, start + block), dtype=np.int64)
        walks = np.empty((len(idx), k), dtype=np.int64)
        rest = idx.copy()
        slots = []
        for _ in range(k - 1):
            rest, s = np.divmod(rest, G.D)
            slots.append(s)
        walks[:, 0] = rest
        for j, s in enumerate(reversed(slots), start=1):
            walks[:, j] = G.adj[walks[:, j - 1], s]
        vals[idx] = _side_values(f, f.table[walks].sum(axis=1), k, side)
    return vals, np.ones(total, dtype=np.int64), total


def exact_values(G: ExpanderGraph, f: MatrixFn, k: int, side: str = "max", method: str = "law"):
    """Per-atom values of the extreme eigenvalue of the walk average, with multiplicities."""
    _check_side(side)
    if f.n != G.n:
        raise InvalidInput("function and graph have different vertex counts")
    if method == "enumerate":
        return _enumerate_values(G, f, k, side)
    if method != "law":
        raise InvalidInput(f"unknown exact method {method!r}")
    counts, mult, total = walk_law(G, k)
    n, d = f.n, f.d
    sums = (counts.astype(float) @ f.table.reshape(n, d * d)).reshape(-1, d, d)
    return _side_values(f, sums, k, side), mult, total


def tail_exact_many(G: ExpanderGraph, f: MatrixFn, k: int, epsilons, side: str = "max",
                    method: str = "law") -> list[TailReport]:
    """Exact tail probabilities for several thresholds from one pass over the walk law."""
    vals, mult, total = exact_values(G, f, k, side, method)
    reports = []
    for eps in epsilons:
        hits = int(mult[vals >= eps - TIE_TOL].sum())
        p = hits / total
        bound = _report_bound(f, G.lam, k, eps)
        reports.append(TailReport(k, float(eps), 0, p, p, p, bound, bool(p <= bound), G.lam, f.d, f.n,
                                  side, hits, total))
    return reports


def tail_exact(G: ExpanderGraph, f: MatrixFn, k: int, epsilon: float, side: str = "max",
               method: str = "law") -> TailReport:
    """Exact ``P[lambda_max(mean_j f(v_j)) >= epsilon]`` over all stationary walks."""
    return tail_exact_many(G, f, k, [epsilon], side, method)[0]
