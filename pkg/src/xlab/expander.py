"""Regular multigraphs, explicit expander families and walk samplers.

Random walks use numpy's Philox4x64 counter-based generator keyed by the
64-bit seed, so a (graph, seed, k) triple always yields the same walk.
Uniform draws go through ``Generator.integers``, which is unbiased.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidInput, UnsupportedGraph

DENSE_LIMIT = 2048


def make_rng(seed: int) -> np.random.Generator:
    """The package's deterministic generator: Philox keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True, eq=False)
class ExpanderGraph:
    """D-regular undirected multigraph given by ordered adjacency lists.

    ``adj[v, s]`` is the neighbor in slot ``s`` of vertex ``v``.  Self-loops
    occupy one slot.  The multigraph must be symmetric: ``v`` appears in
    ``adj[u]`` exactly as often as ``u`` appears in ``adj[v]``.
    """

    adj: np.ndarray
    name: str = "graph"

    def __post_init__(self):
        adj = np.asarray(self.adj)
        if adj.ndim != 2 or adj.shape[0] == 0 or adj.shape[1] == 0:
            raise InvalidInput("adjacency must be a non-empty n x D table")
        if not np.issubdtype(adj.dtype, np.integer):
            raise InvalidInput("adjacency entries must be integers")
        n = adj.shape[0]
        if adj.min() < 0 or adj.max() >= n:
            raise InvalidInput("adjacency entry out of range")
        counts = self._count_matrix(adj)
        if not np.array_equal(counts, counts.T):
            raise InvalidInput("multigraph is not symmetric")
        adj = adj.astype(np.int64)
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @staticmethod
    def _count_matrix(adj):
        n = adj.shape[0]
        counts = np.zeros((n, n), dtype=np.int64)
        np.add.at(counts, (np.repeat(np.arange(n), adj.shape[1]), adj.ravel()), 1)
        return counts

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def D(self) -> int:
        return self.adj.shape[1]

    @cached_property
    def counts(self) -> np.ndarray:
        """Edge multiplicities: ``counts[u, v]`` = slots of ``u`` pointing to ``v``."""
        return self._count_matrix(self.adj)

    @cached_property
    def P(self) -> np.ndarray:
        """Normalized adjacency matrix ``A / D``."""
        return self.counts / self.D

    def transitions(self):
        """Merged transitions: per vertex, distinct neighbors and their multiplicities."""
        out = []
        for v in range(self.n):
            nbrs, mult = np.unique(self.adj[v], return_counts=True)
            out.append((nbrs, mult))
        return out

    def average(self, values: np.ndarray) -> np.ndarray:
        """Apply P to a table indexed by vertex along axis 0: ``(Pg)(v) = mean_s g(adj[v,s])``."""
        return values[self.adj].mean(axis=1)

    @cached_property
    def lam(self) -> float:
        """Spectral expansion, computed once on first access."""
        return second_eigenvalue(self)

    @property
    def lambda_cached(self) -> float | None:
        return self.__dict__.get("lam")

    def to_text(self) -> str:
        lines = [f"{self.n} {self.D}"]
        lines += [" ".join(str(int(x)) for x in row) for row in self.adj]
        return "\n".join(lines) + "\n"


def build_complete_loops(n: int) -> ExpanderGraph:
    """Complete graph with a self-loop at every vertex (``P = J/n``)."""
    if n < 1:
        raise InvalidInput("complete graph needs n >= 1")
    adj = np.tile(np.arange(n), (n, 1))
    return ExpanderGraph(adj, name=f"complete:{n}")


def build_cycle(n: int) -> ExpanderGraph:
    if n < 3:
        raise InvalidInput("cycle needs n >= 3")
    v = np.arange(n)
    adj = np.sort(np.stack([(v - 1) % n, (v + 1) % n], axis=1), axis=1)
    return ExpanderGraph(adj, name=f"cycle:{n}")


def build_margulis(m: int) -> ExpanderGraph:
    """Margulis-Gabber-Galil graph on Z_m x Z_m, degree 8, vertex ``(x, y) -> x*m + y``.

    Neighbor slots of (x, y), in order: (x+y, y), (x-y, y), (x+y+1, y),
    (x-y-1, y), (x, y+x), (x, y-x), (x, y+x+1), (x, y-x-1), all mod m.
    """
    if m < 2:
        raise InvalidInput("margulis needs m >= 2")
    x, y = np.divmod(np.arange(m * m), m)
    nb = [
        (x + y, y), (x - y, y), (x + y + 1, y), (x - y - 1, y),
        (x, y + x), (x, y - x), (x, y + x + 1), (x, y - x - 1),
    ]
    adj = np.stack([(a % m) * m + (b % m) for a, b in nb], axis=1)
    return ExpanderGraph(adj, name=f"margulis:{m}")


def second_eigenvalue(G: ExpanderGraph, tol: float = 1e-10) -> float:
    """``max ||P x|| / ||x||`` over ``x`` orthogonal to the all-ones vector.

    ``P`` commutes with ``J/n`` for regular graphs, so this is the largest
    absolute eigenvalue of ``P - J/n``.  Dense symmetric eigensolver up to
    ``n = 2048``; beyond that, power iteration on the deflated operator.
    """
    n = G.n
    if n == 1:
        return 0.0
    if n <= DENSE_LIMIT:
        M = G.P - 1.0 / n
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        lam = float(np.max(np.abs(ev)))
    else:
        lam = _power_lambda(G, tol)
    # snap roundoff at the ends so bipartite graphs report exactly 1
    if lam > 1 - 1e-12:
        return 1.0
    return lam if lam > 1e-12 else 0.0


def _power_lambda(G: ExpanderGraph, tol: float) -> float:
    # iterate the square of the deflated operator so +lambda and -lambda do not alternate
    x = make_rng(0).standard_normal(G.n)
    x -= x.mean()
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(100000):
        y = G.average(G.average(x))
        y -= y.mean()
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        new = math.sqrt(float(np.dot(x, y)))
        x = y / nrm
        if abs(new - est) <= tol * max(new, 1e-300):
            return new
        est = new
    return est


def parse_graph(spec: str) -> ExpanderGraph:
    """Build a graph from ``complete:N``, ``cycle:N``, ``margulis:M`` or a file path."""
    builders = {"complete": build_complete_loops, "cycle": build_cycle, "margulis": build_margulis}
    name, _, arg = spec.partition(":")
    if name in builders and arg:
        try:
            size = int(arg)
        except ValueError as exc:
            raise InvalidInput(f"bad graph size in {spec!r}") from exc
        return builders[name](size)
    path = Path(spec)
    if not path.exists():
        raise InvalidInput(f"unknown graph spec {spec!r}")
    return read_graph(path)


def read_graph(path) -> ExpanderGraph:
    text = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in text if ln.strip()]
    try:
        n, D = int(rows[0][0]), int(rows[0][1])
        adj = np.array([[int(t) for t in r] for r in rows[1:]], dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise InvalidInput(f"malformed graph file {path}: {exc}") from exc
    if adj.shape != (n, D):
        raise InvalidInput(f"graph file declares {n}x{D} but has {adj.shape}")
    return ExpanderGraph(adj, name=str(path))


def write_graph(G: ExpanderGraph, path) -> None:
    Path(path).write_text(G.to_text())


def _log2_exact(x: int) -> int | None:
    return x.bit_length() - 1 if x > 0 and x & (x - 1) == 0 else None


def seed_length(n: int, D: int, k: int) -> int:
    """``r = ceil(log2 n) + (k-1) ceil(log2 D)``."""
    if k < 1:
        raise InvalidInput("walk length must be >= 1")
    return math.ceil(math.log2(n)) + (k - 1) * math.ceil(math.log2(D))


def _bits(seed) -> list[int]:
    if isinstance(seed, str):
        if set(seed) - {"0", "1"}:
            raise InvalidInput("seed string must contain only 0 and 1")
        return [int(c) for c in seed]
    out = [int(b) for b in seed]
    if any(b not in (0, 1) for b in out):
        raise InvalidInput("seed bits must be 0 or 1")
    return out


def seeded_walk(G: ExpanderGraph, seed, k: int) -> np.ndarray:
    """Deterministic walk read off a bit string, big-endian.

    The first ``log2 n`` bits pick the start vertex; each following group of
    ``log2 D`` bits picks an adjacency slot of the current vertex.
    """
    bn, bd = _log2_exact(G.n), _log2_exact(G.D)
    if bn is None or bd is None:
        raise UnsupportedGraph(f"seeded walks need power-of-two n and D, got n={G.n}, D={G.D}")
    bits = _bits(seed)
    r = seed_length(G.n, G.D, k)
    if len(bits) != r:
        raise InvalidInput(f"seed must have {r} bits, got {len(bits)}")

    def take(lo, width):
        val = 0
        for b in bits[lo:lo + width]:
            val = 2 * val + b
        return val

    walk = np.empty(k, dtype=np.int64)
    walk[0] = take(0, bn)
    pos = bn
    for j in range(1, k):
        walk[j] = G.adj[walk[j - 1], take(pos, bd)]
        pos += bd
    return walk


def random_walk(G: ExpanderGraph, rng_seed: int, k: int) -> np.ndarray:
    """Stationary walk of length `k` from the generator keyed by `rng_seed`."""
    return random_walks(G, make_rng(rng_seed), k, 1)[0]


def random_walks(G: ExpanderGraph, rng: np.random.Generator, k: int, count: int) -> np.ndarray:
    """`count` independent stationary walks as an array of shape (count, k)."""
    if k < 1:
        raise InvalidInput("walk length must be >= 1")
    walks = np.empty((count, k), dtype=np.int64)
    walks[:, 0] = rng.integers(G.n, size=count)
    if k > 1:
        slots = rng.integers(G.D, size=(count, k - 1))
        for j in range(1, k):
            walks[:, j] = G.adj[walks[:, j - 1], slots[:, j - 1]]
    return walks


def is_walk(G: ExpanderGraph, walk) -> bool:
    walk = np.asarray(walk)
    return all(walk[j + 1] in G.adj[walk[j]] for j in range(len(walk) - 1))
