"""Tensorized transfer operator and the MGF recursion behind the expander bound.

Vectors in ``C^{n d^2}`` are stored as ``(n, d, d)`` arrays: block ``v`` is
the row-major vectorization of a d x d matrix ``X_v``.  With
``A_v = exp(t (gamma + i b) f(v) / 2)`` the vertex block is
``M_v = A_v (x) conj(A_v)``, which acts on ``vec(X)`` as ``vec(A_v X A_v^*)``.
The second factor equals ``exp(t (gamma - i b) f(v)^T / 2)``; the transpose
is what makes ``<vec I, (A (x) B) vec I> = tr[A B^T]`` reproduce the
two-sided trace product for complex Hermitian f.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .errors import BudgetExceeded, InvalidInput, NonExpander, NumericalError
from .expander import ExpanderGraph, make_rng
from .linalg import adjoint, eigh_batched, kron, singular_values
from .sampler import MatrixFn, bound_main

SLACK = 1e-9
WALK_BUDGET = 10**6
LAMBDA_ZERO = 1e-12


def _exp_stack(table, z):
    lam, Q = eigh_batched(table)
    return (Q * np.exp(z * lam)[..., None, :]) @ adjoint(Q)


@dataclass(frozen=True, eq=False)
class TransferOperator:
    G: ExpanderGraph
    f: MatrixFn
    t: float
    gamma: float
    b: float
    A: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.G.n

    @property
    def d(self) -> int:
        return self.f.d

    @property
    def ell(self) -> float:
        return math.hypot(self.gamma, self.b)

    @cached_property
    def blocks(self) -> np.ndarray:
        """The n matrices ``M_v`` of size d^2 (materialized on demand)."""
        return np.stack([kron(a, np.conj(a)) for a in self.A])

    def H(self, v: int) -> np.ndarray:
        """``H_v = (gamma+ib)/2 f(v) (x) I + I (x) (gamma-ib)/2 conj(f(v))``."""
        fv = self.f.table[v]
        eye = np.eye(self.d)
        z = complex(self.gamma, self.b) / 2
        return z * kron(fv, eye) + np.conj(z) * kron(eye, np.conj(fv))

    @cached_property
    def H_norms(self) -> np.ndarray:
        return np.array([singular_values(self.H(v))[-1] for v in range(self.n)])

    def apply(self, z: np.ndarray) -> np.ndarray:
        """``z -> E (P~ z)`` on one vector ``(n, d, d)`` or a batch ``(B, n, d, d)``."""
        avg = z[..., self.G.adj, :, :].mean(axis=-3)
        return self.A @ avg @ adjoint(self.A)

    def z0(self) -> np.ndarray:
        return np.broadcast_to(np.eye(self.d, dtype=complex), (self.n, self.d, self.d)) / math.sqrt(self.n)


def build_transfer(G: ExpanderGraph, f: MatrixFn, t: float, gamma: float, b: float,
                   check: bool = True) -> TransferOperator:
    if not t > 0:
        raise InvalidInput("t must be positive")
    if f.n != G.n:
        raise InvalidInput("function and graph have different vertex counts")
    A = _exp_stack(f.table, t * complex(gamma, b) / 2)
    T = TransferOperator(G, f, float(t), float(gamma), float(b), A)
    if check:
        if np.any(T.H_norms > T.ell * (1 + 1e-12) + 1e-12):
            raise NumericalError(f"||H_v|| = {T.H_norms.max()} exceeds ell = {T.ell}")
        block_norm = singular_values(A)[:, -1] ** 2
        if np.any(block_norm > math.exp(abs(gamma) * t) + 1e-8):
            raise NumericalError("||M_v|| exceeds exp(|gamma| t)")
    return T


def quadratic_form_k(T: TransferOperator, k: int, trajectory: bool = False):
    """``<z0, (E P~)^k z0>`` with ``z0 = n^{-1/2} 1 (x) vec(I)``.

    With ``trajectory=True`` also returns the list ``[z_0, ..., z_k]``.
    """
    if k < 1:
        raise InvalidInput("k must be >= 1")
    z = T.z0()
    zs = [z]
    for _ in range(k):
        z = T.apply(z)
        zs.append(z)
    val = complex(np.vdot(zs[0], z))
    if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
        raise NumericalError(f"quadratic form has imaginary part {val.imag:.3e}")
    if val.real < -1e-9:
        raise NumericalError(f"quadratic form is negative: {val.real:.3e}")
    return (val.real, zs) if trajectory else val.real


@dataclass
class SplitVector:
    full: np.ndarray
    par: np.ndarray
    perp: np.ndarray


def _split_blocks(z):
    # z: (..., n, d, d); the parallel part repeats the block average
    par = np.broadcast_to(z.mean(axis=-3, keepdims=True), z.shape)
    return par, z - par


def split(z, n: int, d: int) -> SplitVector:
    """Split a flat vector of length ``n d^2`` into ``1 (x) w`` and its complement."""
    z = np.asarray(z, dtype=complex)
    if z.shape != (n * d * d,):
        raise InvalidInput(f"expected a vector of length {n * d * d}, got shape {z.shape}")
    par, perp = _split_blocks(z.reshape(n, d, d))
    return SplitVector(z, par.reshape(-1).copy(), perp.reshape(-1))


def alpha_values(t: float, ell: float, gamma: float, lam: float):
    if t < 0 or ell < 0 or gamma < 0:
        raise InvalidInput("t, ell and gamma must be nonnegative")
    if not 0 <= lam <= 1:
        raise InvalidInput("lambda must lie in [0, 1]")
    e = math.exp(t * ell)
    return e - t * ell, e - 1, lam * (e - 1), lam * math.exp(t * gamma)


def _norms(z):
    return np.sqrt(np.sum(np.abs(z) ** 2, axis=(-1, -2, -3)))


def _params(T):
    return {"graph": T.G.name, "n": T.n, "d": T.d, "t": T.t, "gamma": T.gamma, "b": T.b,
            "ell": T.ell, "lambda": T.G.lam}


@dataclass
class HealyReport:
    params: dict
    vectors: int
    max_slack: list
    passed: bool
    witness: dict | None = None

    def to_json(self) -> dict:
        return asdict(self)


def check_healy_lemma(T: TransferOperator, trials: int, rng_seed: int) -> HealyReport:
    """Test the four block inequalities of the lemma on random and structured vectors.

    Slack is ``lhs - rhs``; an inequality fails when its slack exceeds 1e-9.
    """
    if T.gamma < 0:
        raise InvalidInput("gamma must be nonnegative")
    n, d = T.n, T.d
    rng = make_rng(rng_seed)
    shape = (trials, n, d, d)
    Z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    w = rng.standard_normal((1, 1, d, d)) + 1j * rng.standard_normal((1, 1, d, d))
    par_only = np.broadcast_to(w, (1, n, d, d))
    _, perp_only = _split_blocks(rng.standard_normal((1, n, d, d)) + 1j * rng.standard_normal((1, n, d, d)))
    Z = np.concatenate([T.z0()[None], par_only, perp_only, Z])
    par, perp = _split_blocks(Z)
    a1, a2, a3, a4 = alpha_values(T.t, T.ell, T.gamma, T.G.lam)
    ip, iq = _split_blocks(T.apply(par))
    jp, jq = _split_blocks(T.apply(perp))
    np_, nq = _norms(par), _norms(perp)
    slack = np.stack([
        _norms(ip) - a1 * np_,
        _norms(iq) - a2 * np_,
        _norms(jp) - a3 * nq,
        _norms(jq) - a4 * nq,
    ])
    worst = slack.max(axis=1)
    passed = bool(np.all(worst <= SLACK))
    witness = None
    if not passed:
        col = int(np.argmax(slack.max(axis=0)))
        witness = {"index": col, "re": Z[col].real.tolist(), "im": Z[col].imag.tolist()}
    return HealyReport(_params(T), len(Z), [float(s) for s in worst], passed, witness)


def _exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def mgf_rhs(d, lam, k, t, gamma, b) -> float:
    return d * _exp(k * t * t * (gamma * gamma + b * b) * (1 + 8 / (1 - lam)))


def check_mgf_preconditions(lam, t, gamma, b):
    if lam >= 1:
        raise NonExpander("the MGF bound needs lambda < 1")
    if not t > 0 or gamma < 0:
        raise InvalidInput("need t > 0 and gamma >= 0")
    if t * t * (gamma * gamma + b * b) > 1 + 1e-15:
        raise InvalidInput("precondition t^2 (gamma^2 + b^2) <= 1 fails")
    if lam >= LAMBDA_ZERO and t * gamma > (1 - lam) / (4 * lam):
        raise InvalidInput("precondition t gamma <= (1 - lambda) / (4 lambda) fails")


@dataclass
class MGFReport:
    params: dict
    k: int
    value: float
    rhs: float
    chain: float
    recursion_slack: float
    lambda_zero: bool
    satisfied: bool

    def to_json(self) -> dict:
        return asdict(self)


def check_mgf_bound(G: ExpanderGraph, f: MatrixFn, k: int, t: float, gamma: float, b: float) -> MGFReport:
    """Exact ``<z0, (E P~)^k z0>`` against the lemma's bound, its alpha chain and per-step claims."""
    lam = G.lam
    check_mgf_preconditions(lam, t, gamma, b)
    T = build_transfer(G, f, t, gamma, b)
    value, zs = quadratic_form_k(T, k, trajectory=True)
    a1, a2, a3, a4 = alpha_values(t, T.ell, gamma, lam)
    rate = a1 + a2 * a3 / (1 - a4) if a4 < 1 else math.inf
    chain = f.d * _exp(k * math.log(rate))
    rhs = mgf_rhs(f.d, lam, k, t, gamma, b)
    slack = -math.inf
    for prev, cur in zip(zs, zs[1:]):
        pp, pq = (_norms(x) for x in _split_blocks(prev))
        cp, cq = (_norms(x) for x in _split_blocks(cur))
        slack = max(slack, cq - (a2 * pp + a4 * pq), cp - (a1 * pp + a3 * pq))
    ok = value <= rhs * (1 + 1e-8) and value <= chain * (1 + 1e-8) and slack <= SLACK
    return MGFReport(_params(T), k, value, rhs, chain, float(slack), lam < LAMBDA_ZERO, bool(ok))


def walk_slot_sequences(G: ExpanderGraph, k: int, budget: int = WALK_BUDGET):
    """Yield blocks of all ``n D^(k-1)`` stationary walks, each equally likely."""
    total = G.n * G.D ** (k - 1)
    if total > budget:
        raise BudgetExceeded(f"{total} walks exceed the budget {budget}")
    block = max(1, 2**18 // k)
    for start in range(0, total, block):
        idx = np.arange(start, min(total, start + block), dtype=np.int64)
        slots = []
        for _ in range(k - 1):
            idx, s = np.divmod(idx, G.D)
            slots.append(s)
        walks = np.empty((len(idx), k), dtype=np.int64)
        walks[:, 0] = idx
        for j, s in enumerate(reversed(slots), start=1):
            walks[:, j] = G.adj[walks[:, j - 1], s]
        yield walks


def walk_trace_expectation(G: ExpanderGraph, f: MatrixFn, k: int, t: float, gamma: float, b: float,
                           budget: int = WALK_BUDGET) -> float:
    """Exhaustive ``E tr[prod_j exp(t f_j (g+ib)/2) prod_{j desc} exp(t f_j (g-ib)/2)]``."""
    L = _exp_stack(f.table, t * complex(gamma, b) / 2)
    R = _exp_stack(f.table, t * complex(gamma, -b) / 2)
    total = 0.0 + 0.0j
    count = 0
    for walks in walk_slot_sequences(G, k, budget):
        left = L[walks[:, 0]]
        right = R[walks[:, 0]]
        for j in range(1, k):
            left = left @ L[walks[:, j]]
            right = R[walks[:, j]] @ right
        total += np.trace(left @ right, axis1=1, axis2=2).sum()
        count += len(walks)
    return complex(total / count).real


@dataclass
class ChainReport:
    d: int
    lam: float
    k: int
    epsilon: float
    t: float
    exponent: float
    value: float
    bound72: float
    bound80: float
    satisfied: bool


def final_chain(d: int, lam: float, k: int, epsilon: float) -> ChainReport:
    """Assemble the final estimate with ``t = (1 - lambda) eps / 36``.

    The value is ``d^(2-pi/4) exp((4/pi)^2 k t^2 9/(1-lambda) - k t eps)``,
    which must not exceed the 72-constant bound (and hence the 80 one).
    """
    if lam >= 1:
        raise NonExpander("the final chain needs lambda < 1")
    t = (1 - lam) * epsilon / 36
    exponent = (4 / math.pi) ** 2 * k * t * t * 9 / (1 - lam) - k * t * epsilon
    value = d ** (2 - math.pi / 4) * math.exp(exponent)
    b72 = bound_main(d, lam, k, epsilon, chain=True)
    b80 = bound_main(d, lam, k, epsilon)
    return ChainReport(d, lam, k, epsilon, t, exponent, value, b72, b80, bool(value <= b72 <= b80))
