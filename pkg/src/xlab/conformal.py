"""Half-disk conformal map, Poisson kernel bounds and the bounded multi-matrix
Golden-Thompson inequality.

The rotation measure ``mu`` used by the inequality is the limit of the
Poisson-kernel weights ``(1/2) / (1 - cos(vphi))`` on the arcs
``pi/2 <= |vphi| <= pi``, pushed to ``[-pi/2, pi/2]`` through
``vphi -> arg h(e^{i vphi})``.  On those arcs ``h(e^{i vphi}) = sqrt(1 - c^2) - i c``
with ``c = cot(vphi/2)``, and ``c`` is uniformly distributed, so the image
measure has density ``cos(phi) / 2``.  :func:`build_mu` integrates against
that density directly ("angle" method); the literal arc quadrature is kept
as the "arc" method for cross-checking.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, InvalidInput, NumericalError
from .linalg import (
    adjoint,
    as_hermitian,
    eigh_batched,
    eigvalsh,
    matrix_exp_z,
    random_hermitian,
    singular_values,
)

LOG_FLOOR = 1e-300


def conformal_h(z):
    """Map the closed unit disk onto the right half disk.

    ``h(z) = -q + sqrt(q^2 + 1)`` with ``q = (1+z)/(1-z)``.  In the open disk
    this is the principal square root.  On the unit circle ``q^2 + 1`` lands on
    the branch cut for ``|arg z| < pi/2``; there the root continuous from the
    interior is the one with ``|h| <= 1`` (the two roots multiply to -1), and
    on ties the one with ``Re h >= 0``.
    """
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) > 1 + 1e-12):
        raise DomainError("conformal_h is defined on the closed unit disk")
    if np.any(z == 1):
        raise DomainError("conformal_h has a pole at z = 1")
    q = (1 + z) / (1 - z)
    s = np.sqrt(q * q + 1)
    h1 = -q + s
    h2 = -q - s
    a1, a2 = np.abs(h1), np.abs(h2)
    tie = np.abs(a1 - a2) <= 1e-12 * np.maximum(1.0, a1)
    pick2 = np.where(tie, h2.real > h1.real, a2 < a1)
    out = np.where(pick2, h2, h1)
    return complex(out) if out.ndim == 0 else out


def conformal_f_inv(w):
    """Inverse of :func:`conformal_h`: ``(w^2 + 2w - 1) / (w^2 - 2w - 1)``."""
    w = np.asarray(w, dtype=complex)
    den = w * w - 2 * w - 1
    if np.any(np.abs(den) < 1e-300):
        raise DomainError("conformal_f_inv denominator vanishes")
    out = (w * w + 2 * w - 1) / den
    return complex(out) if out.ndim == 0 else out


def poisson_kernel(rho, phi):
    """``(1 - rho^2) / (1 - 2 rho cos(phi) + rho^2)`` for ``0 <= rho < 1``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho >= 1):
        raise DomainError("poisson_kernel needs 0 <= rho < 1")
    out = (1 - rho**2) / (1 - 2 * rho * np.cos(phi) + rho**2)
    return float(out) if out.ndim == 0 else out


def kernel_bound_check(rho, phi):
    """Check the two-sided kernel estimate on ``rho in [0,1]``, ``cos(phi) in [-1,0]``.

    ``(1-rho)/(1-cos phi) - (1-rho)^2 <= K <= (1-rho)/(1-cos phi) + 2 (1-rho)^2``.
    At ``rho = 1`` the kernel is the boundary value 0 (for ``phi != 0``).
    Vectorized; returns a bool (array).
    """
    rho = np.asarray(rho, dtype=float)
    cphi = np.cos(np.asarray(phi, dtype=float))
    if np.any(rho < 0) or np.any(rho > 1):
        raise InvalidInput("rho must lie in [0, 1]")
    if np.any(cphi > 1e-12) or np.any(cphi < -1 - 1e-12):
        raise InvalidInput("cos(phi) must lie in [-1, 0]")
    cphi = np.clip(cphi, -1.0, 0.0)
    den = 1 - 2 * rho * cphi + rho**2
    kernel = (1 - rho) * (1 + rho) / den
    lead = (1 - rho) / (1 - cphi)
    gap = (1 - rho) ** 2
    slack = 1e-15
    ok = (lead - gap <= kernel + slack) & (kernel <= lead + 2 * gap + slack)
    return bool(ok) if ok.ndim == 0 else ok


@dataclass(frozen=True)
class MuMeasure:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.nodes.shape != self.weights.shape:
            raise InvalidInput("nodes and weights differ in length")
        if np.any(np.abs(self.nodes) > np.pi / 2 + 1e-12):
            raise InvalidInput("mu nodes must lie in [-pi/2, pi/2]")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > 1e-8:
            raise InvalidInput("mu weights must be positive and sum to 1")

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _gauss_legendre(m, a, b):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def build_mu(m: int = 128, method: str = "angle") -> MuMeasure:
    """Quadrature for the probability measure ``mu`` on ``[-pi/2, pi/2]``.

    ``m`` nodes are used on each half.  ``method="angle"`` integrates the
    density ``cos(phi)/2`` with Gauss-Legendre in ``phi``; ``method="arc"``
    places Gauss-Legendre nodes on the source arc ``[pi/2, pi]`` with density
    ``(1/2)/(1 - cos vphi)`` and maps each node through ``arg h(e^{i vphi})``.
    The arc route has a square-root endpoint singularity and converges only
    algebraically.  Weights are normalized to total mass 1.
    """
    if m < 4:
        raise InvalidInput("build_mu needs at least 4 nodes")
    if method == "angle":
        phi, w = _gauss_legendre(m, 0.0, np.pi / 2)
        w = 0.5 * np.cos(phi) * w
    elif method == "arc":
        vphi, w = _gauss_legendre(m, np.pi / 2, np.pi)
        w = 0.5 * w / (1 - np.cos(vphi))
        phi = np.angle(conformal_h(np.exp(1j * vphi)))
        phi = -phi  # the arc lands on [-pi/2, 0]; keep the [0, pi/2] half
    else:
        raise InvalidInput(f"unknown mu method {method!r}")
    nodes = np.concatenate([-phi[::-1], phi])
    weights = np.concatenate([w[::-1], w])
    # make the rule exact on constants; matters only for very small m
    return MuMeasure(nodes, weights / weights.sum())


@dataclass
class GTReport:
    lhs: float
    rhs: float
    margin: float
    quadrature_nodes: int
    integrand_min: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["nodes"] = d.pop("quadrature_nodes")
        return d


def _check_tuple(Hs):
    if len(Hs) == 0:
        raise InvalidInput("need at least one Hermitian matrix")
    Hs = [as_hermitian(H, f"H[{j}]") for j, H in enumerate(Hs)]
    d = Hs[0].shape[0]
    if any(H.shape != (d, d) for H in Hs):
        raise InvalidInput("all matrices must share one dimension")
    return Hs


def _ordered_product(Hs, z):
    G = np.eye(Hs[0].shape[0], dtype=complex)
    for H in Hs:
        G = G @ matrix_exp_z(H, z)
    return G


def gt_rhs_integrand(Hs, phi):
    """``tr[prod_j exp(e^{i phi} H_j/2) prod_{j desc} exp(e^{-i phi} H_j/2)]``.

    The value is ``tr[G G^*]`` for ``G = prod_j exp(e^{i phi} H_j / 2)``.
    `phi` may be an array, in which case one value per angle is returned.
    """
    Hs = _check_tuple(Hs)
    out = _integrand(Hs, np.atleast_1d(np.asarray(phi, dtype=float)))
    return float(out[0]) if np.ndim(phi) == 0 else out


def _integrand(Hs, phis):
    # exp(w H) = Q diag(e^{w lam}) Q^*, one decomposition per H_j for all angles
    w = np.exp(1j * phis)[:, None] / 2
    d = Hs[0].shape[0]
    left = np.broadcast_to(np.eye(d, dtype=complex), (len(phis), d, d))
    right = left
    for H in Hs:
        lam, Q = eigh_batched(H)
        Qh = adjoint(Q)
        left = left @ ((Q * np.exp(w * lam)[:, None, :]) @ Qh)
        right = ((Q * np.exp(np.conj(w) * lam)[:, None, :]) @ Qh) @ right
    tr = np.trace(left @ right, axis1=1, axis2=2)
    bad = np.abs(tr.imag) > 1e-10 * np.maximum(1.0, np.abs(tr.real))
    if np.any(bad):
        raise NumericalError(f"integrand trace has imaginary part {np.max(np.abs(tr.imag)):.3e}")
    return tr.real


def log_trace_exp(H) -> float:
    """``log tr exp(H)`` for Hermitian ``H``, computed stably from eigenvalues."""
    return float(logsumexp(eigvalsh(H)))


def gt_multi_verify(Hs, m: int = 128, mu: MuMeasure | None = None) -> GTReport:
    """Evaluate both sides of the bounded multi-matrix Golden-Thompson inequality.

    ``lhs = log tr exp(sum H_j)`` and
    ``rhs = (4/pi) * integral of log gt_rhs_integrand(Hs, phi) d mu(phi)``.
    """
    Hs = _check_tuple(Hs)
    mu = mu if mu is not None else build_mu(m)
    lhs = log_trace_exp(sum(Hs))
    vals = _integrand(Hs, mu.nodes)
    vmin = float(vals.min())
    if vmin < LOG_FLOOR:
        raise NumericalError(f"integrand {vmin:.3e} is not positive")
    rhs = 4.0 / np.pi * mu.integrate(np.log(vals))
    return GTReport(lhs, rhs, rhs - lhs, int(len(mu.nodes)), vmin)


def trotter_power(Hs, theta: float) -> float:
    """``(2/theta) log ||G(theta)||_{2/theta}`` with ``G = prod exp(theta H_j / 2)``.

    Tends to ``log tr exp(sum H_j)`` as ``theta -> 0+``.
    """
    if not 0 < theta <= 1:
        raise InvalidInput("theta must lie in (0, 1]")
    Hs = _check_tuple(Hs)
    s = singular_values(_ordered_product(Hs, theta / 2))
    if np.any(s <= 0):
        raise NumericalError("product has a vanishing singular value")
    return float(logsumexp((2.0 / theta) * np.log(s)))


def random_tuple(rng: np.random.Generator, k: int, d: int, max_norm: float = 2.0) -> list[np.ndarray]:
    """`k` random Hermitian d x d matrices, each rescaled to a spectral norm drawn from (0, max_norm]."""
    if k < 1 or d < 1:
        raise InvalidInput("need k >= 1 matrices of dimension d >= 1")
    out = []
    for H in random_hermitian(rng, d, size=k):
        top = singular_values(H)[-1]
        out.append(H * (max_norm * (1 - rng.random()) / top) if top > 0 else H)
    return out


def mu_cdf(phi):
    """Closed-form distribution function of ``mu``: ``(1 + sin phi) / 2``."""
    return 0.5 * (1 + np.sin(np.clip(phi, -np.pi / 2, np.pi / 2)))


__all__ = [
    "GTReport",
    "MuMeasure",
    "build_mu",
    "conformal_f_inv",
    "conformal_h",
    "gt_multi_verify",
    "gt_rhs_integrand",
    "kernel_bound_check",
    "log_trace_exp",
    "mu_cdf",
    "poisson_kernel",
    "random_tuple",
    "trotter_power",
]
