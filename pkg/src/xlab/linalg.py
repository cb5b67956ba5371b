"""Dense complex matrix primitives.

Everything here works on plain ``numpy`` arrays.  Hermitian inputs are
validated with :func:`as_hermitian`, which symmetrizes matrices that are
Hermitian up to roundoff and rejects the rest.  The eigensolver is a cyclic
complex Jacobi method that operates on whole stacks of matrices at once, so
that the experiment code can diagonalize millions of small matrices without a
Python-level loop per matrix.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidInput, NumericalError

HERMITIAN_TOL = 1e-12
JACOBI_TOL = 1e-13
MAX_SWEEPS = 60


class EigenDecomp(NamedTuple):
    """``A = Q @ diag(lambdas) @ Q^*`` with eigenvalues in ascending order."""

    Q: np.ndarray
    lambdas: np.ndarray


def as_matrix(A, name="matrix") -> np.ndarray:
    """Return `A` as a complex square array (or stack of them), checked finite."""
    A = np.asarray(A, dtype=complex)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2] or A.shape[-1] == 0:
        raise InvalidInput(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInput(f"{name} has non-finite entries")
    return A


def adjoint(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def as_hermitian(A, name="matrix") -> np.ndarray:
    """Validate that `A` is Hermitian to within 1e-12 and return ``(A + A^*)/2``.

    Works on a single matrix or a stack ``(..., d, d)``; the tolerance is
    applied per matrix relative to ``max(1, max|A_ij|)``.
    """
    A = as_matrix(A, name)
    H = adjoint(A)
    asym = np.max(np.abs(A - H), axis=(-1, -2))
    scale = np.maximum(1.0, np.max(np.abs(A), axis=(-1, -2)))
    if np.any(asym > HERMITIAN_TOL * scale):
        raise InvalidInput(f"{name} is not Hermitian (asymmetry {np.max(asym):.3e})")
    return 0.5 * (A + H)


def _jacobi(A: np.ndarray, want_vectors: bool):
    """Cyclic Jacobi on a stack of Hermitian matrices of shape (B, d, d).

    Each (p, q) rotation is applied to the entire stack; matrices whose pivot
    is already zero get the identity rotation.  Sweeps stop once every
    matrix has off-diagonal Frobenius mass <= JACOBI_TOL * ||A||_F.
    """
    A = A.copy()
    B, d, _ = A.shape
    V = np.broadcast_to(np.eye(d, dtype=complex), A.shape).copy() if want_vectors else None
    fro = np.sqrt(np.sum(np.abs(A) ** 2, axis=(1, 2)))
    target = JACOBI_TOL * np.maximum(fro, np.finfo(float).tiny)
    offmask = ~np.eye(d, dtype=bool)
    pairs = [(p, q) for p in range(d - 1) for q in range(p + 1, d)]
    for _ in range(MAX_SWEEPS):
        off = np.sqrt(np.sum(np.abs(A[:, offmask]) ** 2, axis=1))
        if np.all(off <= target):
            break
        for p, q in pairs:
            apq = A[:, p, q]
            r = np.abs(apq)
            active = r > 0
            if not np.any(active):
                continue
            rs = np.where(active, r, 1.0)
            tau = (A[:, q, q].real - A[:, p, p].real) / (2.0 * rs)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = np.where(active, t * c, 0.0)
            c = np.where(active, c, 1.0)
            ph = np.where(active, apq / rs, 1.0)
            cph = np.conj(ph)

            cs, ss = c[:, None], s[:, None]
            colp = A[:, :, p].copy()
            colq = A[:, :, q]
            A[:, :, p] = cs * colp - (ss * cph[:, None]) * colq
            A[:, :, q] = ss * colp + (cs * cph[:, None]) * colq
            rowp = A[:, p, :].copy()
            rowq = A[:, q, :]
            A[:, p, :] = cs * rowp - (ss * ph[:, None]) * rowq
            A[:, q, :] = ss * rowp + (cs * ph[:, None]) * rowq
            A[:, p, q] = 0.0
            A[:, q, p] = 0.0
            if want_vectors:
                vp = V[:, :, p].copy()
                vq = V[:, :, q]
                V[:, :, p] = cs * vp - (ss * cph[:, None]) * vq
                V[:, :, q] = ss * vp + (cs * cph[:, None]) * vq
    else:
        raise NumericalError(f"Jacobi failed to converge in {MAX_SWEEPS} sweeps")
    return np.real(np.diagonal(A, axis1=1, axis2=2)).copy(), V


def _stacked(A):
    lead = A.shape[:-2]
    d = A.shape[-1]
    return A.reshape((-1, d, d)), lead


def eigh_batched(A, want_vectors: bool = True):
    """Eigen-decompose a Hermitian matrix or stack; eigenvalues ascending."""
    A = as_hermitian(A)
    flat, lead = _stacked(A)
    d = flat.shape[-1]
    if flat.shape[0] == 0:
        lam = np.zeros((0, d))
        V = np.zeros((0, d, d), dtype=complex)
    elif d == 1:
        lam = flat[:, :, 0].real.copy()
        V = np.ones_like(flat)
    else:
        lam, V = _jacobi(flat, want_vectors)
        order = np.argsort(lam, axis=1)
        lam = np.take_along_axis(lam, order, axis=1)
        if want_vectors:
            V = np.take_along_axis(V, order[:, None, :], axis=2)
    lam = lam.reshape(lead + (d,))
    if want_vectors:
        V = V.reshape(lead + (d, d))
    return lam, V


def hermitian_eig(A) -> EigenDecomp:
    """Unitary eigendecomposition of a single Hermitian matrix."""
    A = np.asarray(A)
    if A.ndim != 2:
        raise InvalidInput("hermitian_eig expects a single matrix")
    lam, Q = eigh_batched(A)
    return EigenDecomp(Q, lam)


def eigvalsh(A) -> np.ndarray:
    """Ascending eigenvalues of a Hermitian matrix or stack of matrices."""
    return eigh_batched(A, want_vectors=False)[0]


def lambda_max(A) -> np.ndarray:
    return eigvalsh(A)[..., -1]


def spectral_apply(A, fn) -> np.ndarray:
    """Return ``Q fn(lambda) Q^*`` for Hermitian `A` (single or stacked)."""
    lam, Q = eigh_batched(A)
    vals = fn(lam)
    return (Q * vals[..., None, :]) @ adjoint(Q)


def matrix_exp_z(A, z: complex = 1.0) -> np.ndarray:
    """``exp(z A)`` for Hermitian `A` and any complex scalar `z`."""
    z = complex(z)
    return spectral_apply(A, lambda lam: np.exp(z * lam))


def matrix_log(A) -> np.ndarray:
    """Principal logarithm of a Hermitian positive definite matrix."""
    lam, Q = eigh_batched(A)
    if np.any(lam <= 0):
        raise InvalidInput("matrix_log needs a positive definite matrix")
    return (Q * np.log(lam)[..., None, :]) @ adjoint(Q)


def singular_values(A) -> np.ndarray:
    """Singular values (ascending) as square roots of the eigenvalues of A^*A."""
    A = as_matrix(A)
    # rescale first so that the Gram matrix cannot overflow or underflow
    scale = np.max(np.abs(A), axis=(-1, -2), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    B = A / scale
    gram = adjoint(B) @ B
    lam = eigvalsh(0.5 * (gram + adjoint(gram)))
    return np.sqrt(np.clip(lam, 0.0, None)) * scale[..., 0]


def schatten_norm(A, p=2) -> float:
    """Schatten p-norm for ``p >= 1`` or ``p = inf``."""
    if p != np.inf and not p >= 1:
        raise InvalidInput(f"Schatten exponent must be >= 1 or inf, got {p}")
    s = singular_values(A)
    if p == np.inf:
        return float(s[..., -1]) if s.ndim == 1 else s[..., -1]
    top = s[..., -1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.where(top > 0, s / np.where(top > 0, top, 1.0), 0.0)
    out = top[..., 0] * np.sum(scaled**p, axis=-1) ** (1.0 / p)
    return float(out) if np.ndim(out) == 0 else out


def spectral_norm(A) -> float:
    return schatten_norm(A, np.inf)


def kron(A, B) -> np.ndarray:
    """Kronecker product; entry ((i,k),(j,l)) equals A[i,j] * B[k,l]."""
    return np.kron(np.asarray(A, dtype=complex), np.asarray(B, dtype=complex))


def vec_embed(X) -> np.ndarray:
    """Row-major vectorization: ``vec(X) = sum_ij X[i,j] e_i (x) e_j``."""
    X = as_matrix(X)
    return X.reshape(X.shape[:-2] + (-1,))


def unvec(x, d: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if d is None:
        d = int(round(np.sqrt(x.shape[-1])))
    if d * d != x.shape[-1]:
        raise InvalidInput(f"vector of length {x.shape[-1]} is not a d^2 embedding")
    return x.reshape(x.shape[:-1] + (d, d))


def inner_vecI(A, B, check: bool = False) -> complex:
    """``tr[A B^T]``, i.e. ``<vec(I), (A (x) B) vec(I)>``.

    With ``check=True`` the Kronecker route is evaluated as well and the two
    results must agree to 1e-12 (relative).
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape != B.shape:
        raise InvalidInput(f"dimension mismatch {A.shape} vs {B.shape}")
    direct = complex(np.trace(A @ B.T))
    if check:
        vI = vec_embed(np.eye(A.shape[0]))
        via = complex(np.vdot(vI, kron(A, B) @ vI))
        if abs(via - direct) > 1e-12 * max(1.0, abs(direct)):
            raise NumericalError(f"vec identity mismatch: {direct} vs {via}")
    return direct


def dilate(M) -> np.ndarray:
    """Hermitian dilation ``[[0, M], [M^*, 0]]``."""
    M = as_matrix(M)
    d = M.shape[0]
    out = np.zeros((2 * d, 2 * d), dtype=complex)
    out[:d, d:] = M
    out[d:, :d] = adjoint(M)
    return out


def random_hermitian(rng: np.random.Generator, d: int, size=None) -> np.ndarray:
    """Hermitian matrices with standard complex off-diagonal and real diagonal entries."""
    shape = () if size is None else tuple(int(x) for x in np.atleast_1d(size))
    X = rng.standard_normal(shape + (d, d)) + 1j * rng.standard_normal(shape + (d, d))
    H = (X + adjoint(X)) / 2.0
    return H


def matrix_to_json(A) -> dict:
    A = as_matrix(A)
    return {"d": int(A.shape[0]), "re": A.real.tolist(), "im": A.imag.tolist()}


def matrix_from_json(obj) -> np.ndarray:
    try:
        d = int(obj["d"])
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj.get("im", np.zeros((d, d))), dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"bad matrix JSON: {exc}") from exc
    if re.shape != (d, d) or im.shape != (d, d):
        raise InvalidInput(f"matrix JSON declares d={d} but has shapes {re.shape} and {im.shape}")
    return as_matrix(re + 1j * im)
