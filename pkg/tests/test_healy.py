import itertools
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from xlab.errors import InvalidInput, NonExpander
from xlab.expander import build_complete_loops, build_cycle, build_margulis, make_rng
from xlab.healy import (
    alpha_values,
    build_transfer,
    check_healy_lemma,
    check_mgf_bound,
    final_chain,
    quadratic_form_k,
    split,
    walk_trace_expectation,
)
from xlab.sampler import MatrixFn, gen_mean_zero_fn


def zero_fn(n, d):
    return MatrixFn(np.zeros((n, d, d)))


def dense_operator(T):
    # explicit (E P~) as an (n d^2) x (n d^2) matrix
    d = T.d
    PT = np.kron(T.G.P, np.eye(d * d))
    E = scipy.linalg.block_diag(*T.blocks)
    return E @ PT


def test_zero_block_is_identity():
    table = np.zeros((3, 2, 2), dtype=complex)
    table[1] = np.diag([0.5, -0.5])
    table[2] = -table[1]
    T = build_transfer(build_complete_loops(3), MatrixFn(table), 0.3, 1.0, 0.2)
    assert T.blocks.shape == (3, 4, 4)
    assert np.allclose(T.blocks[0], np.eye(4))
    assert not np.allclose(T.blocks[1], np.eye(4))


def test_scalar_blocks():
    f = gen_mean_zero_fn(1, 5, 1)
    t, g = 0.4, 0.7
    T = build_transfer(build_cycle(5), f, t, g, 0.9)
    assert np.allclose(T.blocks[:, 0, 0], np.exp(t * g * f.table[:, 0, 0].real), atol=1e-14)


def test_blocks_equal_exp_of_h():
    f = gen_mean_zero_fn(2, 9, 2)
    T = build_transfer(build_margulis(3), f, 0.6, 0.8, -0.6)
    for v in range(9):
        assert np.allclose(scipy.linalg.expm(T.t * T.H(v)), T.blocks[v], atol=1e-10)
    assert np.all(T.H_norms <= T.ell + 1e-12)


def test_k1_direct_average():
    G = build_cycle(5)
    f = gen_mean_zero_fn(3, 5, 3)
    t, g, b = 0.5, 0.6, 0.8
    direct = np.mean([
        np.trace(scipy.linalg.expm(t * f.table[v] * complex(g, b) / 2)
                 @ scipy.linalg.expm(t * f.table[v] * complex(g, -b) / 2)).real
        for v in range(5)
    ])
    assert math.isclose(quadratic_form_k(build_transfer(G, f, t, g, b), 1), direct, rel_tol=1e-12)


def test_zero_function_gives_d():
    T = build_transfer(build_margulis(3), zero_fn(9, 3), 0.5, 1.0, 0.0)
    for k in (1, 4, 9):
        assert math.isclose(quadratic_form_k(T, k), 3.0, rel_tol=1e-14)


def test_two_vertex_walk_expectation():
    G = build_complete_loops(2)
    f = gen_mean_zero_fn(4, 2, 2)
    t, g, b = 0.7, 0.6, -0.8
    L = [scipy.linalg.expm(t * complex(g, b) / 2 * A) for A in f.table]
    R = [scipy.linalg.expm(t * complex(g, -b) / 2 * A) for A in f.table]
    vals = []
    for walk in itertools.product(range(2), repeat=3):
        left = L[walk[0]] @ L[walk[1]] @ L[walk[2]]
        right = R[walk[2]] @ R[walk[1]] @ R[walk[0]]
        vals.append(np.trace(left @ right).real)
    q = quadratic_form_k(build_transfer(G, f, t, g, b), 3)
    assert math.isclose(q, np.mean(vals), rel_tol=1e-10)
    assert math.isclose(walk_trace_expectation(G, f, 3, t, g, b), np.mean(vals), rel_tol=1e-12)


def test_dense_operator_cross_check():
    G = build_margulis(2)
    f = gen_mean_zero_fn(5, 4, 2)
    T = build_transfer(G, f, 0.8, 0.5, 0.5)
    M = dense_operator(T)
    z0 = T.z0().reshape(-1)
    for k in (1, 2, 5):
        dense = np.vdot(z0, np.linalg.matrix_power(M, k) @ z0).real
        assert math.isclose(quadratic_form_k(T, k), dense, rel_tol=1e-12)


def test_quadratic_form_rejects_k0():
    T = build_transfer(build_cycle(5), gen_mean_zero_fn(0, 5, 2), 0.1, 1, 0)
    with pytest.raises(InvalidInput):
        quadratic_form_k(T, 0)
    with pytest.raises(InvalidInput):
        build_transfer(build_cycle(5), gen_mean_zero_fn(0, 5, 2), 0.0, 1, 0)


def test_split_examples():
    n, d = 4, 2
    w = np.arange(d * d) + 1j
    s = split(np.tile(w, n), n, d)
    assert np.allclose(s.perp, 0)
    z = np.concatenate([w, -w, 2 * w, -2 * w])
    assert np.allclose(split(z, n, d).par, 0)
    with pytest.raises(InvalidInput):
        split(np.ones(7), n, d)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 3))
def test_split_pythagoras(seed, n, d):
    rng = make_rng(seed)
    z = rng.standard_normal(n * d * d) + 1j * rng.standard_normal(n * d * d)
    s = split(z, n, d)
    assert np.allclose(s.par + s.perp, s.full, atol=1e-12)
    assert abs(np.vdot(s.par, s.perp)) <= 1e-12 * max(1, np.vdot(z, z).real)
    assert math.isclose(np.linalg.norm(z) ** 2, np.linalg.norm(s.par) ** 2 + np.linalg.norm(s.perp) ** 2,
                        rel_tol=1e-12)


def test_alpha_values():
    assert alpha_values(0, 1, 1, 0.3) == (1, 0, 0, 0.3)
    a = alpha_values(1, 1, 0, 0.5)
    assert np.allclose(a, (math.e - 1, math.e - 1, (math.e - 1) / 2, 0.5))
    assert alpha_values(0.2, 1, 1, 0)[2:] == (0, 0)
    with pytest.raises(InvalidInput):
        alpha_values(-1, 1, 1, 0.5)


def test_healy_zero_function_equality():
    T = build_transfer(build_margulis(2), zero_fn(4, 2), 0.5, 1.0, 0.0)
    rep = check_healy_lemma(T, 10, 0)
    assert rep.passed
    assert abs(rep.max_slack[0]) < 1e-12


def test_healy_complete_graph_kills_perp():
    T = build_transfer(build_complete_loops(4), gen_mean_zero_fn(1, 4, 2), 0.5, 1.0, 0.3)
    rep = check_healy_lemma(T, 50, 1)
    assert rep.passed
    assert abs(rep.max_slack[2]) < 1e-12 and abs(rep.max_slack[3]) < 1e-12


def test_healy_margulis_example():
    T = build_transfer(build_margulis(4), gen_mean_zero_fn(2, 16, 2), 0.1, 1.0, 0.5)
    rep = check_healy_lemma(T, 1000, 2)
    assert rep.passed and rep.vectors == 1003 and rep.witness is None


def test_healy_reports_witness_when_violated(monkeypatch):
    import xlab.healy as hl

    monkeypatch.setattr(hl, "alpha_values", lambda *a: (0.0, 0.0, 0.0, 0.0))
    T = build_transfer(build_cycle(5), gen_mean_zero_fn(3, 5, 2), 0.5, 1.0, 0.0)
    rep = hl.check_healy_lemma(T, 5, 0)
    assert not rep.passed
    assert set(rep.witness) == {"index", "re", "im"}


def test_mgf_zero_function():
    rep = check_mgf_bound(build_cycle(5), zero_fn(5, 2), 6, 0.1, 0.5, 0.8)
    assert math.isclose(rep.value, 2.0) and rep.satisfied


def test_mgf_independent_case_is_unconstrained():
    rep = check_mgf_bound(build_complete_loops(4), gen_mean_zero_fn(5, 4, 3), 10, 0.9, 1.0, 0.3)
    assert rep.lambda_zero and rep.satisfied


def test_mgf_preconditions():
    G = build_margulis(4)
    f = gen_mean_zero_fn(6, 16, 2)
    with pytest.raises(InvalidInput):
        check_mgf_bound(G, f, 3, 1.0, 1.0, 1.0)
    with pytest.raises(InvalidInput):
        check_mgf_bound(G, f, 3, 0.5, 1.0, 0.0)
    with pytest.raises(NonExpander):
        check_mgf_bound(build_cycle(8), gen_mean_zero_fn(6, 8, 2), 3, 0.1, 1.0, 0.0)


def test_mgf_unit_circle_grid_on_odd_cycle():
    G = build_cycle(9)
    f = gen_mean_zero_fn(7, 9, 2)
    for k in range(1, 11):
        for phi in np.linspace(-math.pi / 2, math.pi / 2, 7):
            g, b = math.cos(phi), math.sin(phi)
            t = min(1.0, (1 - G.lam) / (4 * G.lam * g)) if g > 1e-12 else 1.0
            assert check_mgf_bound(G, f, k, t, g, b).satisfied


def test_walk_expectation_budget():
    from xlab.errors import BudgetExceeded

    with pytest.raises(BudgetExceeded):
        walk_trace_expectation(build_margulis(4), gen_mean_zero_fn(0, 16, 1), 8, 0.1, 1, 0)


def test_final_chain():
    for d in (1, 2, 8):
        for lam in (0.0, 0.3, 0.9):
            for eps in (0.1, 0.5, 1.0):
                rep = final_chain(d, lam, 50, eps)
                assert rep.satisfied
                # the exponent coefficient (16/pi^2)(9/36^2) - 1/36 is below -1/72
                coef = rep.exponent / (50 * eps**2 * (1 - lam))
                assert math.isclose(coef, 16 / math.pi**2 * 9 / 36**2 - 1 / 36, rel_tol=1e-12)
    with pytest.raises(NonExpander):
        final_chain(2, 1.0, 10, 0.5)
