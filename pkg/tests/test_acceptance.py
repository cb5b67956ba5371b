"""Acceptance criteria 1 to 11.

Each ``test_criterion_NN_*`` function checks one criterion at its stated
tolerance; ``conftest.py`` prints a PASS/FAIL line per criterion at the end
of the run.  Run just this file with ``pytest tests/test_acceptance.py``.
"""
import itertools
import math
import time
from collections import Counter

import numpy as np

from xlab import conformal
from xlab.cli import main
from xlab.expander import (
    build_complete_loops,
    build_cycle,
    build_margulis,
    make_rng,
    random_walk,
    seed_length,
    seeded_walk,
)
from xlab.healy import build_transfer, check_healy_lemma, check_mgf_bound, quadratic_form_k, walk_trace_expectation
from xlab.martingale import NORMS, decompose, verify_bounds, verify_martingale_property, verify_shrink
from xlab.sampler import TIE_TOL, bound_main, gen_mean_zero_fn, tail_exact_many, tail_mc, walk_law

EPSILONS = (0.3, 0.5, 0.7, 0.9)
SEEDS = range(5)
KS = range(2, 11)


def grid_graphs():
    return [
        ("complete:2", build_complete_loops(2)),
        ("complete:4", build_complete_loops(4)),
        ("cycle:4", build_cycle(4)),
        ("cycle:8", build_cycle(8)),
        ("margulis:4", build_margulis(4)),
    ]


def fn_seed(name, d, seed):
    # distinct, reproducible generator seeds per (graph, d, seed)
    return 1000 * (sum(map(ord, name)) % 997) + 10 * d + seed


# -- 1 ---------------------------------------------------------------------

def test_criterion_01_exact_tail_below_bound():
    start = time.perf_counter()
    failures = []
    checked = 0
    for name, G in grid_graphs():
        for k in KS:
            for d in (1, 2, 3):
                for seed in SEEDS:
                    f = gen_mean_zero_fn(fn_seed(name, d, seed), G.n, d)
                    for rep in tail_exact_many(G, f, k, EPSILONS):
                        checked += 1
                        # the bound is recomputed here so the report's copy is not trusted blindly
                        if not rep.p_hat <= bound_main(d, G.lam, k, rep.epsilon):
                            failures.append((name, d, k, seed, rep.epsilon, rep.p_hat))
    elapsed = time.perf_counter() - start
    assert checked == 5 * 3 * 9 * 5 * 4
    assert not failures, failures[:10]
    assert elapsed < 600, f"criterion 1 took {elapsed:.0f} s"


# -- 2 ---------------------------------------------------------------------

def mc_instances(count=20):
    graphs = grid_graphs()
    chosen = []
    for k, d in itertools.product((4, 6, 8), (1, 2, 3)):
        for name, G in graphs:
            f = gen_mean_zero_fn(fn_seed(name, d, 0), G.n, d)
            reps = tail_exact_many(G, f, k, EPSILONS)
            moderate = [r for r in reps if 0.02 <= r.p_hat <= 0.5]
            if moderate:
                chosen.append((name, G, f, k, moderate[0]))
            if len(chosen) == count:
                return chosen
    return chosen


def test_criterion_02_monte_carlo_matches_exact():
    start = time.perf_counter()
    instances = mc_instances()
    assert len(instances) == 20
    confidence = 1 - 0.05 / 20  # Bonferroni over the 20 intervals
    misses = []
    for i, (name, G, f, k, exact) in enumerate(instances):
        rep = tail_mc(G, f, k, exact.epsilon, 100_000, rng_seed=7919 + i, confidence=confidence)
        if not rep.ci_low <= exact.p_hat <= rep.ci_high:
            misses.append((name, f.d, k, exact.epsilon, exact.p_hat, rep.ci_low, rep.ci_high))
    elapsed = time.perf_counter() - start
    assert not misses, misses
    assert elapsed < 300, f"criterion 2 took {elapsed:.0f} s"


# -- 3 ---------------------------------------------------------------------

def test_criterion_03_bounded_golden_thompson():
    start = time.perf_counter()
    rng = make_rng(20240611)
    mu128, mu256 = conformal.build_mu(128), conformal.build_mu(256)
    worst_margin, worst_drift = math.inf, 0.0
    for _ in range(500):
        k = int(rng.integers(1, 7))
        d = int(rng.integers(1, 7))
        Hs = conformal.random_tuple(rng, k, d, max_norm=2.0)
        assert max(np.linalg.norm(H, 2) for H in Hs) <= 2 + 1e-12
        coarse = conformal.gt_multi_verify(Hs, mu=mu128)
        fine = conformal.gt_multi_verify(Hs, mu=mu256)
        worst_margin = min(worst_margin, coarse.margin)
        worst_drift = max(worst_drift, abs(coarse.margin - fine.margin))
    elapsed = time.perf_counter() - start
    assert worst_margin >= -1e-6
    assert worst_drift <= 1e-6
    assert elapsed < 300


# -- 4 ---------------------------------------------------------------------

def test_criterion_04_conformal_suite():
    # boundary angles at half-steps, so phi = 0 (the pole z = 1) is never hit
    phi = -np.pi + 2 * np.pi * (np.arange(10_000) + 0.5) / 10_000
    w = conformal.conformal_h(np.exp(1j * phi))
    inner = np.abs(phi) <= np.pi / 2
    assert np.all(np.abs(w[inner].real) <= 1e-9)
    assert np.all(np.abs(w[inner]) <= 1 + 1e-9)
    assert np.all(np.abs(np.abs(w[~inner]) - 1) <= 1e-9)

    r = np.linspace(0, 1, 42)
    theta = np.linspace(-np.pi, np.pi, 26)[:-1]
    z = (r[:, None] * np.exp(1j * theta[None, :])).ravel()
    z = np.unique(np.round(z, 15))
    z = z[np.abs(z - 1) > 1e-6]
    assert len(z) >= 1000
    back = conformal.conformal_f_inv(conformal.conformal_h(z))
    assert np.max(np.abs(back - z)) <= 1e-8

    rho = np.round(np.arange(101) * 0.01, 12)
    cphi = np.round(-np.arange(101) * 0.01, 12)
    R, C = np.meshgrid(rho, cphi)
    assert np.all(conformal.kernel_bound_check(R, np.arccos(C)))


# -- 5 ---------------------------------------------------------------------

def healy_points():
    graphs = [build_margulis(2), build_margulis(3), build_margulis(4), build_cycle(5), build_cycle(9),
              build_complete_loops(4), build_cycle(4)]
    rng = make_rng(55)
    points = []
    for i in range(20):
        G = graphs[i % len(graphs)]
        d = 1 + i % 3
        f = gen_mean_zero_fn(300 + i, G.n, d)
        ell = float(rng.uniform(0.2, 3.0))
        phi = float(rng.uniform(0, np.pi / 2))
        gamma, b = ell * math.cos(phi), ell * math.sin(phi) * (1 if i % 2 else -1)
        t = float(rng.uniform(0.05, 1.0)) / ell
        points.append((G, f, t, gamma, b))
    return points


def test_criterion_05_healy_inequalities():
    for i, (G, f, t, gamma, b) in enumerate(healy_points()):
        T = build_transfer(G, f, t, gamma, b)
        assert T.t * T.ell <= 1 + 1e-12
        rep = check_healy_lemma(T, 1000, rng_seed=i)
        assert rep.vectors >= 1000
        assert rep.passed, (i, rep.max_slack)
        assert max(rep.max_slack) <= 1e-9


# -- 6 ---------------------------------------------------------------------

def test_criterion_06_mgf_bound():
    graphs = [(build_margulis(2), 2), (build_margulis(3), 3), (build_margulis(4), 2), (build_cycle(5), 1),
              (build_cycle(9), 3), (build_complete_loops(4), 2)]
    angles = (-np.pi / 2, -np.pi / 4, 0.0, np.pi / 3)
    points = 0
    for gi, (G, d) in enumerate(graphs):
        f = gen_mean_zero_fn(600 + gi, G.n, d)
        for k in range(1, 11):
            for phi in angles:
                gamma, b = math.cos(phi), math.sin(phi)
                gamma = 0.0 if abs(gamma) < 1e-15 else gamma
                t = 1.0
                if G.lam > 1e-12 and gamma > 0:
                    # a hair inside the boundary so rounding cannot push t gamma over it
                    t = min(t, (1 - G.lam) / (4 * G.lam * gamma) * (1 - 1e-12))
                rep = check_mgf_bound(G, f, k, t, gamma, b)
                assert rep.value <= rep.rhs * (1 + 1e-8), (gi, k, phi, rep.value, rep.rhs)
                assert rep.satisfied
                points += 1
    assert points >= 200


# -- 7 ---------------------------------------------------------------------

def test_criterion_07_transfer_identity():
    graphs = [build_complete_loops(2), build_complete_loops(4), build_cycle(4), build_cycle(5),
              build_cycle(8), build_cycle(9), build_margulis(2), build_margulis(3), build_margulis(4)]
    checked = 0
    for gi, G in enumerate(graphs):
        for d in (1, 2, 3):
            f = gen_mean_zero_fn(700 + 3 * gi + d, G.n, d)
            T = build_transfer(G, f, 0.7, 0.6, 0.8)
            for k in range(1, 11):
                if G.n * G.D ** (k - 1) > 10**6:
                    break
                q = quadratic_form_k(T, k)
                e = walk_trace_expectation(G, f, k, 0.7, 0.6, 0.8)
                assert abs(q - e) <= 1e-9 * abs(e), (gi, d, k, q, e)
                checked += 1
    assert checked > 100


# -- 8 ---------------------------------------------------------------------

MARTINGALE_INSTANCES = [
    (build_margulis(2), 2), (build_margulis(3), 1), (build_margulis(3), 3), (build_margulis(4), 2),
    (build_margulis(4), 3), (build_cycle(5), 2), (build_cycle(7), 3), (build_cycle(9), 1),
    (build_complete_loops(4), 2), (build_complete_loops(3), 3),
]


def test_criterion_08_martingale_decomposition():
    walks = 0
    for i, (G, d) in enumerate(MARTINGALE_INSTANCES):
        assert G.lam < 1
        f = gen_mean_zero_fn(800 + i, G.n, d)
        eps = 0.25 * f.F
        k = 40
        prop = verify_martingale_property(G, f, eps, k, samples=20, rng_seed=i)
        assert prop["max_conditional_mean"] <= 1e-10 and prop["first_mean"] <= 1e-10
        assert verify_shrink(G, f)["passed"]
        for j in range(100):
            dec = decompose(G, f, random_walk(G, 10_000 * i + j, k), eps)
            assert dec.residual <= 1e-12
            rep = verify_bounds(dec, f, lam=G.lam)
            assert rep["W_schatten2"] <= eps
            for name in NORMS:
                entry = rep["norms"][name]
                assert entry["max_Z"] <= entry["TM"] * (1 + 1e-12), (i, j, name, entry)
            walks += 1
    assert walks == 1000


# -- 9 ---------------------------------------------------------------------

def test_criterion_09_seeded_sampler_bijection():
    G = build_cycle(4)
    for k in range(1, 7):
        r = seed_length(4, 2, k)
        assert r == math.ceil(math.log2(4)) + (k - 1) * math.ceil(math.log2(2))
        walks = [tuple(seeded_walk(G, bits, k)) for bits in itertools.product((0, 1), repeat=r)]
        assert len(set(walks)) == 2**r == G.n * G.D ** (k - 1)
        law = Counter(tuple(np.bincount(w, minlength=4)) for w in walks)
        counts, mult, total = walk_law(G, k)
        assert total == 2**r
        assert law == {tuple(int(x) for x in c): int(m) for c, m in zip(counts, mult)}


# -- 10 --------------------------------------------------------------------

SCALE = 2**40


def scalar_exceed_counts(adj, values, k, epsilons):
    """Independent d = 1 harness: DP over (vertex, fixed-point partial sum).

    Every walk is a start vertex plus k-1 adjacency slots, so the counts are
    integers summing to n D^(k-1).  Sums are held in units of 2^-40.
    """
    n, D = adj.shape
    q = np.rint(np.asarray(values) * SCALE).astype(np.int64)
    sums = [np.array([q[v]]) for v in range(n)]
    cnts = [np.array([1], dtype=np.int64) for _ in range(n)]
    for _ in range(k - 2):
        new_s, new_c = [], []
        for w in range(n):
            src = [(v, s) for v in range(n) for s in range(D) if adj[v, s] == w]
            s_all = np.concatenate([sums[v] for v, _ in src]) + q[w]
            c_all = np.concatenate([cnts[v] for v, _ in src])
            uniq, inv = np.unique(s_all, return_inverse=True)
            new_s.append(uniq)
            agg = np.zeros(len(uniq), dtype=np.int64)
            np.add.at(agg, inv, c_all)
            new_c.append(agg)
        sums, cnts = new_s, new_c
    if k == 1:
        final = [(sums[v], cnts[v]) for v in range(n)]
    else:
        final = [(sums[v] + q[adj[v, s]], cnts[v]) for v in range(n) for s in range(D)]
    total = sum(int(c.sum()) for _, c in final)
    out = []
    for eps in epsilons:
        cut = k * (eps - TIE_TOL) * SCALE
        for s, _ in final:
            # rounding to 2^-40 moves a sum by at most k/2 units; refuse to decide near the cut
            assert np.all(np.abs(s - cut) > k), "an atom sits on the threshold"
        out.append(sum(int(c[s >= cut].sum()) for s, c in final))
    return out, total


def test_scalar_oracle_on_tiny_cases():
    # path counts checked by hand: cycle 4, k = 3, f = (1, -1, 1, -1) -> sums always +-1
    G = build_cycle(4)
    hits, total = scalar_exceed_counts(G.adj, [1.0, -1.0, 1.0, -1.0], 3, [0.3])
    assert (hits, total) == ([8], 16)
    hits, total = scalar_exceed_counts(build_complete_loops(2).adj, [1.0, -1.0], 2, [0.9, 0.3])
    assert (hits, total) == ([1, 1], 4)


def test_criterion_10_scalar_reduction():
    for name, G in grid_graphs():
        for k in KS:
            for seed in SEEDS:
                f = gen_mean_zero_fn(fn_seed(name, 1, seed), G.n, 1)
                vals = f.table[:, 0, 0].real
                assert np.allclose(f.table[:, 0, 0].imag, 0)
                hits, total = scalar_exceed_counts(G.adj, vals, k, EPSILONS)
                reps = tail_exact_many(G, f, k, EPSILONS)
                assert total == reps[0].total
                assert hits == [r.exceed for r in reps], (name, k, seed)


# -- 11 --------------------------------------------------------------------

def test_criterion_11_cli_determinism(tmp_path, monkeypatch, capsys):
    runs = [
        ["tail", "--graph", "margulis:4", "--gen", "11:16:2", "--k", "8", "--eps", "0.3", "--trials", "20000",
         "--seed", "18446744073709551615"],
        ["tail-exact", "--graph", "cycle:8", "--gen", "3:8:3", "--k", "7", "--eps", "0.5"],
        ["gt-verify", "--gen", "5:4:3", "--nodes", "64"],
        ["healy", "--graph", "margulis:3", "--gen", "2:9:2", "--t", "0.3", "--gamma", "0.8", "--b", "0.6",
         "--trials", "200", "--seed", "4"],
        ["mgf", "--graph", "cycle:9", "--gen", "2:9:2", "--k", "6", "--t", "0.05", "--gamma", "0.2", "--b", "0.9"],
        ["martingale", "--graph", "margulis:3", "--gen", "2:9:2", "--k", "30", "--eps", "0.2", "--trials", "20",
         "--seed", "9"],
        ["sample", "--graph", "cycle:4", "--k", "5", "--bits", "101101"],
        ["graph-info", "margulis:5"],
    ]
    cfg = tmp_path / "sweep.json"
    cfg.write_text('{"base": "tail", "graph": "cycle:5", "gen": "1:5:2", "trials": 3000, "seed": 5,'
                   ' "grid": {"k": [3, 5], "eps": [0.2, 0.4]}}')
    runs.append(["sweep", "--config", str(cfg)])
    for i, argv in enumerate(runs):
        outputs = []
        for rep, threads in enumerate(("1", "3")):
            monkeypatch.setenv("XLAB_THREADS", threads)
            out = tmp_path / f"run{i}_{rep}"
            code = main(argv + ["--out", str(out)])
            capsys.readouterr()
            assert code == 0, argv
            outputs.append((tmp_path / f"run{i}_{rep}.csv").read_bytes())
        assert outputs[0] == outputs[1], argv
        assert len(outputs[0]) > 0
