"""Acceptance suite: one PASS/FAIL line per criterion in the terminal summary.

The long-horizon replication (C9) runs at 1000 steps x 1000 runs by default
(a few minutes on one core). Set ``DCIM_ACCEPTANCE_SCALE=ci`` for 100 x 100.
"""
import os
import time

import numpy as np
import pytest

from dcim import (
    CATALOG,
    ConstraintRule,
    build_constraint_matrix,
    build_effective_influence,
    compare_policies,
    compare_with_optimum,
    constraint_expectancy,
    estimate_jsr,
    limit_exists,
    load_fixture,
    marginal_from_constraints,
    optimize_bruteforce,
    optimize_greedy,
    sample_next,
    step_marginal,
)
from oracles import block_expansion, original_im_step, random_model, random_stochastic

SCALE = os.environ.get("DCIM_ACCEPTANCE_SCALE", "full")


def random_constraints(rng, n):
    c = (rng.random((n, n)) < 0.5).astype(np.int8)
    np.fill_diagonal(c, 1)
    return c


@pytest.fixture(scope="module")
def lb30():
    return load_fixture("lb30")


@pytest.fixture(scope="module")
def dominance_report(lb30):
    return compare_with_optimum(lb30, CATALOG, 100, 100, seed=2024)


@pytest.fixture(scope="module")
def agreement_report(lb30):
    return compare_policies(lb30, CATALOG, 100, 1000, seed=7, best_policy=True)


@pytest.fixture(scope="module")
def replication(lb30):
    horizon, runs = (1000, 1000) if SCALE == "full" else (100, 100)
    start = time.perf_counter()
    report = compare_with_optimum(lb30, CATALOG, horizon, runs, seed=1)
    return report, time.perf_counter() - start


def test_c1_effective_influence_rows(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 21))
        d = random_stochastic(rng, n, n, zeros=0.3)
        e = build_effective_influence(d, random_constraints(rng, n))
        worst = max(worst, float(np.abs(e.sum(axis=1) - 1).max()))
    elapsed = time.perf_counter() - start
    verdict("C1 effective influence rows stochastic", worst <= 1e-12 and elapsed < 5,
            f"10000 pairs, max |row sum - 1| = {worst:.2e}, {elapsed:.2f} s")


def test_c2_reduction_to_own_chain_and_to_plain_model(verdict):
    rng = np.random.default_rng(2)
    own_bad = plain_bad = 0
    for _ in range(1000):
        model = random_model(rng, int(rng.integers(1, 11)), dyadic=True)
        state = rng.integers(3, size=model.n)
        p = step_marginal(state, model, ConstraintRule.never()).reshape(model.n, 3)
        own_bad += not np.array_equal(p, model.a_self[np.arange(model.n), state])
    for _ in range(1000):
        model = random_model(rng, int(rng.integers(1, 21)))
        state = rng.integers(3, size=model.n)
        p = step_marginal(state, model, ConstraintRule.always()).reshape(model.n, 3)
        plain_bad += not np.array_equal(p, original_im_step(state, model))
    verdict("C2 identity C gives own chain; all-ones C gives plain model", own_bad == 0 and plain_bad == 0,
            f"identity mismatches {own_bad}/1000, all-ones bitwise mismatches {plain_bad}/1000")


def test_c3_matrix_form_equals_block_expansion(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        model = random_model(rng, int(rng.integers(1, 11)), p=float(rng.uniform(0.1, 0.9)))
        state = rng.integers(3, size=model.n)
        c = random_constraints(rng, model.n)
        full = marginal_from_constraints(state, model, c).reshape(model.n, 3)
        worst = max(worst, float(np.abs(full - block_expansion(state, model, c)).max()))
    verdict("C3 S.H equals per-node expansion", worst <= 1e-12, f"1000 pairs, max deviation {worst:.2e}")


def test_c4_sampling_matches_marginal(verdict):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = 0.0
    samples = 100_000
    for _ in range(20):
        model = random_model(rng, int(rng.integers(1, 6)), p=0.6)
        rule = CATALOG[int(rng.integers(len(CATALOG)))]
        state = rng.integers(3, size=model.n)
        c = build_constraint_matrix(rule, state, model)
        u = rng.random((samples, model.n, 2))
        draws = sample_next(np.broadcast_to(state, (samples, model.n)), model, c, u)
        freq = np.stack([np.bincount(draws[:, i], minlength=3) / samples for i in range(model.n)])
        exact = step_marginal(state, model, rule).reshape(model.n, 3)
        worst = max(worst, float(np.abs(freq - exact).max()))
    elapsed = time.perf_counter() - start
    verdict("C4 sampled next states match marginals", worst <= 0.01 and elapsed < 60,
            f"20 models x 1e5 samples, L-inf {worst:.4f}, {elapsed:.1f} s")


def test_c5_greedy_is_exhaustive_optimum(verdict):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    instances = mismatches = 0
    sizes = []
    while instances < 200:
        model = random_model(rng, int(rng.integers(3, 7)), p=float(rng.uniform(0.3, 0.9)),
                             shared_cross=bool(rng.integers(2)))
        if len(model.edges) > 12:
            continue
        instances += 1
        sizes.append(len(model.edges))
        state = rng.integers(3, size=model.n)
        greedy = constraint_expectancy(state, model, optimize_greedy(state, model))
        _, best = optimize_bruteforce(state, model)
        mismatches += greedy != best
    elapsed = time.perf_counter() - start
    verdict("C5 greedy equals brute force", mismatches == 0 and elapsed < 120,
            f"{instances} instances with {min(sizes)}..{max(sizes)} edges (mean {np.mean(sizes):.1f}), "
            f"{mismatches} mismatches, {elapsed:.1f} s")


def test_c6_per_step_dominance(verdict, dominance_report):
    optimum = dominance_report["Optimum"].violations
    best = dominance_report["BestPolicy"].violations
    verdict("C6 per-step dominance", optimum == 0 and best == 0,
            f"30 nodes, 100 x 100: Optimum violations {optimum}, BestPolicy violations {best}")


def test_c7_normalisation_and_estimators(verdict, dominance_report, agreement_report):
    norm = max(dominance_report.normalization_error(), agreement_report.normalization_error())
    checks = {s.name: s.estimator_agreement(z=3.0) for s in agreement_report.strategies}
    worst = max(ratio for ratio, _ in checks.values())
    agree = all(ok for _, ok in checks.values())
    verdict("C7 normalisation and estimator agreement", norm <= 1e-6 and agree,
            f"max |sum - 1| = {norm:.2e}; 1000 runs, largest prob-vs-indicator gap {worst:.2f} SE")


def test_c8_steady_state(verdict):
    rng = np.random.default_rng(8)
    chain = np.array([[0.9, 0.1], [0.2, 0.8]])
    report = limit_exists(chain)
    stationary_err = float(np.abs(report.stationary - [2 / 3, 1 / 3]).max())
    identity = limit_exists(np.eye(3))
    ordered = True
    rho_err = 0.0
    for _ in range(20):
        mats = [rng.random((3, 3)) for _ in range(int(rng.integers(1, 4)))]
        bounds = estimate_jsr(mats, depth=4, restrict=False)
        ordered &= bounds.lower <= bounds.upper
        single = estimate_jsr(mats[:1], depth=4, restrict=False)
        rho_err = max(rho_err, abs(single.lower - np.abs(np.linalg.eigvals(mats[0])).max()))
    ok = stationary_err <= 1e-8 and identity.dominance is False and ordered and rho_err <= 1e-9
    verdict("C8 steady-state analysis", ok,
            f"stationary error {stationary_err:.1e}, identity dominance={identity.dominance}, "
            f"lower<=upper {ordered}, single-matrix lower vs rho {rho_err:.1e}")


def test_c9_thirty_node_replication(verdict, replication):
    report, elapsed = replication
    k = report.labels.index("N")
    fixed = [report[rule.name] for rule in CATALOG]
    best_fixed = max(fixed, key=lambda s: s.prob[k])
    optimum = report["Optimum"]
    margin = best_fixed.prob[k] - 2 * best_fixed.prob_stderr[k]
    ranking = sorted(report.strategies, key=lambda s: -s.prob[k])
    order = " > ".join(f"{s.name} {s.prob[k]:.4f}" for s in ranking)
    ok = optimum.prob[k] >= margin and report.normalization_error() <= 1e-6 and elapsed <= 1800
    verdict("C9 thirty-node replication", ok,
            f"{report.horizon} x {report.runs} in {elapsed:.0f} s; Optimum {optimum.prob[k]:.4f} vs "
            f"best fixed {best_fixed.name} {best_fixed.prob[k]:.4f} - 2 SE; ordering: {order}")
