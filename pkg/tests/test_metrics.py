import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustdoa.datagen import SCENARIOS, Scenario, asnr_to_sigma2, source_covariance
from robustdoa.geometry import ArrayGeometry, steering_matrix
from robustdoa.metrics import (RmseAccumulator, array_covariance, capped_errors,
                               covariance_derivatives, crb_ces, crb_gauss, match_and_accumulate,
                               psi1_mvt, rmse)

G = ArrayGeometry()
N = 20

doa_lists = st.lists(st.floats(-80, 80, allow_nan=False), min_size=1, max_size=4)


def test_perfect_estimates_contribute_zero():
    acc = match_and_accumulate(RmseAccumulator(), [-10.0, 10.0], [-10.0, 10.0])
    assert acc.sum_sq == 0.0 and acc.count == 2 and rmse(acc) == 0.0


def test_reversed_estimates_contribute_zero():
    acc = match_and_accumulate(RmseAccumulator(), [75.0, 2.0, -3.0], [-3.0, 2.0, 75.0])
    assert acc.sum_sq == 0.0


def test_far_estimates_are_capped():
    acc = match_and_accumulate(RmseAccumulator(), [30.0, 50.0], [-10.0, 10.0])
    assert acc.sum_sq == pytest.approx(200.0)
    assert rmse(acc) == pytest.approx(10.0)


def test_single_error_of_three_degrees():
    assert rmse(match_and_accumulate(RmseAccumulator(), [-7.0], [-10.0])) == pytest.approx(3.0)


def test_rmse_formula_over_runs():
    acc = RmseAccumulator()
    for est in ([-10.5, 10.0], [-10.0, 11.0], [20.0, 10.0]):
        match_and_accumulate(acc, est, [-10.0, 10.0])
    # run 3: 10 pairs with 10 (error 0), 20 with -10 (error 30, capped at 10)
    assert rmse(acc) == pytest.approx(np.sqrt((0.25 + 1 + 100) / 6))


def test_accumulator_errors():
    with pytest.raises(ValueError):
        rmse(RmseAccumulator())
    with pytest.raises(ValueError):
        match_and_accumulate(RmseAccumulator(), [1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        capped_errors(np.arange(6.0), np.arange(6.0))
    with pytest.raises(ValueError):
        RmseAccumulator(e_max=5).merge(RmseAccumulator())


@given(doa_lists, st.randoms())
def test_assignment_is_optimal_and_order_free(true, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2 ** 31))
    est = np.asarray(true) + rng.normal(0, 8, len(true))
    err = capped_errors(est, true)
    assert np.all(err <= 10.0)
    best = min(np.sum(np.minimum(np.abs(np.asarray(p) - true), 10.0) ** 2)
               for p in itertools.permutations(est))
    assert np.sum(err ** 2) == pytest.approx(best)
    perm = rng.permutation(len(true))
    assert np.sum(capped_errors(est[perm], np.asarray(true)[perm]) ** 2) == pytest.approx(best)


@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), min_size=2, max_size=12))
def test_merge_is_order_independent(pairs):
    accs = [match_and_accumulate(RmseAccumulator(), [e], [t]) for e, t in pairs]
    fwd = RmseAccumulator()
    for a in accs:
        fwd = fwd.merge(a)
    rev = RmseAccumulator()
    for a in reversed(accs):
        rev = rev.merge(a)
    assert rmse(fwd) == pytest.approx(rmse(rev))
    assert fwd.count == len(pairs)


# --------------------------------------------------------------------------- bounds

def test_psi1_examples():
    assert psi1_mvt(20, 2.1) == pytest.approx(42.1 / 44.1)
    assert psi1_mvt(1, 2.0) == pytest.approx(4 / 6)
    assert psi1_mvt(20, 1e12) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        psi1_mvt(20, 0.0)


@given(st.integers(1, 64), st.floats(1e-3, 1e6))
def test_psi1_bounds(n, nu):
    p = psi1_mvt(n, nu)
    assert 2 * n / (2 * n + 2) < p < 1 or p == pytest.approx(1.0)


def test_psi1_monte_carlo():
    # E[psi(t)^2]/(N(N+1)) with psi the MVT score weight times t, under MVT data
    n, nu = 20, 2.1
    rng = np.random.default_rng(0)
    m = 10 ** 6
    g = 0.5 * rng.chisquare(2 * n, m)         # ||CN(0, I)||^2
    tau = nu / rng.chisquare(nu, m)
    t = tau * g
    psi = (2 * n + nu) * t / (nu + 2 * t)
    assert np.mean(psi ** 2) / (n * (n + 1)) == pytest.approx(psi1_mvt(n, nu), rel=0.01)


def _slepian_bangs_fd(scenario, s2, L, h=1e-6):
    """DOA-block CRB via finite-difference covariance derivatives and full nuisance set."""
    k = scenario.n_sources
    P = source_covariance(scenario).astype(complex)

    def cov(doas, P, s2):
        A = steering_matrix(G, doas)
        return A @ P @ A.conj().T + s2 * np.eye(N)

    doas = np.array(scenario.doas_degrees)
    derivs = []
    for i in range(k):
        dp, dm = doas.copy(), doas.copy()
        dp[i] += h
        dm[i] -= h
        derivs.append((cov(dp, P, s2) - cov(dm, P, s2)) / (2 * h))
    for i in range(k):
        for j in range(i, k):
            basis = [np.zeros((k, k), complex)]
            basis[0][i, j] = basis[0][j, i] = 1.0
            if i != j:
                b = np.zeros((k, k), complex)
                b[i, j], b[j, i] = 1j, -1j
                basis.append(b)
            for E in basis:
                derivs.append(cov(doas, E, 0.0))
    derivs.append(np.eye(N))
    Ri = np.linalg.inv(cov(doas, P, s2))
    F = np.array([[np.trace(Ri @ a @ Ri @ b).real for b in derivs] for a in derivs])
    return np.trace(np.linalg.inv(F)[:k, :k]) / L


@pytest.mark.parametrize("scenario", [SCENARIOS["single"], SCENARIOS["two"], SCENARIOS["three"],
                                      SCENARIOS["two"].with_correlation(0.9)])
def test_gauss_bound_against_finite_difference_fim(scenario):
    s2 = asnr_to_sigma2(20.0, N)
    assert crb_gauss(scenario, G, s2, 25) == pytest.approx(_slepian_bangs_fd(scenario, s2, 25),
                                                           rel=1e-5)


def test_single_source_closed_form():
    # K = 1: CRB = sigma2 / (2 L p h (p N / (p N + sigma2))), h = ||P_perp d||^2
    s2 = asnr_to_sigma2(20.0, N)
    a = steering_matrix(G, [-10.0])[:, 0]
    n = np.arange(N)
    d = -1j * np.pi * n * np.cos(np.radians(-10.0)) * np.pi / 180 * a
    h = np.vdot(d, d).real - abs(np.vdot(a, d)) ** 2 / N
    expect = s2 / (2 * 25 * h * (N / (N + s2)))
    assert crb_gauss(SCENARIOS["single"], G, s2, 25) == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("name", ["single", "two", "three"])
def test_bounds_scale_with_snapshots(name):
    s2 = asnr_to_sigma2(10.0, N)
    sc = SCENARIOS[name]
    assert crb_gauss(sc, G, s2, 50) == pytest.approx(crb_gauss(sc, G, s2, 25) / 2)
    assert crb_ces(sc, G, s2, 50, 0.9) == pytest.approx(crb_ces(sc, G, s2, 25, 0.9) / 2)


def test_bound_vanishes_with_noise():
    sc = SCENARIOS["two"]
    vals = [crb_gauss(sc, G, s2, 25) for s2 in (1e-2, 1e-4, 1e-6)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-6


def _random_scenario(rng):
    k = rng.integers(1, 4)
    doas = np.sort(rng.choice(np.arange(-70, 71, 7), k, replace=False)).astype(float)
    return Scenario(doas, rng.uniform(0.2, 2.0, k), correlation=rng.choice([0.0, 0.5]))


def test_ces_with_unit_psi_equals_gauss_random_scenarios():
    rng = np.random.default_rng(3)
    for _ in range(20):
        sc = _random_scenario(rng)
        s2 = asnr_to_sigma2(rng.uniform(-5, 35), N)
        assert crb_ces(sc, G, s2, 25, 1.0) == pytest.approx(crb_gauss(sc, G, s2, 25), rel=1e-6)


def test_doa_only_variant_differs_for_close_sources():
    sc = SCENARIOS["three"]
    s2 = asnr_to_sigma2(0.0, N)
    full = crb_ces(sc, G, s2, 25, 1.0)
    doa_only = crb_ces(sc, G, s2, 25, 1.0, doa_only=True)
    assert doa_only < full
    single = SCENARIOS["single"]
    assert crb_ces(single, G, s2, 25, 1.0, doa_only=True) == pytest.approx(
        crb_gauss(single, G, s2, 25), rel=1e-10)


@pytest.mark.parametrize("name", ["single", "two", "three"])
def test_covariance_derivatives_finite_difference(name):
    sc = SCENARIOS[name].with_correlation(0.4)
    h = 1e-6
    for i, Ri in enumerate(covariance_derivatives(sc, G)):
        dp = list(sc.doas_degrees)
        dm = list(sc.doas_degrees)
        dp[i] += h
        dm[i] -= h
        fd = (array_covariance(sc.with_doas(dp), G, 0.1)
              - array_covariance(sc.with_doas(dm), G, 0.1)) / (2 * h)
        assert np.linalg.norm(fd - Ri) / np.linalg.norm(Ri) < 1e-6


def test_mvt_gap_three_sources():
    psi1 = psi1_mvt(N, 2.1)
    for asnr in range(0, 31, 2):
        s2 = asnr_to_sigma2(asnr, N)
        ratio = np.sqrt(crb_ces(SCENARIOS["three"], G, s2, 25, psi1)
                        / crb_gauss(SCENARIOS["three"], G, s2, 25))
        assert 1.0 <= ratio < 1.03


@pytest.mark.parametrize("name", ["single", "two", "three"])
def test_bounds_nonincreasing_in_asnr(name):
    sc = SCENARIOS[name]
    grid = np.arange(-10, 41, 5)
    g = [crb_gauss(sc, G, asnr_to_sigma2(a, N), 25) for a in grid]
    c = [crb_ces(sc, G, asnr_to_sigma2(a, N), 25, 0.95) for a in grid]
    assert np.all(np.diff(g) <= 0) and np.all(np.diff(c) <= 0)


def test_bound_input_errors():
    with pytest.raises(ValueError):
        crb_gauss(SCENARIOS["two"], G, 0.0, 25)
    with pytest.raises(ValueError):
        crb_ces(SCENARIOS["two"], G, 0.1, 25, 1.5)
    many = Scenario(tuple(np.linspace(-80, 80, 20)), (0.05,) * 20)
    with pytest.raises(ValueError):
        crb_gauss(many, G, 0.1, 25)
