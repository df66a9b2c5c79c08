"""Acceptance criteria 1-12 at desk scale (N=20, L=25, M=1801, 100 runs).

Each test records one PASS/FAIL line; the lines are printed in the pytest
terminal summary. Run alone with ``pytest tests/test_acceptance.py``.
"""
import math

import numpy as np
import pytest
from scipy import integrate, stats

from robustdoa.datagen import SCENARIOS, NoiseModel, Scenario, asnr_to_sigma2, generate
from robustdoa.estimator import gamma_update, scatter_matrix, weighted_scm
from robustdoa.experiment import parse_config, rows_to_csv, run_experiment
from robustdoa.geometry import ArrayGeometry, build_dictionary, steering_matrix
from robustdoa.loss import LossKind, LossSpec, psi
from robustdoa.metrics import array_covariance, covariance_derivatives, crb_ces, crb_gauss, psi1_mvt

N, L = 20, 25
G = ArrayGeometry(N)
LOSSES = ("gauss", "huber", "mvt", "tyler")
REPORT = {}


def record(number, ok, detail):
    REPORT[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, detail


def sweep(scenario_lines, data_lines="", values="10 30", runs=100, seed=1):
    text = (f"[scenario]\n{scenario_lines}\n[data]\n{data_lines}\n"
            f"[sweep]\nvalues = {values}\n[run]\nruns = {runs}\nseed = {seed}\n")
    cfg = parse_config(text)
    rows = run_experiment(cfg, workers=1)
    return cfg, rows


def by(rows, value):
    return {r.loss: r for r in rows if r.sweep_value == value}


@pytest.fixture(scope="module")
def sweeps():
    out = {}
    out[5] = sweep("name = single")
    out[6] = {m: sweep("name = single", f"offgrid = true\ngrid_points = {m}", values="30")
              for m in (181, 1801)}
    out[7] = sweep("name = two", "model = mvt\nnu = 2.1")
    out[8] = sweep("name = two", "model = epscont\nepsilon = 0.05\nlam = 10")
    out[9] = {rho: sweep(f"name = two\ncorrelation = {rho}") for rho in (0.0, 0.9, 1.0)}
    return out


def test_criterion_01_consistency_factors():
    b_gauss = LossSpec.gauss(N).b
    hub = LossSpec.huber(N, 0.9)
    f = lambda x: psi(hub, x / 2) * stats.chi2.pdf(x, 2 * N)
    knee = 2 * hub.c_squared
    quad = (integrate.quad(f, 0, knee, epsabs=1e-13)[0]
            + integrate.quad(f, knee, np.inf, epsabs=1e-13)[0]) / N
    mvt = LossSpec.mvt(N, 2.1)
    t = 0.5 * np.random.default_rng(0).chisquare(2 * N, 10 ** 6)
    mc = np.mean(psi(mvt, t)) / N
    ok = b_gauss == 1.0 and abs(hub.b - quad) < 1e-6 and abs(mvt.b / mc - 1) < 0.01
    record(1, ok, f"b_gauss={b_gauss}, b_huber={hub.b:.8f} (quad {quad:.8f}), "
                  f"b_mvt={mvt.b:.6f} (MC {mc:.6f})")


def test_criterion_02_contamination_variance():
    sigma1 = 0.4
    model = NoiseModel.eps_contaminated_background(sigma1, 0.05, 10.0)
    silent = Scenario((0.0,), (1e-300,))
    y = generate(silent, G, model, 10 ** 5, np.random.default_rng(0)).data
    emp = np.mean(np.abs(y) ** 2)
    ok = model.sigma2 == 5.95 * sigma1 and abs(emp / model.sigma2 - 1) < 0.03
    record(2, ok, f"sigma2/sigma1^2={model.sigma2 / sigma1:.12g}, empirical/nominal="
                  f"{emp / model.sigma2:.4f}")


def test_criterion_03_weighted_scm_consistency():
    sc = SCENARIOS["three"]
    s2 = asnr_to_sigma2(10.0, N)
    Sigma = array_covariance(sc, G, s2)
    rng = np.random.default_rng(3)
    data = [generate(sc, G, NoiseModel.gaussian(s2), 500, rng).data for _ in range(200)]
    errs = {}
    for name in LOSSES:
        loss = LossSpec.from_name(name, N)
        mean = sum(weighted_scm(y, Sigma, loss) for y in data) / len(data)
        target = Sigma / np.trace(Sigma).real if loss.kind is LossKind.TYLER else Sigma
        errs[name] = np.linalg.norm(mean - target) / np.linalg.norm(target)
    ok = all(e < 0.05 for e in errs.values())
    record(3, ok, "rel. Frobenius error " + ", ".join(f"{k}={v:.4f}" for k, v in errs.items()))


def test_criterion_04_fixed_point():
    d = build_dictionary(G, 1801)
    sc = SCENARIOS["three"]
    gamma = np.zeros(d.n_points)
    idx = [d.nearest_index(t) for t in sc.doas_degrees]
    gamma[idx] = sc.source_powers
    Sigma = scatter_matrix(d.steering, gamma, asnr_to_sigma2(10.0, N))
    new = gamma_update(gamma, d.steering, Sigma, Sigma, 1.0)
    change = np.max(np.abs(new[idx] - gamma[idx]) / gamma[idx])
    ok = change <= 1e-12 and np.all(new[gamma == 0] == 0)
    record(4, ok, f"max relative change {change:.2e}")


def test_criterion_05_single_source_zero_rmse(sweeps):
    _, rows = sweeps[5]
    r30 = by(rows, 30.0)
    ok = all(r30[l].rmse_deg == 0.0 for l in LOSSES)
    record(5, ok, "RMSE at 30 dB " + ", ".join(f"{l}={r30[l].rmse_deg:.4g}" for l in LOSSES))


def test_criterion_06_offgrid_floor(sweeps):
    parts, ok = [], True
    for m, (cfg, rows) in sweeps[6].items():
        target = 180.0 / (m - 1) / math.sqrt(12)
        for r in rows:
            rel = r.rmse_deg / target
            ok &= 0.75 <= rel <= 1.25
        parts.append(f"M={m}: target {target:.4f}, " +
                     ", ".join(f"{r.loss}={r.rmse_deg:.4f}" for r in rows))
    record(6, ok, "; ".join(parts))


def test_criterion_07_mvt_robustness(sweeps):
    _, rows = sweeps[7]
    r = {k: v.rmse_deg for k, v in by(rows, 30.0).items()}
    robust = [r["mvt"], r["tyler"], r["huber"]]
    ok = r["gauss"] >= 1.5 * r["mvt"] and max(robust) <= 1.5 * min(robust)
    record(7, ok, ", ".join(f"{k}={v:.4f}" for k, v in r.items()))


def test_criterion_08_contamination_robustness(sweeps):
    _, rows = sweeps[8]
    r = {k: v.rmse_deg for k, v in by(rows, 30.0).items()}
    ok = all(r["gauss"] > r[l] for l in ("huber", "mvt", "tyler"))
    record(8, ok, ", ".join(f"{k}={v:.4f}" for k, v in r.items()))


def test_criterion_09_coherent_sources(sweeps):
    ok, parts = True, []
    for loss in LOSSES:
        vals = [by(sweeps[9][rho][1], 30.0)[loss].rmse_deg for rho in (0.0, 0.9, 1.0)]
        lo, hi = min(vals), max(vals)
        ok &= hi < 2 * lo if lo > 0 else hi == 0
        parts.append(f"{loss}=" + "/".join(f"{v:.4f}" for v in vals))
    record(9, ok, "RMSE at rho 0/0.9/1: " + ", ".join(parts))


def test_criterion_10_bounds():
    diffs = []
    for sc in list(SCENARIOS.values()) + [SCENARIOS["two"].with_correlation(0.9)]:
        for asnr in (0, 10, 20, 30):
            s2 = asnr_to_sigma2(asnr, N)
            diffs.append(abs(crb_ces(sc, G, s2, L, 1.0) / crb_gauss(sc, G, s2, L) - 1))
    psi1 = psi1_mvt(N, 2.1)
    gaps = [math.sqrt(crb_ces(SCENARIOS["three"], G, asnr_to_sigma2(a, N), L, psi1)
                      / crb_gauss(SCENARIOS["three"], G, asnr_to_sigma2(a, N), L)) - 1
            for a in range(0, 31)]
    sc = SCENARIOS["three"]
    fd_err, h = 0.0, 1e-6
    for i, Ri in enumerate(covariance_derivatives(sc, G)):
        up, dn = list(sc.doas_degrees), list(sc.doas_degrees)
        up[i] += h
        dn[i] -= h
        fd = (array_covariance(sc.with_doas(up), G, 0.1)
              - array_covariance(sc.with_doas(dn), G, 0.1)) / (2 * h)
        fd_err = max(fd_err, np.linalg.norm(fd - Ri) / np.linalg.norm(Ri))
    ok = max(diffs) < 1e-6 and max(gaps) < 0.03 and fd_err < 1e-6
    record(10, ok, f"max |ces(1)/gauss-1|={max(diffs):.1e}, max MVT gap={max(gaps):.4%}, "
                   f"derivative FD error={fd_err:.1e}")


def test_criterion_11_convergence(sweeps):
    all_rows = list(sweeps[5][1]) + list(sweeps[7][1]) + list(sweeps[8][1])
    all_rows += [r for _, rows in sweeps[6].values() for r in rows]
    all_rows += [r for _, rows in sweeps[9].values() for r in rows]
    converged = all(r.runs_converged == r.runs_ok == 100 for r in all_rows)
    jmax = max(r.max_iters_seen for r in all_rows)
    swept = [sweeps[5][1], sweeps[7][1], sweeps[8][1]] + [rows for _, rows in sweeps[9].values()]
    it10 = np.mean([r.mean_iters for rows in swept for r in rows if r.sweep_value == 10.0])
    it30 = np.mean([r.mean_iters for rows in swept for r in rows if r.sweep_value == 30.0])
    ok = converged and jmax <= 1200 and it30 < it10
    record(11, ok, f"all converged={converged}, max iterations={jmax}, "
                   f"mean iterations 10 dB={it10:.2f}, 30 dB={it30:.2f}")


def test_criterion_12_determinism(sweeps):
    cfg, rows = sweeps[7]
    again = run_experiment(cfg, workers=1)
    a, b = rows_to_csv(rows).encode(), rows_to_csv(again).encode()
    record(12, a == b, f"{len(a)} bytes, identical={a == b}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
