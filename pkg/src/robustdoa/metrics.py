"""Capped RMSE with optimal assignment, and Cramer-Rao bounds on DOA.

Errors and bounds are in degrees (bounds in deg^2) so they can be compared
directly. The RMSE caps every individual error at ``e_max`` and matches
estimates to true DOAs by the permutation with the smallest capped squared
error.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .datagen import Scenario, source_covariance
from .geometry import ArrayGeometry, steering_derivative_matrix, steering_matrix

MAX_ASSIGN_SOURCES = 5


@dataclass
class RmseAccumulator:
    """Running sum of capped squared DOA errors.

    ``count`` is the number of individual DOA errors, i.e. K per run.
    """

    sum_sq: float = 0.0
    count: int = 0
    e_max: float = 10.0

    def merge(self, other: "RmseAccumulator") -> "RmseAccumulator":
        if other.e_max != self.e_max:
            raise ValueError("cannot merge accumulators with different caps")
        return RmseAccumulator(self.sum_sq + other.sum_sq, self.count + other.count, self.e_max)


def capped_errors(est_doas, true_doas, e_max: float = 10.0) -> np.ndarray:
    """Per-source capped errors under the best assignment of estimates to truths."""
    est = np.asarray(est_doas, dtype=float).ravel()
    true = np.asarray(true_doas, dtype=float).ravel()
    if est.size != true.size:
        raise ValueError(f"got {est.size} estimates for {true.size} true DOAs")
    if est.size > MAX_ASSIGN_SOURCES:
        raise ValueError(f"assignment supports at most {MAX_ASSIGN_SOURCES} sources")
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(est.size)):
        err = np.minimum(np.abs(est[list(perm)] - true), e_max)
        cost = float(np.sum(err ** 2))
        if cost < best_cost:
            best, best_cost = err, cost
    return best if best is not None else np.zeros(0)


def match_and_accumulate(acc: RmseAccumulator, est_doas, true_doas) -> RmseAccumulator:
    err = capped_errors(est_doas, true_doas, acc.e_max)
    acc.sum_sq += float(np.sum(err ** 2))
    acc.count += err.size
    return acc


def rmse(acc: RmseAccumulator) -> float:
    if acc.count == 0:
        raise ValueError("empty accumulator")
    return float(np.sqrt(acc.sum_sq / acc.count))


def _check_scenario(scenario: Scenario, geometry: ArrayGeometry, sigma2: float, n_snapshots: int):
    if scenario.n_sources >= geometry.n_sensors:
        raise ValueError("need fewer sources than sensors")
    if not sigma2 > 0:
        raise ValueError("noise variance must be positive")
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")


def array_covariance(scenario: Scenario, geometry: ArrayGeometry, sigma2: float) -> np.ndarray:
    """Model covariance ``A P A^H + sigma2 I``."""
    A = steering_matrix(geometry, scenario.doas_degrees)
    R = A @ source_covariance(scenario) @ A.conj().T
    R = 0.5 * (R + R.conj().T)
    R[np.diag_indices_from(R)] += sigma2
    return R


def crb_gauss(scenario: Scenario, geometry: ArrayGeometry, sigma2: float, n_snapshots: int) -> float:
    """Trace (deg^2) of the stochastic CRB on the K DOAs for Gaussian data.

    ``C = sigma2/(2L) Re[(P A^H R^-1 A P) o H^T]^-1`` with
    ``H = D^H (I - A A^+) D``. For uncorrelated sources ``P A^H R^-1 A P``
    equals ``Gamma (I + B Gamma/sigma2)^-1 B Gamma/sigma2``, ``B = A^H A``.
    """
    _check_scenario(scenario, geometry, sigma2, n_snapshots)
    A = steering_matrix(geometry, scenario.doas_degrees)
    D = steering_derivative_matrix(geometry, scenario.doas_degrees)
    P = source_covariance(scenario)
    R = array_covariance(scenario, geometry, sigma2)
    proj = np.eye(geometry.n_sensors) - A @ np.linalg.pinv(A)
    H = D.conj().T @ proj @ D
    M = P @ A.conj().T @ np.linalg.solve(R, A) @ P
    J = np.real(M * H.T)
    if np.linalg.cond(J) > 1e14:
        raise np.linalg.LinAlgError("singular CRB matrix (degenerate geometry)")
    return float(sigma2 / (2.0 * n_snapshots) * np.trace(np.linalg.inv(J)))


def psi1_mvt(n_sensors: int, nu_data: float) -> float:
    """``psi_1 = (2N + nu)/(2(N+1) + nu)`` for MVT data."""
    if not nu_data > 0:
        raise ValueError("nu must be positive")
    return (2.0 * n_sensors + nu_data) / (2.0 * (n_sensors + 1) + nu_data)


def covariance_derivatives(scenario: Scenario, geometry: ArrayGeometry) -> list:
    """``dR/dtheta_i`` for each DOA (per degree), by the product rule."""
    A = steering_matrix(geometry, scenario.doas_degrees)
    D = steering_derivative_matrix(geometry, scenario.doas_degrees)
    P = source_covariance(scenario)
    out = []
    for i in range(scenario.n_sources):
        # d_i (P A^H)_i + (A P)_:,i d_i^H
        term = np.outer(D[:, i], P[i] @ A.conj().T)
        out.append(term + term.conj().T)
    return out


def _nuisance_derivatives(A: np.ndarray) -> list:
    # real parameters of a Hermitian P (diagonal, Re and Im above it), then sigma2
    n, k = A.shape
    out = []
    for i in range(k):
        out.append(np.outer(A[:, i], A[:, i].conj()))
        for j in range(i + 1, k):
            x = np.outer(A[:, i], A[:, j].conj())
            out.append(x + x.conj().T)
            out.append(1j * (x - x.conj().T))
    out.append(np.eye(n, dtype=complex))
    return out


def crb_ces(scenario: Scenario, geometry: ArrayGeometry, sigma2: float, n_snapshots: int,
            psi1: float, doa_only: bool = False) -> float:
    """Trace (deg^2) of the CRB on the DOAs for CES data.

    Fisher information per snapshot ``F_ij = (psi1 - 1) tr(R^-1 R_i) tr(R^-1 R_j)
    + psi1 tr(R^-1 R_i R^-1 R_j)``; the bound is the DOA block of ``F^-1``
    divided by L. By default the source covariance and noise variance enter
    as nuisance parameters, which for ``psi1 = 1`` reproduces
    :func:`crb_gauss`. ``doa_only=True`` keeps only the K DOAs in ``F``.
    """
    _check_scenario(scenario, geometry, sigma2, n_snapshots)
    if not 0.0 < psi1 <= 1.0:
        raise ValueError(f"psi1 must lie in (0, 1], got {psi1}")
    k = scenario.n_sources
    R = array_covariance(scenario, geometry, sigma2)
    derivs = covariance_derivatives(scenario, geometry)
    if not doa_only:
        derivs += _nuisance_derivatives(steering_matrix(geometry, scenario.doas_degrees))
    W = [np.linalg.solve(R, d) for d in derivs]  # R^-1 R_i
    traces = np.array([np.trace(w) for w in W])
    stacked = np.stack(W)
    # tr(W_i W_j) = sum over entries of W_i * W_j^T
    cross = np.einsum("iab,jba->ij", stacked, stacked)
    F = np.real((psi1 - 1.0) * np.outer(traces, traces) + psi1 * cross)
    if np.linalg.cond(F) > 1e14:
        raise np.linalg.LinAlgError("singular Fisher information matrix")
    return float(np.trace(np.linalg.inv(F)[:k, :k]) / n_snapshots)
