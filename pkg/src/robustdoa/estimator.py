"""Robust and sparse M-estimation of DOA.

The estimator is sparse Bayesian learning in which the sample covariance is
replaced by an adaptively weighted SCM ``R_Y``; the weights come from the
loss function chosen through :class:`~robustdoa.loss.LossSpec`. With the
Gauss loss all weights are one and the iteration is plain SBL.

One iteration:

1. prune the grid to entries within ``gamma_range`` of the largest power,
2. build the scatter matrix ``Sigma = A_P diag(gamma_P) A_P^H + sigma2 I``,
3. compute ``R_Y`` with weights ``u(y^H Sigma^-1 y)`` (Tyler: refresh ``b``
   and normalize to trace one),
4. multiplicative fixed-point update of ``gamma`` on the pruned grid,
5. pick the K largest peaks as active set and re-estimate ``sigma2`` from
   the part of ``R_Y`` orthogonal to the active steering vectors.

Iteration stops once the active set has stayed the same for
``conv_window`` consecutive iterations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .geometry import Dictionary
from .loss import LossKind, LossSpec, loss_value, tyler_b, weight

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    stepsize: float = 1.0
    conv_window: int = 10
    max_iters: int = 1200
    gamma_range: float = 1e-3
    snr_max: float = 1e6
    gamma_floor_init: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.stepsize <= 1.0:
            raise ValueError(f"stepsize must lie in (0, 1], got {self.stepsize}")
        if self.conv_window < 1 or self.max_iters < 1 or self.conv_window >= self.max_iters:
            raise ValueError("need 1 <= conv_window < max_iters")
        if not 0.0 < self.gamma_range <= 1.0:
            raise ValueError(f"gamma_range must lie in (0, 1], got {self.gamma_range}")
        if not self.snr_max >= 1.0:
            raise ValueError(f"snr_max must be >= 1, got {self.snr_max}")
        if not self.gamma_floor_init > 0:
            raise ValueError("gamma_floor_init must be positive")


@dataclass
class EstimateResult:
    active_set: np.ndarray
    doas_degrees: np.ndarray
    gamma: np.ndarray
    sigma2: float
    iterations: int
    converged: bool


def _data(Y) -> np.ndarray:
    y = getattr(Y, "data", Y)
    y = np.asarray(y, dtype=complex)
    if y.ndim != 2 or y.shape[1] < 1:
        raise ValueError("Y must be an N x L matrix with L >= 1")
    return y


def sample_covariance(Y) -> np.ndarray:
    y = _data(Y)
    return (y @ y.conj().T) / y.shape[1]


def _factor(Sigma):
    try:
        return cho_factor(Sigma, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"scatter matrix is not positive definite: {exc}") from exc


def _quadratic_forms(y: np.ndarray, chol) -> np.ndarray:
    # y_l^H Sigma^-1 y_l = ||L^-1 y_l||^2 with Sigma = L L^H
    z = solve_triangular(chol[0], y, lower=True, check_finite=False)
    return np.einsum("ij,ij->j", z.real, z.real) + np.einsum("ij,ij->j", z.imag, z.imag)


def objective(Y, Sigma, loss: LossSpec, b: float | None = None) -> float:
    """M-estimation objective ``(1/(L b)) sum rho(t_l) - log det(Sigma^-1)``.

    Diagnostic only; the estimator never evaluates it. ``b`` defaults to
    the loss's consistency factor.
    """
    y = _data(Y)
    chol = _factor(np.asarray(Sigma, dtype=complex))
    t = _quadratic_forms(y, chol)
    b = loss.b if b is None else b
    log_det = 2.0 * np.sum(np.log(np.abs(np.diag(chol[0]))))
    return float(np.sum(loss_value(loss, t)) / (y.shape[1] * b) + log_det)


def _weighted_scm(y: np.ndarray, chol, loss: LossSpec) -> np.ndarray:
    n, l = y.shape
    if loss.kind is LossKind.GAUSS:
        return (y @ y.conj().T) / l
    t = _quadratic_forms(y, chol)
    u = np.asarray(weight(loss, t))
    if loss.kind is LossKind.TYLER:
        b = tyler_b(t, n)
        r = ((y * u) @ y.conj().T) / (l * b)
        return r / np.trace(r).real
    return ((y * u) @ y.conj().T) / (l * loss.b)


def weighted_scm(Y, Sigma, loss: LossSpec) -> np.ndarray:
    """Adaptively weighted SCM ``(1/(L b)) sum u(y^H Sigma^-1 y) y y^H``.

    For the Gauss loss this is the SCM itself. For Tyler's loss ``b`` is
    the mean of Tyler's weights and the result is scaled to unit trace.
    """
    y = _data(Y)
    chol = None if loss.kind is LossKind.GAUSS else _factor(np.asarray(Sigma, dtype=complex))
    return _weighted_scm(y, chol, loss)


def cbf_powers(S_Y, steering: np.ndarray) -> np.ndarray:
    """Conventional beamformer powers ``a^H S_Y a / ||a||^4`` for every column."""
    sa = S_Y @ steering
    num = np.einsum("ij,ij->j", steering.conj(), sa).real
    norms = np.einsum("ij,ij->j", steering.conj(), steering).real
    return num / norms ** 2


def select_active_set(gamma, n_sources: int) -> np.ndarray:
    """Indices of the K largest peaks of ``gamma``, sorted ascending.

    A peak is a strict local maximum; the first and last entries only need
    to exceed their single neighbour. If there are fewer than K peaks the
    remaining slots go to the largest non-peak entries. Ties favour the
    lower index.
    """
    g = np.asarray(gamma, dtype=float)
    m = g.size
    if n_sources > m:
        raise ValueError("more sources than grid points")
    if n_sources == 0:
        return np.zeros(0, dtype=int)
    is_peak = np.zeros(m, dtype=bool)
    if m == 1:
        is_peak[0] = True
    else:
        left = np.concatenate(([-np.inf], g[:-1]))
        right = np.concatenate((g[1:], [-np.inf]))
        is_peak = (g > left) & (g > right)
    idx = np.arange(m)
    peaks = idx[is_peak]
    order = peaks[np.lexsort((peaks, -g[peaks]))]
    chosen = order[:n_sources]
    if chosen.size < n_sources:
        rest = idx[~is_peak]
        rest = rest[np.lexsort((rest, -g[rest]))]
        chosen = np.concatenate((chosen, rest[: n_sources - chosen.size]))
    return np.sort(chosen)


def prune_grid(gamma, gamma_range: float) -> np.ndarray:
    """Grid indices whose power is at least ``gamma_range * max(gamma)``."""
    g = np.asarray(gamma, dtype=float)
    top = g.max() if g.size else 0.0
    if not top > 0:
        raise ValueError("cannot prune an all-zero power vector")
    return np.flatnonzero(g >= gamma_range * top)


def _residual_trace(R_Y: np.ndarray, A_M: np.ndarray) -> float:
    n = R_Y.shape[0]
    total = np.trace(R_Y).real
    if A_M.shape[1] == 0:
        return total
    u, s, _ = np.linalg.svd(A_M, full_matrices=False)
    tol = n * np.finfo(float).eps * (s[0] if s.size else 0.0)
    u = u[:, s > tol]
    # tr(P R) with P = U U^H the projector onto span(A_M)
    return total - np.einsum("ij,ij->", u.conj(), R_Y @ u).real


def noise_variance(R_Y, steering_active, n_sources: int | None = None,
                   floor: float | None = None, ceil: float | None = None) -> float:
    """Noise variance from the part of ``R_Y`` orthogonal to the active steering vectors.

    ``tr((I - A_M A_M^+) R_Y) / (N - K)``, optionally clamped to ``[floor, ceil]``.
    """
    R_Y = np.asarray(R_Y, dtype=complex)
    A_M = np.asarray(steering_active, dtype=complex).reshape(R_Y.shape[0], -1)
    n = R_Y.shape[0]
    k = A_M.shape[1] if n_sources is None else n_sources
    if k != A_M.shape[1]:
        raise ValueError("n_sources does not match the number of active steering vectors")
    if k >= n:
        raise ValueError(f"need fewer sources than sensors (K={k}, N={n})")
    sigma2 = _residual_trace(R_Y, A_M) / (n - k)
    if ceil is not None:
        sigma2 = min(sigma2, ceil)
    if floor is not None:
        sigma2 = max(sigma2, floor)
    return float(sigma2)


def _gamma_update(gamma_p, A_p, chol, R_Y, mu):
    B = cho_solve(chol, A_p, check_finite=False)  # Sigma^-1 a_p
    num = np.einsum("ij,ij->j", B.conj(), R_Y @ B).real
    den = np.einsum("ij,ij->j", A_p.conj(), B).real
    gain = np.maximum(num, 0.0) / den
    return (1.0 - mu) * gamma_p + mu * gamma_p * gain


def gamma_update(gamma_old, steering_pruned, Sigma, R_Y, mu: float = 1.0) -> np.ndarray:
    """One fixed-point step ``gamma <- (1-mu) gamma + mu gamma G`` on the pruned grid.

    ``G_p = (b_p^H R_Y b_p) / (b_p^H a_p)`` with ``b_p = Sigma^-1 a_p``; at
    ``R_Y = Sigma`` every gain is one.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError("stepsize must lie in [0, 1]")
    chol = _factor(np.asarray(Sigma, dtype=complex))
    return _gamma_update(np.asarray(gamma_old, dtype=float), np.asarray(steering_pruned),
                         chol, np.asarray(R_Y, dtype=complex), mu)


def scatter_matrix(steering, gamma, sigma2: float) -> np.ndarray:
    """``A diag(gamma) A^H + sigma2 I``, symmetrized."""
    A = np.asarray(steering)
    s = (A * np.asarray(gamma)) @ A.conj().T
    s = 0.5 * (s + s.conj().T)
    s[np.diag_indices_from(s)] += sigma2
    return s


def _noise_bounds(S_Y, config: EstimatorConfig):
    ceil = np.trace(S_Y).real / S_Y.shape[0]
    return ceil / config.snr_max, ceil


def _initialize(S_Y, steering, n_sources, config, floor, ceil):
    g_init = cbf_powers(S_Y, steering)
    active = select_active_set(g_init, n_sources)
    sigma2 = noise_variance(S_Y, steering[:, active], n_sources, floor, ceil)
    # delta is relative to the per-sensor data power so it survives the first pruning
    delta = config.gamma_floor_init * (ceil if ceil else 1.0)
    return np.maximum(delta, g_init - sigma2), sigma2, active


def initialize(Y, dictionary: Dictionary, n_sources: int,
               config: EstimatorConfig = EstimatorConfig()):
    """Beamformer initialization of the source powers and noise variance.

    Returns ``(gamma, sigma2)`` where ``gamma = max(delta, p_cbf - sigma2)``
    and ``sigma2`` is the noise-subspace estimate from the SCM around the K
    largest beamformer peaks, clamped to the estimator's noise bounds.
    """
    y = _data(Y)
    n = y.shape[0]
    if n_sources >= n:
        raise ValueError(f"need fewer sources than sensors (K={n_sources}, N={n})")
    S_Y = sample_covariance(y)
    floor, ceil = _noise_bounds(S_Y, config)
    if ceil == 0.0:
        floor = ceil = None
    gamma, sigma2, _ = _initialize(S_Y, dictionary.steering, n_sources, config, floor, ceil)
    return gamma, sigma2


def estimate_doas(Y, dictionary: Dictionary, n_sources: int, loss: LossSpec,
                  config: EstimatorConfig = EstimatorConfig(), callback=None) -> EstimateResult:
    """Estimate K DOAs from array snapshots.

    Parameters
    ----------
    Y : (N, L) complex array or SnapshotMatrix
        Array data, one snapshot per column.
    dictionary : Dictionary
        Steering vectors on the DOA grid.
    n_sources : int
        Number of sources K; must be smaller than N.
    loss : LossSpec
        Loss function and its constants.
    config : EstimatorConfig
        Iteration parameters.
    callback : callable, optional
        Called after every iteration as ``callback(j, gamma, sigma2, active_set)``.

    Returns
    -------
    EstimateResult
        Active set, DOAs in degrees, final source powers, noise variance,
        iteration count and whether the active set settled before
        ``max_iters``.

    Notes
    -----
    With Tyler's loss the data are first scaled so that the SCM has unit
    trace: ``R_Y`` is normalized to trace one every iteration, and the
    noise bounds, initial powers and ``R_Y`` must share that scale. The
    returned ``gamma`` and ``sigma2`` are scaled back to data units.
    """
    y = _data(Y)
    n, _ = y.shape
    A = dictionary.steering
    if A.shape[0] != n:
        raise ValueError(f"dictionary has {A.shape[0]} sensors but data has {n}")
    if not 0 <= n_sources < n:
        raise ValueError(f"need 0 <= K < N (K={n_sources}, N={n})")

    scale = 1.0
    if loss.kind is LossKind.TYLER:
        scale = np.trace(sample_covariance(y)).real
        if not scale > 0:
            raise ValueError("all-zero data")
        y = y / np.sqrt(scale)

    S_Y = sample_covariance(y)
    floor, ceil = _noise_bounds(S_Y, config)
    if not ceil > 0:
        raise ValueError("all-zero data")
    gamma, sigma2, active = _initialize(S_Y, A, n_sources, config, floor, ceil)
    mu = config.stepsize

    stable = 0
    converged = False
    j = 0
    while j < config.max_iters:
        j += 1
        pruned = prune_grid(gamma, config.gamma_range)
        A_p = A[:, pruned]
        chol = _factor(scatter_matrix(A_p, gamma[pruned], sigma2))
        R_Y = _weighted_scm(y, chol, loss)
        gamma[pruned] = _gamma_update(gamma[pruned], A_p, chol, R_Y, mu)
        new_active = select_active_set(gamma, n_sources)
        sigma2 = noise_variance(R_Y, A[:, new_active], n_sources, floor, ceil)
        stable = stable + 1 if np.array_equal(new_active, active) else 0
        active = new_active
        if callback is not None:
            callback(j, gamma, sigma2, active)
        if stable >= config.conv_window:
            converged = True
            break

    if not converged:
        logger.warning("active set still changing after %d iterations", j)
    return EstimateResult(
        active_set=active,
        doas_degrees=dictionary.grid_degrees[active].copy(),
        gamma=gamma * scale,
        sigma2=sigma2 * scale,
        iterations=j,
        converged=converged,
    )
