"""Loss, weight and psi functions of the four scatter M-estimators.

Every function takes the squared Mahalanobis distance ``t = y^H Sigma^-1 y``
and accepts scalars or numpy arrays. The consistency factor ``b`` rescales
the loss so that the weighted SCM is unbiased for Gaussian data; it is
computed once when a :class:`LossSpec` is built, except for Tyler's loss
where it depends on the data and is refreshed by the estimator each
iteration (see :func:`tyler_b`).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .special import adaptive_simpson, chi2_cdf, chi2_pdf, chi2_quantile

DEFAULT_HUBER_Q = 0.9
DEFAULT_MVT_NU = 2.1


class LossKind(str, enum.Enum):
    GAUSS = "gauss"
    HUBER = "huber"
    MVT = "mvt"
    TYLER = "tyler"


@dataclass(frozen=True)
class LossSpec:
    """A loss choice together with its derived constants.

    Build instances with :meth:`gauss`, :meth:`huber`, :meth:`mvt`,
    :meth:`tyler` or :meth:`from_name`; ``c_squared`` and ``b`` are filled in
    automatically.
    """

    kind: LossKind
    n_sensors: int
    q: float = DEFAULT_HUBER_Q
    nu_loss: float = DEFAULT_MVT_NU
    c_squared: float = field(default=math.nan, compare=False)
    b: float = field(default=math.nan, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if int(self.n_sensors) != self.n_sensors or self.n_sensors < 1:
            raise ValueError(f"n_sensors must be a positive integer, got {self.n_sensors}")
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"Huber q must lie in (0, 1), got {self.q}")
        if not self.nu_loss > 0:
            raise ValueError(f"nu_loss must be positive, got {self.nu_loss}")
        if self.kind is LossKind.HUBER and math.isnan(self.c_squared):
            object.__setattr__(self, "c_squared", huber_threshold(self.q, self.n_sensors))
        if math.isnan(self.b):
            if self.kind is LossKind.TYLER:
                b = 1.0  # placeholder; data-adaptive
            else:
                b = consistency_factor(self)
            object.__setattr__(self, "b", b)

    @classmethod
    def gauss(cls, n_sensors: int) -> "LossSpec":
        return cls(LossKind.GAUSS, n_sensors)

    @classmethod
    def huber(cls, n_sensors: int, q: float = DEFAULT_HUBER_Q) -> "LossSpec":
        return cls(LossKind.HUBER, n_sensors, q=q)

    @classmethod
    def mvt(cls, n_sensors: int, nu_loss: float = DEFAULT_MVT_NU) -> "LossSpec":
        return cls(LossKind.MVT, n_sensors, nu_loss=nu_loss)

    @classmethod
    def tyler(cls, n_sensors: int) -> "LossSpec":
        return cls(LossKind.TYLER, n_sensors)

    @classmethod
    def from_name(cls, name: str, n_sensors: int, q: float = DEFAULT_HUBER_Q,
                  nu_loss: float = DEFAULT_MVT_NU) -> "LossSpec":
        try:
            kind = LossKind(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown loss {name!r}; expected one of "
                             f"{', '.join(k.value for k in LossKind)}") from None
        return cls(kind, n_sensors, q=q, nu_loss=nu_loss)

    @property
    def name(self) -> str:
        return self.kind.value


def _as_t(spec: LossSpec, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("t must be nonnegative")
    if spec.kind is LossKind.TYLER and np.any(t == 0):
        raise ValueError("Tyler weight N/t is singular at t = 0")
    return t


def _out(t, value):
    return float(value) if np.ndim(t) == 0 else value


def weight(spec: LossSpec, t):
    """Weight function ``u(t) = d rho / dt`` (without the 1/b scaling)."""
    t = _as_t(spec, t)
    n = spec.n_sensors
    if spec.kind is LossKind.GAUSS:
        u = np.ones_like(t)
    elif spec.kind is LossKind.HUBER:
        c2 = spec.c_squared
        with np.errstate(divide="ignore"):
            u = np.where(t <= c2, 1.0, c2 / np.where(t > 0, t, 1.0))
    elif spec.kind is LossKind.MVT:
        nu = spec.nu_loss
        u = (nu + 2.0 * n) / (nu + 2.0 * t)
    else:
        u = n / t
    return _out(t, u)


def loss_value(spec: LossSpec, t):
    """Loss ``rho(t)``."""
    t = _as_t(spec, t)
    n = spec.n_sensors
    if spec.kind is LossKind.GAUSS:
        rho = t.copy()
    elif spec.kind is LossKind.HUBER:
        c2 = spec.c_squared
        safe = np.where(t > c2, t, c2)
        rho = np.where(t <= c2, t, c2 * (np.log(safe / c2) + 1.0))
    elif spec.kind is LossKind.MVT:
        nu = spec.nu_loss
        rho = 0.5 * (nu + 2.0 * n) * np.log(nu + 2.0 * t)
    else:
        rho = n * np.log(t)
    return _out(t, rho)


def psi(spec: LossSpec, t):
    """``psi(t) = t u(t)``; constant N for Tyler."""
    t = _as_t(spec, t)
    if spec.kind is LossKind.TYLER:
        return _out(t, np.full_like(t, float(spec.n_sensors)))
    return _out(t, t * np.asarray(weight(spec, t)))


def huber_threshold(q: float, n_sensors: int) -> float:
    """Squared Huber threshold: the q-quantile of (1/2) chi^2 with 2N dof."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    return 0.5 * chi2_quantile(2 * n_sensors, q)


@lru_cache(maxsize=None)
def _mvt_consistency(n_sensors: int, nu_loss: float) -> float:
    dof = 2 * n_sensors
    upper = chi2_quantile(dof, 1.0 - 1e-12)
    scale = nu_loss + 2.0 * n_sensors

    def integrand(x):
        # psi_MVT(x/2) * f_chi2(x)
        return 0.5 * scale * x / (nu_loss + x) * chi2_pdf(dof, x)

    return adaptive_simpson(integrand, 0.0, upper, abs_tol=1e-10) / n_sensors


def consistency_factor(spec: LossSpec) -> float:
    """Consistency factor ``b = E[psi(||y||^2)] / N`` for ``y ~ CN(0, I)``.

    Closed form for Huber, adaptive Simpson quadrature against the
    chi-squared(2N) density for MVT, exactly 1 for Gauss. Tyler's factor is
    data adaptive and must be computed with :func:`tyler_b`.
    """
    n = spec.n_sensors
    if spec.kind is LossKind.GAUSS:
        return 1.0
    if spec.kind is LossKind.HUBER:
        c2 = spec.c_squared if not math.isnan(spec.c_squared) else huber_threshold(spec.q, n)
        return chi2_cdf(2 * (n + 1), 2.0 * c2) + c2 * (1.0 - spec.q) / n
    if spec.kind is LossKind.MVT:
        return _mvt_consistency(n, float(spec.nu_loss))
    raise ValueError("Tyler loss has no fixed consistency factor: data-adaptive b required "
                     "(use tyler_b)")


def tyler_b(quadratic_forms, n_sensors: int) -> float:
    """Mean of Tyler's weights ``N / t_l`` over the snapshots."""
    t = np.asarray(quadratic_forms, dtype=float)
    if t.size == 0 or np.any(~(t > 0)):
        raise ValueError("Tyler's b needs strictly positive quadratic forms")
    return float(np.mean(n_sensors / t))
