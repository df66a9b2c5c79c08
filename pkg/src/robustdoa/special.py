"""Chi-squared distribution functions and adaptive quadrature.

The CDF is the regularized lower incomplete gamma function ``P(dof/2, x/2)``,
evaluated by its power series for ``x < a + 1`` and by the Lentz continued
fraction for the upper tail otherwise.
"""
from __future__ import annotations

import math
import sys

_EPS = 1e-16
_TINY = sys.float_info.min / sys.float_info.epsilon
_MAX_TERMS = 10_000


def _gamma_series(a: float, x: float) -> float:
    """Lower regularized P(a, x) by series; accurate for x < a + 1."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_continued_fraction(a: float, x: float) -> float:
    """Upper regularized Q(a, x) by modified Lentz; accurate for x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_p(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("shape a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_continued_fraction(a, x)


def regularized_gamma_q(a: float, x: float) -> float:
    if a <= 0:
        raise ValueError("shape a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_continued_fraction(a, x)


def _check_dof(dof) -> float:
    if dof <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {dof}")
    return float(dof)


def chi2_cdf(dof: float, x: float) -> float:
    """CDF of the chi-squared distribution with ``dof`` degrees of freedom."""
    dof = _check_dof(dof)
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x}")
    return regularized_gamma_p(0.5 * dof, 0.5 * float(x))


def chi2_sf(dof: float, x: float) -> float:
    """Survival function ``1 - chi2_cdf``, computed without cancellation in the tail."""
    dof = _check_dof(dof)
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x}")
    return regularized_gamma_q(0.5 * dof, 0.5 * float(x))


def chi2_pdf(dof: float, x: float) -> float:
    dof = _check_dof(dof)
    if x < 0:
        return 0.0
    a = 0.5 * dof
    if x == 0.0:
        if a < 1.0:
            return math.inf
        return 0.5 if a == 1.0 else 0.0
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a))


def chi2_quantile(dof: float, p: float, tol: float = 1e-12) -> float:
    """Inverse CDF by bracketing followed by safeguarded Newton steps.

    Upper-tail probabilities are matched through the survival function so
    that ``p`` close to 1 keeps full relative accuracy in ``1 - p``.
    """
    dof = _check_dof(dof)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    upper = p > 0.5
    q = 1.0 - p

    def residual(x):
        # increasing in x in both branches
        return q - chi2_sf(dof, x) if upper else chi2_cdf(dof, x) - p

    lo, hi = 0.0, max(dof, 1.0)
    while residual(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ArithmeticError("failed to bracket chi-squared quantile")

    x = 0.5 * (lo + hi)
    for _ in range(500):
        r = residual(x)
        if r == 0.0:
            return x
        if r < 0.0:
            lo = x
        else:
            hi = x
        dens = chi2_pdf(dof, x)
        step = r / dens if dens > 0 and math.isfinite(dens) else math.inf
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, x) or hi - lo <= tol * max(1.0, x):
            return x_new
        x = x_new
    raise ArithmeticError(f"chi2_quantile did not converge (dof={dof}, p={p})")


def adaptive_simpson(f, a: float, b: float, abs_tol: float = 1e-10, max_depth: int = 50,
                     n_panels: int = 16) -> float:
    """Integrate ``f`` over [a, b] by adaptive Simpson with Richardson correction.

    The interval is first cut into ``n_panels`` equal panels so that a narrow
    peak cannot hide between the three initial nodes. Subdivision runs on an
    explicit stack; the tolerance is split evenly between halves.
    """
    edges = [a + (b - a) * k / n_panels for k in range(n_panels + 1)]
    stack = []
    panel_tol = abs_tol / n_panels
    for lo, hi in zip(edges[:-1], edges[1:]):
        flo, fmid, fhi = f(lo), f(0.5 * (lo + hi)), f(hi)
        est = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)
        stack.append((lo, hi, flo, fmid, fhi, est, panel_tol, 0))
    total = 0.0
    while stack:
        lo, hi, flo, fmid, fhi, est, tol, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid)
        right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi)
        err = left + right - est
        if depth >= max_depth or abs(err) <= 15.0 * tol:
            total += left + right + err / 15.0
        else:
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * tol, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * tol, depth + 1))
    return total
