"""Gamma, Beta and Mittag-Leffler functions.

All Gamma evaluations in the package go through :func:`gamma` so that the
self-test can inject a perturbation and confirm that it is detected.
"""
from __future__ import annotations

import contextlib
import math

import mpmath
from scipy import special as sp

ML_MAX_ABS_ARG = 50.0
_LOG_DBL_MAX = math.log(1.7976931348623157e308)

_gamma_scale = 1.0


def gamma(x: float) -> float:
    return _gamma_scale * math.gamma(x)


def beta(a: float, b: float) -> float:
    return gamma(a) * gamma(b) / gamma(a + b)


@contextlib.contextmanager
def perturbed_gamma(scale: float):
    """Temporarily multiply every Gamma value by ``scale`` (test hook)."""
    global _gamma_scale
    old = _gamma_scale
    _gamma_scale = scale
    try:
        yield
    finally:
        _gamma_scale = old


def _peak_log_term(alpha: float, beta_: float, x: float) -> float:
    # log of the largest |x|^k / Gamma(alpha k + beta) over k
    lx = math.log(abs(x))
    best = -math.lgamma(beta_)
    k = 1
    while True:
        val = k * lx - math.lgamma(alpha * k + beta_)
        if val > best:
            best = val
        elif alpha * k + beta_ > 2.0 and val < best - 40.0:
            return best
        k += 1


def mittag_leffler(alpha: float, beta: float, x: float) -> float:
    """Two-parameter Mittag-Leffler function E_{alpha,beta}(x) for real x.

    Summed as a power series.  When the terms are large compared to the
    result (negative arguments), the series is re-summed in extended
    precision with enough digits to absorb the cancellation.

    Raises
    ------
    ValueError
        For non-positive parameters or ``|x| > 50``.
    OverflowError
        When the value does not fit in a double.
    """
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"mittag_leffler needs alpha > 0 and beta > 0, got {alpha}, {beta}")
    if not math.isfinite(x) or abs(x) > ML_MAX_ABS_ARG:
        raise ValueError(f"mittag_leffler argument |x| must be <= {ML_MAX_ABS_ARG}, got {x}")
    if x == 0.0:
        return 1.0 / gamma(beta)

    peak = _peak_log_term(alpha, beta, x)
    if x > 0:
        # all terms positive: the largest one already bounds the sum from below
        if peak > _LOG_DBL_MAX:
            raise OverflowError(f"E_{{{alpha},{beta}}}({x}) exceeds double range")
        return _ml_series_double(alpha, beta, x)
    if peak < math.log(1e2):
        return _ml_series_double(alpha, beta, x)
    if alpha < 1.0:
        value = _ml_asymptotic_negative(alpha, beta, x)
        if value is not None:
            return value
    return _ml_series_mp(alpha, beta, x, peak)


def _ml_asymptotic_negative(alpha: float, beta: float, x: float) -> float | None:
    """``-sum_k x^(-k) / Gamma(beta - alpha k)``, valid on the negative axis for alpha < 1.

    Returns None when the divergent tail starts before roundoff accuracy is reached.
    """
    total = 0.0
    prev = math.inf
    inv = 1.0 / x
    power = 1.0
    for k in range(1, 400):
        power *= inv
        term = -power * float(sp.rgamma(beta - alpha * k))
        mag = abs(term)
        if term != 0.0 and mag > prev:
            return None
        total += term
        if term != 0.0:
            prev = mag
            if total != 0.0 and mag <= 1e-17 * abs(total):
                return total / _gamma_scale
    return None


def _ml_series_double(alpha: float, beta: float, x: float) -> float:
    term = 1.0 / gamma(beta)
    total = term
    lg_prev = math.lgamma(beta)
    k = 0
    past_peak = False
    while True:
        lg_next = math.lgamma(alpha * (k + 1) + beta)
        ratio = x * math.exp(lg_prev - lg_next)
        new_term = term * ratio
        k += 1
        total += new_term
        if abs(ratio) < 1.0:
            past_peak = True
        if past_peak and abs(new_term) <= 1e-14 * 1e-3 * abs(total):
            return total
        term, lg_prev = new_term, lg_next
        if k > 100000:
            raise RuntimeError("mittag_leffler series failed to converge")


def _ml_series_mp(alpha: float, beta: float, x: float, peak_log: float) -> float:
    digits = int(peak_log / math.log(10.0)) + 25
    with mpmath.workdps(digits):
        a = mpmath.mpf(alpha)
        b = mpmath.mpf(beta)
        z = mpmath.mpf(x)
        total = mpmath.mpf(0)
        k = 0
        zk = mpmath.mpf(1)
        tol = mpmath.mpf(10) ** (-digits)
        biggest = mpmath.mpf(0)
        while True:
            term = zk / mpmath.gamma(a * k + b)
            total += term
            biggest = max(biggest, abs(term))
            if k > 2 and abs(term) < tol * biggest and a * k + b > 2:
                break
            zk *= z
            k += 1
        value = float(total) * _gamma_scale ** -1
    if not math.isfinite(value):
        raise OverflowError(f"E_{{{alpha},{beta}}}({x}) exceeds double range")
    return value
