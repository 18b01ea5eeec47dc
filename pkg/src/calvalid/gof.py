"""Normality tests for standardized residuals.

``ks_test`` compares against the fully specified standard normal; the
D'Agostino-Pearson and Shapiro-Wilk tests only check for *some* normal
distribution, since both estimate location and scale from the sample.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import NonFinite, TooFewSamples, TooManySamples, ZeroVariance

_STD_NORMAL = NormalDist()

KS_MIN_N = 8
DAP_MIN_N = 20
SW_MIN_N = 8
SW_MAX_N = 5000


class GofTest(str, enum.Enum):
    KS = "KS"
    DAP = "DAP"
    SW = "SW"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise ValueError(f"unknown test {name!r}; expected one of ks, dap, sw") from None


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a pytest class

    test: GofTest
    statistic: float
    p_value: float
    alpha: float
    reject_h0: bool
    n: int

    def to_dict(self):
        return {"test": self.test.value, "statistic": self.statistic, "p_value": self.p_value,
                "alpha": self.alpha, "reject_h0": self.reject_h0, "n": self.n}

    @classmethod
    def from_dict(cls, d):
        return cls(test=GofTest.parse(d["test"]), statistic=float(d["statistic"]),
                   p_value=float(d["p_value"]), alpha=float(d["alpha"]),
                   reject_h0=bool(d["reject_h0"]), n=int(d["n"]))


def _report(test, statistic, p, alpha, n):
    p = min(max(float(p), 0.0), 1.0)
    return TestReport(test=test, statistic=float(statistic), p_value=p, alpha=float(alpha),
                      reject_h0=bool(p < alpha), n=int(n))


def _samples(samples, min_n, max_n=None):
    x = np.asarray(getattr(samples, "values", samples), dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise NonFinite("samples must be finite")
    if x.size < min_n:
        raise TooFewSamples(f"need at least {min_n} samples, got {x.size}")
    if max_n is not None and x.size > max_n:
        raise TooManySamples(f"at most {max_n} samples supported, got {x.size}")
    return x


# -- Kolmogorov-Smirnov -----------------------------------------------------

def normal_cdf(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.vectorize(math.erfc)(-x / math.sqrt(2.0))


def kolmogorov_sf(lam, eps=1e-12):
    """Survival function ``Q(lam) = P(K > lam)`` of the Kolmogorov distribution.

    Uses ``2 sum (-1)^(k-1) exp(-2 k^2 lam^2)`` for ``lam >= 1`` and the
    equivalent theta-function form ``1 - sqrt(2 pi)/lam sum exp(-(2k-1)^2
    pi^2 / (8 lam^2))`` below, where the alternating series converges
    slowly. Both are summed until terms drop under ``eps``.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        total = 0.0
        k = 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8.0 * lam * lam))
            total += term
            if term < eps:
                break
            k += 1
        return min(max(1.0 - math.sqrt(2.0 * math.pi) / lam * total, 0.0), 1.0)
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < eps:
            break
        k += 1
    return min(max(2.0 * total, 0.0), 1.0)


def ks_statistic(x):
    """Two-sided one-sample KS distance to the standard normal CDF."""
    z = np.sort(np.asarray(x, dtype=float))
    n = z.size
    cdf = normal_cdf(z)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def ks_test(samples, alpha=0.05):
    """Kolmogorov-Smirnov test against N(0, 1) (no parameters estimated).

    The p-value is the asymptotic Kolmogorov tail evaluated at
    ``(sqrt(n) + 0.12 + 0.11/sqrt(n)) * D``.
    """
    x = _samples(samples, KS_MIN_N)
    n = x.size
    d = ks_statistic(x)
    sn = math.sqrt(n)
    p = kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
    return _report(GofTest.KS, d, p, alpha, n)


# -- D'Agostino-Pearson -----------------------------------------------------

def _central_moments(x):
    d = x - x.mean()
    m2 = np.mean(d**2)
    if not m2 > 0:
        raise ZeroVariance("sample has zero variance")
    return m2, np.mean(d**3), np.mean(d**4)


def skewness_z(x):
    """D'Agostino's normal approximation of the sample skewness."""
    n = x.size
    m2, m3, _ = _central_moments(x)
    b1 = m3 / m2**1.5
    y = b1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = (3.0 * (n * n + 27 * n - 70) * (n + 1) * (n + 3)
             / ((n - 2.0) * (n + 5) * (n + 7) * (n + 9)))
    w2 = -1.0 + math.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1.0))
    return delta * math.asinh(y / alpha)


def kurtosis_z(x):
    """Anscombe-Glynn normal approximation of the sample kurtosis."""
    n = x.size
    m2, _, m4 = _central_moments(x)
    b2 = m4 / m2**2
    mean = 3.0 * (n - 1) / (n + 1)
    var = 24.0 * n * (n - 2) * (n - 3) / ((n + 1.0) ** 2 * (n + 3) * (n + 5))
    xs = (b2 - mean) / math.sqrt(var)
    sqrt_beta1 = (6.0 * (n * n - 5 * n + 2) / ((n + 7.0) * (n + 9))
                  * math.sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2.0) * (n - 3))))
    A = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + math.sqrt(1.0 + 4.0 / sqrt_beta1**2))
    term1 = 1.0 - 2.0 / (9.0 * A)
    denom = 1.0 + xs * math.sqrt(2.0 / (A - 4.0))
    if denom == 0.0:
        return math.inf if xs > 0 else -math.inf
    term2 = math.copysign(abs((1.0 - 2.0 / A) / denom) ** (1.0 / 3.0), denom)
    return (term1 - term2) / math.sqrt(2.0 / (9.0 * A))


def dap_test(samples, alpha=0.05):
    """D'Agostino-Pearson omnibus K^2 test; p-value from chi2 with 2 dof."""
    x = _samples(samples, DAP_MIN_N)
    k2 = skewness_z(x) ** 2 + kurtosis_z(x) ** 2
    return _report(GofTest.DAP, k2, math.exp(-k2 / 2.0), alpha, x.size)


# -- Shapiro-Wilk (Royston, AS R94) ------------------------------------------

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coefs, x):
    """Evaluate ``sum c_i x^i`` (ascending order)."""
    out = 0.0
    for c in reversed(coefs):
        out = out * x + c
    return out


def sw_coefficients(n):
    """Royston's approximation to the Shapiro-Wilk weights, ascending order."""
    half = n // 2
    an25 = n + 0.25
    m = np.array([_STD_NORMAL.inv_cdf((i - 0.375) / an25) for i in range(1, half + 1)])
    summ2 = 2.0 * float(m @ m)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a = -m / ssumm2  # positive weights for the upper half, largest first
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    if n > 5:
        a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
        a[2:] = -m[2:] / fac
        a[1] = a2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
        a[1:] = -m[1:] / fac
    a[0] = a1
    full = np.zeros(n)
    full[:half] = -a
    full[n - half:] = a[::-1]
    return full


def sw_test(samples, alpha=0.05):
    """Shapiro-Wilk W with Royston's normalizing transform for the p-value."""
    x = np.sort(_samples(samples, SW_MIN_N, SW_MAX_N))
    n = x.size
    if not np.ptp(x) > 1e-19 * max(1.0, float(np.max(np.abs(x)))):
        raise ZeroVariance("sample range is zero")
    coef = sw_coefficients(n)
    xc = x - x.mean()
    ss = float(xc @ xc)
    if not ss > 0:
        raise ZeroVariance("sample has zero variance")
    w = min(float(coef @ x) ** 2 / ss, 1.0)
    w1 = 1.0 - w
    if w1 <= 0.0:
        return _report(GofTest.SW, w, 1.0, alpha, n)
    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return _report(GofTest.SW, w, 1e-99, alpha, n)
        y = -math.log(gamma - y)
        mu = _poly(_C3, n)
        sigma = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mu = _poly(_C5, ln)
        sigma = math.exp(_poly(_C6, ln))
    p = 1.0 - _STD_NORMAL.cdf((y - mu) / sigma)
    return _report(GofTest.SW, w, p, alpha, n)


_RUNNERS = {GofTest.KS: ks_test, GofTest.DAP: dap_test, GofTest.SW: sw_test}
DEFAULT_TESTS = (GofTest.KS, GofTest.DAP, GofTest.SW)


def validate(samples, alpha=0.05, tests=DEFAULT_TESTS):
    """Run the requested tests on one sample; reports come back in KS, DAP, SW order."""
    x = np.asarray(getattr(samples, "values", samples), dtype=float).ravel()
    if x.size == 0:
        raise TooFewSamples("no samples to test")
    wanted = {GofTest.parse(t) for t in tests}
    if not wanted:
        raise ValueError("no tests requested")
    return [_RUNNERS[t](x, alpha) for t in DEFAULT_TESTS if t in wanted]
