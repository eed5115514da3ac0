"""
Shapiro-Wilk normality test and Pearson correlation with its significance.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import betainc, ndtri
from scipy.stats import norm

from drivemon.errors import DegenerateInput, InvalidArgument, UnsupportedSize
from drivemon.utils.config import Config

SW_MIN_N = 3
SW_MAX_N = 5000

# polynomial approximations of the extreme coefficients, highest power first
_C1 = np.array([-2.706056, 4.434685, -2.07119, -0.147981, 0.221157, 0.0])
_C2 = np.array([-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0])
# p-value transforms: small samples (4..11) and large samples (12..5000)
_G = np.array([0.459, -2.273])
_C3 = np.array([-0.0006714, 0.025054, -0.39978, 0.544])
_C4 = np.array([-0.0020322, 0.062767, -0.77857, 1.3822])
_C5 = np.array([0.0038915, -0.083751, -0.31082, -1.5861])
_C6 = np.array([0.0030302, -0.082676, -0.4803])

_WEIGHTS = {}


@dataclass(frozen=True)
class NormalityResult:
    variable: str
    w: float
    p: float
    normal_at_alpha: bool
    n: int = 0
    group: str = "ALL"


def _shapiro_weights(n: int) -> np.ndarray:
    """Antisymmetric coefficients a_1..a_n for the sorted sample (n >= 4)."""
    if n in _WEIGHTS:
        return _WEIGHTS[n]
    half = n // 2
    m = -ndtri((np.arange(1, half + 1) - 0.375) / (n + 0.25))
    summ2 = 2.0 * float(np.sum(m ** 2))
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a1 = np.polyval(_C1, rsn) + m[0] / ssumm2
    if n > 5:
        a2 = np.polyval(_C2, rsn) + m[1] / ssumm2
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1 ** 2 - 2 * a2 ** 2))
        a = m / fac
        a[0], a[1] = a1, a2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1 ** 2))
        a = m / fac
        a[0] = a1
    weights = np.zeros(n)
    # a[i] pairs the i-th largest with the i-th smallest observation
    weights[n - half:] = a[::-1]
    weights[:half] = -a
    _WEIGHTS[n] = weights
    return weights


def _shapiro_p(w: float, n: int) -> float:
    if w >= 1.0:
        return 1.0
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return min(max(p, 0.0), 1.0)
    y = math.log(1.0 - w)
    if n <= 11:
        gamma = np.polyval(_G, n)
        if y >= gamma:
            return 1e-99
        y = -math.log(gamma - y)
        m = np.polyval(_C3, n)
        s = math.exp(np.polyval(_C4, n))
    else:
        ln = math.log(n)
        m = np.polyval(_C5, ln)
        s = math.exp(np.polyval(_C6, ln))
    return float(norm.sf((y - m) / s))


def shapiro_wilk(x: Sequence[float], variable: str = "x", alpha: Optional[float] = None) -> NormalityResult:
    """
    Shapiro-Wilk test with Royston's approximations for the coefficients and p-value.

    Args:
        x: Observations, 3 <= n <= 5000, not all equal
        variable (str): Name carried into the result
        alpha (float): Significance level (defaults to Config.ALPHA)

    Returns:
        NormalityResult: W in (0, 1], p in [0, 1], normal_at_alpha = p > alpha
    """
    alpha = Config.ALPHA if alpha is None else alpha
    values = np.sort(np.asarray(x, dtype=float))
    n = len(values)
    if not SW_MIN_N <= n <= SW_MAX_N:
        raise UnsupportedSize(f"Shapiro-Wilk needs {SW_MIN_N}..{SW_MAX_N} observations, got {n}")
    if values[0] == values[-1]:
        raise DegenerateInput(f"{variable} has zero variance")
    centred = values - values.mean()
    ss = float(np.sum(centred ** 2))
    if n == 3:
        # a = (-sqrt(1/2), 0, sqrt(1/2)) exactly
        w = 0.5 * float(values[2] - values[0]) ** 2 / ss
    else:
        w = float(np.dot(_shapiro_weights(n), centred)) ** 2 / ss
    w = min(w, 1.0)
    p = _shapiro_p(w, n)
    return NormalityResult(variable, w, p, p > alpha, n)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Linear correlation coefficient: covariance over the product of standard deviations."""
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    if xs.shape != ys.shape:
        raise InvalidArgument(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 3:
        raise InvalidArgument(f"correlation needs at least 3 pairs, got {len(xs)}")
    if xs.min() == xs.max() or ys.min() == ys.max():
        raise DegenerateInput("correlation of a constant variable")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    rho = float(np.dot(xc, yc)) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    return max(-1.0, min(1.0, rho))


def pearson_p(rho: float, n: int) -> float:
    """
    Two-tailed p-value of rho under the t-distribution with n - 2 degrees of freedom.

    With t = rho * sqrt((n - 2) / (1 - rho^2)) the tail probability reduces to the
    regularized incomplete beta I_{1 - rho^2}((n - 2) / 2, 1 / 2).
    """
    if n < 3:
        raise InvalidArgument(f"significance needs n >= 3, got {n}")
    if not abs(rho) <= 1.0:
        raise InvalidArgument(f"|rho| must be <= 1, got {rho}")
    if abs(rho) == 1.0:
        return 0.0
    df = n - 2
    return float(min(1.0, max(0.0, betainc(df / 2.0, 0.5, 1.0 - rho * rho))))
