"""Power variations of fBm and the constants of their limit theorems.

All statistics accept either an :class:`~fbm_sde.fbm.FbmPath` or a raw array
of path values whose last axis is time, so a whole batch of paths with shape
``(n_paths, n + 1)`` is handled in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

SIGMA_H_MODES = ("paper_series", "variance_limit")

# theta(l) switches to its binomial series above this lag.
_SERIES_LAG = 16
_SERIES_TERMS = 8


def _values(path) -> np.ndarray:
    return np.asarray(getattr(path, "values", path), dtype=float)


def _increments(path) -> np.ndarray:
    return np.diff(_values(path), axis=-1)


def _hurst_of(path, h: float | None) -> float:
    if h is not None:
        return float(h)
    if hasattr(path, "h"):
        return float(path.h)
    raise ValueError("Hurst index required for a raw value array")


def theta(h: float, ell) -> np.ndarray | float:
    """Correlation of unit fBm increments at integer lag ``ell``.

    ``2 theta(l) = (l+1)^{2H} + |l-1|^{2H} - 2 l^{2H}``. Large lags use the
    binomial expansion of ``(1 + 1/l)^{2H} + (1 - 1/l)^{2H} - 2`` because the
    direct second difference cancels almost every digit.
    """
    scalar = np.isscalar(ell)
    lag = np.abs(np.atleast_1d(np.asarray(ell, dtype=float)))
    p = 2.0 * h
    out = np.empty_like(lag)

    small = lag < _SERIES_LAG
    ls = lag[small]
    out[small] = 0.5 * ((ls + 1.0) ** p + np.abs(ls - 1.0) ** p - 2.0 * ls**p)

    big = ~small
    if np.any(big):
        lb = lag[big]
        inv2 = lb**-2.0
        coeff = 1.0
        acc = np.zeros_like(lb)
        power = np.ones_like(lb)
        for j in range(1, _SERIES_TERMS + 1):
            # generalized binomial coefficient C(p, 2j)
            k = 2 * j
            coeff *= (p - (k - 2)) * (p - (k - 1)) / ((k - 1) * k)
            power = power * inv2
            acc += coeff * power
        out[big] = lb**p * acc
    return float(out[0]) if scalar else out


def theta_tail_bound(h: float, lag: int) -> float:
    """Bound on ``|theta(l)|`` for ``l >= lag >= 2`` from the mean value theorem."""
    return abs(h * (2.0 * h - 1.0)) * (lag - 1.0) ** (2.0 * h - 2.0)


def theta_partial_sum_identity(h: float, L: int) -> tuple[float, float]:
    """Both sides of ``1 + 2 sum_{l=1}^{L} theta(l) = (L+1)^{2H} - L^{2H}``."""
    lhs = 1.0 + 2.0 * math.fsum(theta(h, np.arange(1, L + 1)))
    # L^{2H} ((1 + 1/L)^{2H} - 1) without cancellation
    rhs = float(L) ** (2 * h) * math.expm1(2 * h * math.log1p(1.0 / L))
    return lhs, rhs


@dataclass(frozen=True)
class SeriesValue:
    value: float
    tail_bound: float
    terms: int


def cubed_theta_sum(h: float, tol: float = 1e-14, max_terms: int = 10**7) -> SeriesValue:
    """``sum_{l>=1} theta(l)^3`` truncated once a term drops below ``tol``.

    The neglected tail is estimated from the power-law asymptotics of theta
    and added; ``tail_bound`` is the size of that whole tail.
    """
    block = 1 << 15
    total = 0.0
    start = 1
    last = math.inf
    while start <= max_terms:
        stop = min(start + block, max_terms + 1)
        terms = theta(h, np.arange(start, stop)) ** 3
        below = np.nonzero(np.abs(terms) < tol)[0]
        if below.size:
            cut = below[0] + 1
            total += math.fsum(terms[:cut])
            start += cut
            last = abs(terms[cut - 1])
            break
        total += math.fsum(terms)
        start = stop
        last = abs(terms[-1])
    used = start - 1
    expo = 6.0 * h - 5.0
    if used >= 2 and expo < 0:
        c3 = (h * (2 * h - 1)) ** 3
        # theta(l)^3 ~ c3 l^{6H-6}: add the midpoint-integral estimate of the
        # remaining tail and keep its full size as the error bound
        tail = c3 * (used + 0.5) ** expo / (-expo)
        total += tail
        bound = abs(c3) * used**expo / (-expo)
    else:
        bound = last
    return SeriesValue(float(total), float(bound), int(used))


def sigma_h_squared_series(h: float, mode: str = "variance_limit", max_terms: int = 10**7) -> SeriesValue:
    """Limit variance constant of the cubic variation, with a truncation bound.

    ``paper_series``: the closed series ``4/3 + (1/3) sum_{l>=1} theta(l)^3``.

    ``variance_limit``: the limit of ``Var[n^{-1/2} sum H_3(n^H dB)]``
    derived from ``E[X^3 Y^3] = 6 rho^3 + 9 rho``; i.e.
    ``15 + 2 sum_{l>=1} (6 theta^3 + 9 theta)`` with the telescoped
    ``sum theta = -1/2``, which reduces to ``6 + 12 sum theta^3``. For
    ``H < 1/2`` this is also the limit variance of the raw cubic variation.
    """
    if not 0.0 < h < 0.75:
        raise ValueError(f"sigma_H^2 requires 0 < h < 3/4, got {h}")
    if mode not in SIGMA_H_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {SIGMA_H_MODES}")
    s3 = cubed_theta_sum(h, max_terms=max_terms)
    if mode == "paper_series":
        return SeriesValue(4.0 / 3.0 + s3.value / 3.0, s3.tail_bound / 3.0, s3.terms)
    telescoped = -0.5
    value = 15.0 + 12.0 * s3.value + 18.0 * telescoped
    return SeriesValue(value, 12.0 * s3.tail_bound, s3.terms)


def sigma_h_squared(h: float, mode: str = "variance_limit") -> float:
    return sigma_h_squared_series(h, mode).value


def even_moment_constant(m: int) -> int:
    """``E[N^m] = m! / (2^{m/2} (m/2)!)`` for even ``m``."""
    if m % 2:
        raise ValueError("even m required")
    return math.factorial(m) // (2 ** (m // 2) * math.factorial(m // 2))


def power_variation(path, m: int, t_index: int | None = None) -> np.ndarray | float:
    """Unnormalized ``sum_{k < t_index} (dB_k)^m``."""
    if m < 1:
        raise ValueError("m must be a positive integer")
    inc = _increments(path)
    if t_index is not None:
        if not 0 <= t_index <= inc.shape[-1]:
            raise ValueError(f"t_index {t_index} outside [0, {inc.shape[-1]}]")
        inc = inc[..., :t_index]
    if m == 1:
        vals = _values(path)
        end = vals.shape[-1] - 1 if t_index is None else t_index
        out = vals[..., end] - vals[..., 0]
    elif inc.shape[-1] == 0:
        out = np.zeros(inc.shape[:-1])
    else:
        # sequential accumulation, reproducible by a plain loop
        out = np.cumsum(inc**m, axis=-1)[..., -1]
    return out if np.ndim(out) else float(out)


def variation_process(path, m: int) -> np.ndarray:
    """Cumulative ``V_m(t_k)`` for every grid index ``k`` (starts at 0)."""
    inc = _increments(path)
    out = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc**m, axis=-1, out=out[..., 1:])
    return out


def second_order_quadratic_variation(path) -> np.ndarray | float:
    """``sum_{k=1}^{n-1} (B_{k+1} - 2 B_k + B_{k-1})^2``."""
    vals = _values(path)
    if vals.shape[-1] < 3:
        raise ValueError("second-order variation needs n >= 2")
    d2 = vals[..., 2:] - 2.0 * vals[..., 1:-1] + vals[..., :-2]
    out = np.sum(d2 * d2, axis=-1)
    return out if np.ndim(out) else float(out)


def weighted_variation(
    path,
    h_fn: Callable[[np.ndarray], np.ndarray],
    m: int,
    corrected: bool = False,
    h_prime: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray | float:
    """Weighted m-th order variation ``sum h(B_k) (dB_k)^m``.

    With ``corrected=True`` the weight becomes ``h(B_k) + h'(B_k) dB_k / 2``,
    the centring that makes odd-order sums vanish faster.
    """
    vals = _values(path)
    left = vals[..., :-1]
    inc = np.diff(vals, axis=-1)
    weight = np.asarray(h_fn(left), dtype=float)
    if corrected:
        if h_prime is None:
            raise ValueError("corrected variation needs h_prime")
        weight = weight + 0.5 * np.asarray(h_prime(left), dtype=float) * inc
    out = np.sum(weight * inc**m, axis=-1)
    return out if np.ndim(out) else float(out)


def normalized_power_variation(path, m: int, h: float | None = None, clt: bool = False):
    """``n^{mH-1} V_m`` (law of large numbers scale) or ``n^{mH-1/2} V_m`` (CLT scale)."""
    hh = _hurst_of(path, h)
    n = _values(path).shape[-1] - 1
    expo = m * hh - (0.5 if clt else 1.0)
    return n**expo * power_variation(path, m)


def hermite_cubic_variation(path, h: float | None = None):
    """Third-chaos part ``n^{-1/2} sum H_3(n^H dB_k)`` of the cubic variation.

    Equal to ``n^{3H-1/2} sum (dB)^3 - 3 n^{H-1/2} B_1``.
    """
    hh = _hurst_of(path, h)
    inc = _increments(path)
    n = inc.shape[-1]
    z = n**hh * inc
    out = np.sum(z**3 - 3.0 * z, axis=-1) / math.sqrt(n)
    return out if np.ndim(out) else float(out)


def exact_cubic_variance(h: float, n: int) -> tuple[float, float]:
    """Finite-n variances of ``n^{-1/2} sum (n^H dB)^3``: (full, third chaos).

    Both follow from the increment correlations alone; the full variance
    carries the first-chaos term ``9 n^{2H-1}``.
    """
    lags = np.arange(1, n)
    th = theta(h, lags)
    weights = (n - lags) / n
    chaos3 = 6.0 * (1.0 + 2.0 * math.fsum(weights * th**3))
    return chaos3 + 9.0 * n ** (2 * h - 1), chaos3
