"""Malliavin derivative of the solution and the Euler error limits built from it.

``D_s X_t = sigma(X_s) exp(L_t - L_s)`` with the log-cocycle
``L_t = int_0^t b'(X_u) du + int_0^t sigma'(X_u) dB_u``.
All functions take a :class:`~fbm_sde.flow.ReferenceSolution`, possibly
holding a batch of paths along the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import Coefficients, FlowMap, ReferenceSolution

YOUNG_RULES = ("left", "trapezoid")
COCYCLE_METHODS = ("auto", "quadrature", "flow")


def _check_indices(s_index: int, t_index: int, n: int) -> None:
    if not 0 <= s_index <= t_index <= n:
        raise IndexError(f"need 0 <= s_index <= t_index <= {n}, got s={s_index}, t={t_index}")


def young_integral(f_values, path, s_index: int, t_index: int, rule: str = "left"):
    """Riemann-Stieltjes sum of ``f`` against the path between two grid indices.

    ``rule="left"`` is the forward sum ``sum f_i dB_i``; ``"trapezoid"``
    averages the endpoint values and converges faster for smooth
    functionals of the path.
    """
    vals = np.asarray(getattr(path, "values", path), dtype=float)
    f = np.asarray(f_values, dtype=float)
    _check_indices(s_index, t_index, vals.shape[-1] - 1)
    inc = np.diff(vals[..., s_index : t_index + 1], axis=-1)
    if rule == "left":
        w = f[..., s_index:t_index]
    elif rule == "trapezoid":
        w = 0.5 * (f[..., s_index:t_index] + f[..., s_index + 1 : t_index + 1])
    else:
        raise ValueError(f"unknown rule {rule!r}")
    out = np.sum(w * inc, axis=-1)
    return out if np.ndim(out) else float(out)


def _resolve(method: str, coeffs: Coefficients) -> str:
    if method not in COCYCLE_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {COCYCLE_METHODS}")
    if method == "auto":
        return "flow" if coeffs.drift_free else "quadrature"
    if method == "flow" and not coeffs.drift_free:
        raise ValueError("the flow cocycle is only available without drift")
    return method


def log_cocycle(ref: ReferenceSolution, coeffs: Coefficients, method: str = "auto", rule: str = "trapezoid") -> np.ndarray:
    """``L_k`` at every grid index, ``L_0 = 0``.

    ``quadrature`` sums the du-integral by the trapezoid rule and the
    dB-integral by ``rule``. ``flow`` (drift-free only) uses
    ``L_t = log d phi / d x1 (x0, B_t)``, which is the exact value of the
    pathwise integral.
    """
    method = _resolve(method, coeffs)
    x = ref.x_values
    bvals = ref.b_values
    if method == "flow":
        flow = FlowMap(coeffs)
        jac = np.asarray(flow.dphi_dx1(np.full(bvals.shape, ref.x0), bvals), dtype=float)
        return np.log(jac)
    n = x.shape[-1] - 1
    ds = np.asarray(coeffs.dsigma(x), dtype=float)
    inc = np.diff(bvals, axis=-1)
    if rule == "left":
        noise = ds[..., :-1] * inc
    elif rule == "trapezoid":
        noise = 0.5 * (ds[..., :-1] + ds[..., 1:]) * inc
    else:
        raise ValueError(f"unknown rule {rule!r}")
    steps = noise
    if not coeffs.drift_free:
        db = np.asarray(coeffs.db(x), dtype=float)
        steps = steps + 0.5 * (db[..., :-1] + db[..., 1:]) / n
    out = np.zeros(x.shape)
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def malliavin_derivative(
    ref: ReferenceSolution,
    coeffs: Coefficients,
    s_index: int,
    t_index: int,
    method: str = "auto",
    rule: str = "trapezoid",
):
    """``D_s X_t`` at grid indices ``s_index <= t_index``."""
    _check_indices(s_index, t_index, ref.n)
    x_s = ref.x_values[..., s_index]
    if s_index == t_index:
        out = np.asarray(coeffs.sigma(x_s), dtype=float)
    else:
        L = log_cocycle(ref, coeffs, method, rule)
        out = coeffs.sigma(x_s) * np.exp(L[..., t_index] - L[..., s_index])
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True, eq=False)
class DerivativeField:
    """Lower-triangular ``d_matrix[k, i] = D_{i/n} X_{k/n}`` for ``i <= k`` (NaN above)."""

    grid: object
    d_matrix: np.ndarray
    reference: ReferenceSolution


def derivative_field(ref: ReferenceSolution, coeffs: Coefficients, method: str = "auto", rule: str = "trapezoid") -> DerivativeField:
    """Full ``(n + 1) x (n + 1)`` derivative matrix of a single path (O(n^2) memory)."""
    if ref.x_values.ndim != 1:
        raise ValueError("derivative_field is per path")
    L = log_cocycle(ref, coeffs, method, rule)
    sig = np.asarray(coeffs.sigma(ref.x_values), dtype=float)
    d = sig[None, :] * np.exp(L[:, None] - L[None, :])
    d[np.triu_indices_from(d, k=1)] = np.nan
    np.fill_diagonal(d, sig)
    return DerivativeField(ref.grid, d, ref)


def euler_limit_functional(
    ref: ReferenceSolution,
    coeffs: Coefficients,
    t_index: int | None = None,
    method: str = "auto",
    rule: str = "trapezoid",
):
    """``-1/2 int_0^t sigma'(X_s) D_s X_t ds`` by the trapezoid rule on the grid."""
    n = ref.n
    t = n if t_index is None else t_index
    _check_indices(0, t, n)
    if t == 0:
        out = np.zeros(ref.x_values.shape[:-1])
        return out if out.ndim else 0.0
    L = log_cocycle(ref, coeffs, method, rule)
    x = ref.x_values[..., : t + 1]
    integrand = coeffs.dsigma(x) * coeffs.sigma(x) * np.exp(L[..., t : t + 1] - L[..., : t + 1])
    out = -0.5 * np.trapezoid(integrand, dx=1.0 / n, axis=-1)
    return out if np.ndim(out) else float(out)


def limit_functional_process(ref: ReferenceSolution, coeffs: Coefficients, method: str = "auto", rule: str = "trapezoid") -> np.ndarray:
    """``int_0^{t_k} sigma'(X_s) D_s X_{t_k} ds`` for every ``k`` in O(n) memory.

    Uses ``D_s X_t = e^{L_t} sigma(X_s) e^{-L_s}``, so one cumulative
    trapezoid sum serves all ``t``.
    """
    n = ref.n
    L = log_cocycle(ref, coeffs, method, rule)
    shift = L[..., :1]
    L = L - shift
    g = coeffs.dsigma(ref.x_values) * coeffs.sigma(ref.x_values) * np.exp(-L)
    cum = np.zeros(g.shape)
    np.cumsum(0.5 * (g[..., 1:] + g[..., :-1]) / n, axis=-1, out=cum[..., 1:])
    return np.exp(L) * cum


def euler_limit_sup(ref: ReferenceSolution, coeffs: Coefficients, method: str = "auto", rule: str = "trapezoid"):
    """``1/2 max_k |int_0^{k/n} sigma'(X_s) D_s X_{k/n} ds|`` over grid indices."""
    out = 0.5 * np.max(np.abs(limit_functional_process(ref, coeffs, method, rule)), axis=-1)
    return out if np.ndim(out) else float(out)
