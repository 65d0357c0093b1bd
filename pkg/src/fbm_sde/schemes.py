"""Euler, modified Euler and Crank-Nicholson schemes on equidistant grids.

Every scheme accepts an :class:`~fbm_sde.fbm.FbmPath` or a raw value array.
A ``(n_paths, n + 1)`` array runs all paths at once; the recursion is then
vectorized across paths and sequential in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fbm import Grid, format_float
from .flow import Coefficients

SCHEMES = ("euler", "modified_euler_linear", "crank_nicholson")

NEWTON_RTOL = 1e-13
NEWTON_MAX_ITER = 50
RESIDUAL_RTOL = 1e-13


class StepNotInvertible(ArithmeticError):
    """``x -> x - dB sigma(x) / 2`` is not invertible at step ``k``."""

    def __init__(self, k: int, detail: str = ""):
        super().__init__(f"implicit step {k} is not invertible" + (f": {detail}" if detail else ""))
        self.k = k


class NewtonDivergence(ArithmeticError):
    """Newton and the bisection fallback both failed at step ``k``."""

    def __init__(self, k: int, detail: str = ""):
        super().__init__(f"implicit solve failed at step {k}" + (f": {detail}" if detail else ""))
        self.k = k


@dataclass(frozen=True, eq=False)
class SchemeResult:
    grid: Grid
    values: np.ndarray
    scheme: str
    implicit_diagnostics: np.ndarray | None = None
    failed: np.ndarray | None = field(default=None)

    @property
    def n(self) -> int:
        return self.values.shape[-1] - 1

    @property
    def terminal(self):
        return self.values[..., -1]


def _driver(path):
    vals = np.asarray(getattr(path, "values", path), dtype=float)
    if vals.shape[-1] < 2:
        raise ValueError("path needs at least one step")
    grid = getattr(path, "grid", None)
    if grid is not None and not grid.equidistant:
        raise ValueError("schemes need an equidistant grid")
    n = vals.shape[-1] - 1
    return vals, n, grid if grid is not None else Grid.uniform(n)


def _time_major(vals):
    # (n + 1, ...) so each step reads a contiguous slice
    return np.ascontiguousarray(np.moveaxis(np.diff(vals, axis=-1), -1, 0))


def _finish(x_t):
    return np.ascontiguousarray(np.moveaxis(x_t, 0, -1))


def euler_path(coeffs: Coefficients, path, x0: float) -> SchemeResult:
    """``X_{k+1} = X_k + sigma(X_k) dB_k + b(X_k) / n``."""
    vals, n, grid = _driver(path)
    inc = _time_major(vals)
    sig, b = coeffs.sigma, coeffs.b
    dt = 1.0 / n
    x_t = np.empty((n + 1,) + vals.shape[:-1])
    x = np.full(vals.shape[:-1], float(x0))
    x_t[0] = x
    drift = not coeffs.drift_free
    for k in range(n):
        step = sig(x) * inc[k]
        if drift:
            step = step + b(x) * dt
        x = x + step
        x_t[k + 1] = x
    return SchemeResult(grid, _finish(x_t), "euler")


def modified_euler_linear(gamma: float, beta: float, path, x0: float) -> SchemeResult:
    """Euler for ``dX = gamma X dB + beta X dt`` plus ``(gamma^2 / 2) X_k dB_k dB_{k-1}``.

    The lagged increment at ``k = 0`` is taken as 0.
    """
    vals, n, grid = _driver(path)
    inc = _time_major(vals)
    lagged = np.zeros_like(inc)
    lagged[1:] = inc[:-1]
    factors = 1.0 + gamma * inc + 0.5 * gamma * gamma * inc * lagged + beta / n
    x_t = np.empty((n + 1,) + vals.shape[:-1])
    x_t[0] = float(x0)
    # sequential product, same rounding as the literal recursion
    x = x_t[0].copy()
    for k in range(n):
        x = x * factors[k]
        x_t[k + 1] = x
    return SchemeResult(grid, _finish(x_t), "modified_euler_linear")


def _bisect(g, lo, hi, k):
    glo = g(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        left = np.sign(gm) == np.sign(glo)
        lo = np.where(left, mid, lo)
        glo = np.where(left, gm, glo)
        hi = np.where(left, hi, mid)
        if np.all(hi - lo <= 1e-16 * (1.0 + np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def _implicit_step(coeffs, x, db, k):
    """Solve ``y - db sigma(y) / 2 = x + db sigma(x) / 2`` for ``y``.

    Returns the root, the Newton iteration count per path and a mask of
    paths whose step could not be inverted.
    """
    sig, dsig = coeffs.sigma, coeffs.dsigma
    half = 0.5 * db
    rhs = x + half * sig(x)
    y = rhs.copy()
    iters = np.zeros(np.shape(x), dtype=np.int64)
    active = np.ones(np.shape(x), dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        g = y - half * sig(y) - rhs
        dg = 1.0 - half * dsig(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            dy = np.where(active, g / dg, 0.0)
        bad = ~np.isfinite(dy)
        dy = np.where(bad, 0.0, dy)
        iters += active
        y = y - dy
        active &= ~bad & (np.abs(dy) > NEWTON_RTOL * (1.0 + np.abs(y)))
        if not np.any(active):
            break
    resid = np.abs(y - half * sig(y) - rhs)
    ok = np.isfinite(y) & (resid < RESIDUAL_RTOL * (1.0 + np.abs(rhs)))
    if not np.all(ok):
        # bisection on a bracket around the explicit predictor, widened until it brackets
        def g_fn(z):
            return z - half * sig(z) - rhs

        width = 4.0 * np.abs(db) * np.maximum(np.abs(sig(rhs)), 1.0)
        lo, hi = rhs - width, rhs + width
        for _ in range(60):
            unbracketed = np.sign(g_fn(lo)) == np.sign(g_fn(hi))
            if not np.any(unbracketed & ~ok):
                break
            lo = np.where(unbracketed, rhs - 2 * (rhs - lo), lo)
            hi = np.where(unbracketed, rhs + 2 * (hi - rhs), hi)
        y_b = _bisect(g_fn, lo, hi, k)
        y = np.where(ok, y, y_b)
        resid = np.abs(g_fn(y))
        ok = np.isfinite(y) & (resid < RESIDUAL_RTOL * (1.0 + np.abs(rhs)))
    # the root is only meaningful where the implicit map is increasing
    not_inv = ~ok | (1.0 - half * dsig(y) <= 0.0)
    return y, iters, not_inv


def crank_nicholson_path(
    coeffs: Coefficients,
    path,
    x0: float,
    on_failure: str = "raise",
) -> SchemeResult:
    """``X_{k+1} - dB_k sigma(X_{k+1}) / 2 = X_k + dB_k sigma(X_k) / 2``.

    Linear and constant ``sigma`` use the closed-form step; otherwise Newton
    with analytic derivative and a bisection fallback. With
    ``on_failure="nan"`` paths whose step cannot be inverted are set to NaN
    from that step on and flagged in ``failed``; with ``"raise"`` the first
    such step raises :class:`StepNotInvertible`.
    """
    if not coeffs.drift_free:
        raise ValueError("the Crank-Nicholson scheme is defined here for b = 0")
    if on_failure not in ("raise", "nan"):
        raise ValueError("on_failure must be 'raise' or 'nan'")
    vals, n, grid = _driver(path)
    inc = _time_major(vals)
    shape = vals.shape[:-1]
    x_t = np.empty((n + 1,) + shape)
    x = np.full(shape, float(x0))
    x_t[0] = x
    failed = np.zeros(shape, dtype=bool)
    diag = np.zeros(n, dtype=np.int64)

    if coeffs.kind == "constant":
        c = coeffs.params["c"]
        for k in range(n):
            x = x + c * inc[k]
            x_t[k + 1] = x
        return SchemeResult(grid, _finish(x_t), "crank_nicholson", diag, failed)

    if coeffs.kind == "linear":
        g = coeffs.params["gamma"]
        for k in range(n):
            denom = 1.0 - 0.5 * g * inc[k]
            bad = denom <= 0.0
            if np.any(bad):
                if on_failure == "raise":
                    raise StepNotInvertible(k, "1 - gamma dB / 2 <= 0")
                failed |= bad
            x = x * ((1.0 + 0.5 * g * inc[k]) / np.where(bad, np.nan, denom))
            x_t[k + 1] = x
        return SchemeResult(grid, _finish(x_t), "crank_nicholson", diag, failed)

    for k in range(n):
        live = ~failed
        if np.all(live):
            y, iters, bad = _implicit_step(coeffs, x, inc[k], k)
        else:
            y = np.full(shape, np.nan)
            bad = np.zeros(shape, dtype=bool)
            iters = np.zeros(shape, dtype=np.int64)
            if np.any(live):
                y[live], iters[live], bad[live] = _implicit_step(coeffs, x[live], inc[k][live], k)
        diag[k] = int(np.max(iters)) if iters.size else 0
        if np.any(bad):
            if on_failure == "raise":
                raise StepNotInvertible(k)
            failed |= bad
            y = np.where(bad, np.nan, y)
        x = y
        x_t[k + 1] = x
    return SchemeResult(grid, _finish(x_t), "crank_nicholson", diag, failed)


def run_scheme(name: str, coeffs: Coefficients, path, x0: float, on_failure: str = "raise") -> SchemeResult:
    if name == "euler":
        return euler_path(coeffs, path, x0)
    if name == "crank_nicholson":
        return crank_nicholson_path(coeffs, path, x0, on_failure=on_failure)
    if name == "modified_euler_linear":
        if coeffs.kind != "linear":
            raise ValueError("the modified Euler scheme needs linear coefficients")
        return modified_euler_linear(coeffs.params["gamma"], coeffs.params["beta"], path, x0)
    raise ValueError(f"unknown scheme {name!r}; expected one of {SCHEMES}")


def write_scheme_csv(fh, result: SchemeResult, reference=None) -> None:
    """``t,X_scheme[,X_reference,error]`` for a single path."""
    vals = np.asarray(result.values)
    if vals.ndim != 1:
        raise ValueError("CSV export is per path")
    t = result.grid.points
    if reference is None:
        fh.write("t,X_scheme\n")
        for ti, xi in zip(t, vals):
            fh.write(f"{format_float(ti)},{format_float(xi)}\n")
        return
    ref = np.asarray(getattr(reference, "x_values", reference), dtype=float)
    fh.write("t,X_scheme,X_reference,error\n")
    for ti, xi, ri in zip(t, vals, ref):
        fh.write(f"{format_float(ti)},{format_float(xi)},{format_float(ri)},{format_float(xi - ri)}\n")
