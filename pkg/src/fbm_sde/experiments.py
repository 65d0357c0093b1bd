"""Monte Carlo harness: rate regressions, a.s. limits, limit laws and calibration.

Work is split into fixed-size chunks of path indices. Each chunk derives its
randomness from ``(master_seed, path_index)`` only and results are reduced
in chunk order, so outputs do not depend on the thread count.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import rng
from .fbm import DaviesHarteSampler, format_float, sample_paths, subsample
from .flow import Coefficients, FlowMap, solve_reference
from .malliavin import euler_limit_functional, euler_limit_sup
from .schemes import SCHEMES, run_scheme
from .variations import (
    SIGMA_H_MODES,
    exact_cubic_variance,
    hermite_cubic_variation,
    normalized_power_variation,
    sigma_h_squared,
)

STATISTICS = ("pointwise_t1", "sup_norm", "mean_square")
THREADS_ENV = "FBM_SDE_THREADS"
# offset keeping calibration paths disjoint from the paths of the main sample
CALIBRATION_OFFSET = 1 << 40
MAX_EXCLUDED_FRACTION = 0.01
SUP_GRID = 1024


class ExperimentError(RuntimeError):
    """Numerical failure of an experiment (e.g. too many implicit-step failures)."""


class HypothesisWarning(UserWarning):
    """The coefficients fall outside the hypotheses of the checked statement."""


def theoretical_exponent(scheme: str, h: float) -> float:
    if scheme in ("euler", "modified_euler_linear"):
        return 2.0 * h - 1.0
    if scheme == "crank_nicholson":
        return 3.0 * h - 0.5
    raise ValueError(f"unknown scheme {scheme!r}")


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass
class ExperimentConfig:
    h: float
    coefficients: dict
    scheme: str = "euler"
    n_list: list = field(default_factory=lambda: [2**k for k in range(6, 13)])
    n_paths: int = 200
    master_seed: int = 0
    statistic: str = "pointwise_t1"
    refinement: int = 8
    x0: float = 1.0
    reference_method: str = "auto"
    chunk_size: int = 128
    slope_band: list | None = None
    ratio_tolerance: float = 0.15
    ks_alpha: float = 0.01
    sigma_h_mode: str | None = None
    calibration_n: int = 2**14
    calibration_paths: int = 10**4
    rate_exponent: float | None = None

    def __post_init__(self):
        self.n_list = [int(n) for n in self.n_list]
        if not self.n_list or any(not _is_power_of_two(n) for n in self.n_list):
            raise ValueError(f"n_list must hold powers of two, got {self.n_list}")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError("n_list must be strictly increasing")
        if self.n_paths < 2:
            raise ValueError("n_paths must be >= 2")
        if not 0.0 < self.h < 1.0:
            raise ValueError(f"h must lie in (0, 1), got {self.h}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")
        if self.sigma_h_mode is not None and self.sigma_h_mode not in SIGMA_H_MODES:
            raise ValueError(f"unknown sigma_h_mode {self.sigma_h_mode!r}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    @property
    def exponent(self) -> float:
        if self.rate_exponent is not None:
            return float(self.rate_exponent)
        return theoretical_exponent(self.scheme, self.h)

    def build_coefficients(self) -> Coefficients:
        return Coefficients.from_spec(self.coefficients)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class ErrorSample:
    path_index: int
    n: int
    raw_error: float
    normalized_error: float
    limit_value: float = math.nan


@dataclass
class RateReport:
    n_list: list
    median: np.ndarray
    q1: np.ndarray
    q3: np.ndarray
    slope: float
    slope_halfwidth: float
    intercept: float
    theoretical_exponent: float
    n_excluded: list
    samples: list

    @property
    def slope_interval(self) -> tuple[float, float]:
        return self.slope - self.slope_halfwidth, self.slope + self.slope_halfwidth


# ----------------------------------------------------------------------
# parallel plumbing


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def chunk_ranges(n_paths: int, chunk_size: int, offset: int = 0) -> list[range]:
    return [range(offset + s, offset + min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]


def map_chunks(fn: Callable[[range], object], chunks: Sequence[range], threads: int | None = None) -> list:
    """Apply ``fn`` to every chunk; results come back in chunk order."""
    threads = resolve_threads(threads)
    if threads == 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


# ----------------------------------------------------------------------
# statistics helpers


def fit_log_log_slope(n_values, errors, confidence: float = 0.95) -> tuple[float, float, float]:
    """Least-squares fit of ``log2 err`` on ``log2 n``.

    Returns ``(order, halfwidth, intercept)`` where ``order`` is the negated
    slope, so ``err ~ n^-order``, and ``halfwidth`` is the Student-t
    confidence half-width of the slope.
    """
    x = np.log2(np.asarray(n_values, dtype=float))
    y = np.log2(np.asarray(errors, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two grid sizes for a slope")
    res = stats.linregress(x, y)
    if x.size > 2:
        half = float(stats.t.ppf(0.5 + confidence / 2, x.size - 2) * res.stderr)
    else:
        half = math.inf
    return float(-res.slope), half, float(res.intercept)


def ks_two_sample(a, b) -> tuple[float, float]:
    res = stats.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return float(res.statistic), float(res.pvalue)


def ks_standard_normal(x) -> tuple[float, float]:
    res = stats.kstest(np.asarray(x, dtype=float), "norm")
    return float(res.statistic), float(res.pvalue)


def _quartiles(x):
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return float(med), float(q1), float(q3)


# ----------------------------------------------------------------------
# coupled simulation


def _coupled_errors(cfg: ExperimentConfig, coeffs: Coefficients, flow: FlowMap, indices: range, n_list, want_limit: str | None = None):
    """Scheme errors for one chunk at each ``n``, all from the finest path.

    Returns ``{n: (raw_errors, failed_mask, terminal_reference)}`` and, if
    requested, per-path limit values at the finest ``n``.
    """
    n_max = max(n_list)
    paths = sample_paths(cfg.h, n_max, cfg.master_seed, indices)
    ref = solve_reference(flow, paths, cfg.x0, cfg.refinement, cfg.reference_method)
    out = {}
    for n in n_list:
        r = ref.restrict(n) if n != n_max else ref
        res = run_scheme(cfg.scheme, coeffs, subsample(paths, n), cfg.x0, on_failure="nan")
        diff = res.values - r.x_values
        if cfg.statistic == "sup_norm":
            raw = np.max(np.abs(diff), axis=-1)
        else:
            raw = diff[..., -1]
        failed = ~np.isfinite(raw)
        if res.failed is not None:
            failed |= res.failed
        out[n] = (raw, failed, r.x_values[..., -1])
    limit = None
    if want_limit == "functional":
        limit = euler_limit_functional(ref, coeffs)
    elif want_limit == "sup":
        limit = euler_limit_sup(ref, coeffs)
    elif want_limit == "modified":
        g = coeffs.params["gamma"]
        limit = -(g * g / 4.0) * (4.0 - 2.0 ** (2 * cfg.h)) * ref.x_values[..., -1]
    return out, limit


def _check_compat(cfg: ExperimentConfig, coeffs: Coefficients) -> None:
    if cfg.scheme == "crank_nicholson" and not coeffs.drift_free:
        raise ValueError("crank_nicholson requires b = 0")
    if cfg.scheme == "modified_euler_linear" and coeffs.kind != "linear":
        raise ValueError("modified_euler_linear requires the linear kind")


def _collect(cfg, results, n_list):
    raw = {n: np.concatenate([r[0][n][0] for r in results]) for n in n_list}
    failed = {n: np.concatenate([r[0][n][1] for r in results]) for n in n_list}
    xref = {n: np.concatenate([r[0][n][2] for r in results]) for n in n_list}
    for n in n_list:
        frac = failed[n].mean()
        if frac > MAX_EXCLUDED_FRACTION:
            raise ExperimentError(f"{failed[n].sum()} of {failed[n].size} paths failed the implicit solve at n={n}")
    return raw, failed, xref


def run_rate_experiment(cfg: ExperimentConfig, threads: int | None = None) -> RateReport:
    coeffs = cfg.build_coefficients()
    _check_compat(cfg, coeffs)
    flow = FlowMap(coeffs)
    chunks = chunk_ranges(cfg.n_paths, cfg.chunk_size)
    results = map_chunks(lambda c: _coupled_errors(cfg, coeffs, flow, c, cfg.n_list), chunks, threads)
    raw, failed, _ = _collect(cfg, results, cfg.n_list)
    expo = cfg.exponent
    med, q1, q3, samples = [], [], [], []
    for n in cfg.n_list:
        keep = ~failed[n]
        m, a, b = _quartiles(np.abs(raw[n][keep]))
        med.append(m)
        q1.append(a)
        q3.append(b)
        for i in np.nonzero(keep)[0]:
            e = float(raw[n][i])
            samples.append(ErrorSample(int(i), n, e, e * n**expo))
    order, half, icpt = fit_log_log_slope(cfg.n_list, med)
    return RateReport(
        list(cfg.n_list),
        np.array(med),
        np.array(q1),
        np.array(q3),
        order,
        half,
        icpt,
        expo,
        [int(failed[n].sum()) for n in cfg.n_list],
        samples,
    )


@dataclass
class AsLimitTable:
    n: int
    raw_error: np.ndarray
    normalized_error: np.ndarray
    limit_value: np.ndarray
    ratio: np.ndarray
    n_skipped: int
    degenerate: bool
    statistic: str

    @property
    def median_abs_deviation(self) -> float:
        r = self.ratio[np.isfinite(self.ratio)]
        return float(np.median(np.abs(r - 1.0))) if r.size else math.nan

    @property
    def median_ratio(self) -> float:
        r = self.ratio[np.isfinite(self.ratio)]
        return float(np.median(r)) if r.size else math.nan

    @property
    def status(self) -> str:
        return "degenerate: scheme exact" if self.degenerate else "ok"

    def samples(self) -> list[ErrorSample]:
        return [
            ErrorSample(i, self.n, float(r), float(ne), float(lv))
            for i, (r, ne, lv) in enumerate(zip(self.raw_error, self.normalized_error, self.limit_value))
        ]


def run_as_limit_check(cfg: ExperimentConfig, threads: int | None = None, skip_below: float = 1e-8) -> AsLimitTable:
    """Per-path ratio of the normalized Euler error to its a.s. limit at the largest ``n``."""
    coeffs = cfg.build_coefficients()
    _check_compat(cfg, coeffs)
    if cfg.scheme == "crank_nicholson":
        raise ValueError("a.s. limits are defined for the Euler-type schemes")
    if cfg.scheme == "modified_euler_linear":
        if cfg.statistic == "sup_norm":
            raise ValueError("no sup-norm limit is available for the modified scheme")
        want = "modified"
    else:
        want = "sup" if cfg.statistic == "sup_norm" else "functional"
    flow = FlowMap(coeffs)
    n = cfg.n_list[-1]
    chunks = chunk_ranges(cfg.n_paths, cfg.chunk_size)
    results = map_chunks(lambda c: _coupled_errors(cfg, coeffs, flow, c, [n], want), chunks, threads)
    raw, _, xref = _collect(cfg, results, [n])
    limit = np.concatenate([np.atleast_1d(r[1]) for r in results])
    expo = cfg.exponent
    normalized = raw[n] * n**expo
    degenerate = bool(np.all(np.abs(raw[n]) <= 1e-12 * (1.0 + np.abs(xref[n]))))
    skip = np.abs(limit) < skip_below
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(skip, np.nan, normalized / limit)
    return AsLimitTable(n, raw[n], normalized, limit, ratio, int(skip.sum()), degenerate, cfg.statistic)


# ----------------------------------------------------------------------
# sigma_H calibration


@dataclass
class CalibrationReport:
    h: float
    n: int
    n_paths: int
    empirical_variance: float
    standard_error: float
    hermite_variance: float
    hermite_standard_error: float
    mode_values: dict
    literal_matches: list
    finite_n_variance: float
    finite_n_chaos3_variance: float
    hermite_matches: list
    chosen_mode: str

    @property
    def literal_unique(self) -> bool:
        return len(self.literal_matches) == 1


def _variance_se(x: np.ndarray) -> tuple[float, float]:
    """Sample variance and its standard error from the fourth central moment."""
    m = x.size
    c = x - x.mean()
    var = float(np.sum(c * c) / (m - 1))
    m4 = float(np.mean(c**4))
    se = math.sqrt(max(m4 - var * var * (m - 3) / (m - 1), 0.0) / m)
    return var, se


def calibrate_sigma_h(
    h: float,
    n: int = 2**14,
    n_paths: int = 10**4,
    master_seed: int = 0,
    threads: int | None = None,
    chunk_size: int = 256,
    n_se: float = 3.0,
) -> CalibrationReport:
    """Empirical variance of ``n^{3H-1/2} sum (dB)^3`` against both sigma_H^2 modes.

    The mode used downstream is the unique one within ``n_se`` standard
    errors of the raw statistic's variance; if that is not unique it falls
    back to the unique mode matching the third-chaos projection
    ``n^{-1/2} sum H_3(n^H dB)``, whose finite-n variance carries no
    first-chaos term, and finally to the nearest mode.
    """

    def work(idx: range):
        paths = sample_paths(h, n, master_seed, idx)
        return normalized_power_variation(paths, 3, h=h, clt=True), hermite_cubic_variation(paths, h=h)

    res = map_chunks(work, chunk_ranges(n_paths, chunk_size, CALIBRATION_OFFSET), threads)
    raw = np.concatenate([r[0] for r in res])
    herm = np.concatenate([r[1] for r in res])
    var, se = _variance_se(raw)
    hvar, hse = _variance_se(herm)
    values = {mode: sigma_h_squared(h, mode) for mode in SIGMA_H_MODES}
    literal = [m for m, v in values.items() if abs(var - v) <= n_se * se]
    hermite = [m for m, v in values.items() if abs(hvar - v) <= n_se * hse]
    if len(literal) == 1:
        chosen = literal[0]
    elif len(hermite) == 1:
        chosen = hermite[0]
    else:
        chosen = min(values, key=lambda m: abs(values[m] - var))
    full, chaos3 = exact_cubic_variance(h, n)
    return CalibrationReport(h, n, n_paths, var, se, hvar, hse, values, literal, full, chaos3, hermite, chosen)


# ----------------------------------------------------------------------
# limit laws


@dataclass
class LimitLawReport:
    ks_stat: float
    p_value: float
    n_a: int
    n_b: int
    sigma_h_mode: str
    sigma_h: float
    independence_ks_stat: float
    independence_p_value: float
    functional: bool
    degenerate: bool
    max_abs_a: float
    n_excluded: int
    sample_a: np.ndarray
    sample_b: np.ndarray
    calibration: CalibrationReport | None = None

    def to_json_dict(self) -> dict:
        return {
            "ks_stat": self.ks_stat,
            "p_value": self.p_value,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "sigma_h_mode": self.sigma_h_mode,
        }


def _fresh_limit_sample(cfg: ExperimentConfig, coeffs: Coefficients, flow: FlowMap, scale: float, functional: bool, indices: range):
    out = np.empty(len(indices))
    sampler = DaviesHarteSampler(cfg.h, SUP_GRID) if functional else None
    for j, i in enumerate(indices):
        g_fbm = rng.path_stream(cfg.master_seed, i, rng.FRESH_ENDPOINT)
        g_aux = rng.path_stream(cfg.master_seed, i, rng.AUXILIARY_GAUSSIAN if not functional else rng.AUXILIARY_BROWNIAN)
        if functional:
            b = sampler.sample_values(g_fbm)
            x = flow.phi(np.full(b.shape, cfg.x0), b)
            w = np.zeros(SUP_GRID + 1)
            np.cumsum(g_aux.standard_normal(SUP_GRID) / math.sqrt(SUP_GRID), out=w[1:])
            out[j] = scale * np.max(np.abs(coeffs.sigma(x) * w))
        else:
            b1 = g_fbm.standard_normal()
            x1 = flow.phi(cfg.x0, b1)
            out[j] = scale * float(coeffs.sigma(x1)) * g_aux.standard_normal()
    return out


def run_limit_law_test(
    cfg: ExperimentConfig,
    threads: int | None = None,
    functional: bool | None = None,
    calibration: CalibrationReport | None = None,
) -> LimitLawReport:
    """Two-sample KS of the normalized Crank-Nicholson error against its mixed Gaussian limit."""
    coeffs = cfg.build_coefficients()
    if cfg.scheme != "crank_nicholson":
        raise ValueError("the limit law concerns the Crank-Nicholson scheme")
    _check_compat(cfg, coeffs)
    alpha = coeffs.quadratic_alpha
    if functional is None:
        functional = cfg.statistic == "sup_norm"
    flow = FlowMap(coeffs)
    n = cfg.n_list[-1]
    stat_cfg = cfg if functional == (cfg.statistic == "sup_norm") else ExperimentConfig.from_dict(
        {**cfg.to_dict(), "statistic": "sup_norm" if functional else "pointwise_t1"}
    )
    chunks = chunk_ranges(cfg.n_paths, cfg.chunk_size)
    results = map_chunks(lambda c: _coupled_errors(stat_cfg, coeffs, flow, c, [n]), chunks, threads)
    raw, failed, xref = _collect(stat_cfg, results, [n])
    keep = ~failed[n]
    a = raw[n][keep] * n**cfg.exponent
    x1 = xref[n][keep]

    if cfg.sigma_h_mode is not None:
        mode = cfg.sigma_h_mode
    else:
        if calibration is None:
            calibration = calibrate_sigma_h(cfg.h, cfg.calibration_n, cfg.calibration_paths, cfg.master_seed, threads)
        mode = calibration.chosen_mode
    sigma_h = math.sqrt(sigma_h_squared(cfg.h, mode))
    scale = sigma_h * abs(alpha) / 12.0

    if alpha == 0.0:
        return LimitLawReport(
            math.nan, math.nan, int(a.size), 0, mode, sigma_h, math.nan, math.nan, functional, True,
            float(np.max(np.abs(a))) if a.size else 0.0, int(failed[n].sum()), a, np.zeros(0), calibration,
        )

    b_chunks = map_chunks(lambda c: _fresh_limit_sample(cfg, coeffs, flow, scale, functional, c), chunks, threads)
    b = np.concatenate(b_chunks)
    ks, p = ks_two_sample(a, b)
    if functional:
        ind_ks, ind_p = math.nan, math.nan
    else:
        s1 = coeffs.sigma(x1)
        ok = s1 != 0
        ind_ks, ind_p = ks_standard_normal(a[ok] / (scale * s1[ok]))
    return LimitLawReport(
        ks, p, int(a.size), int(b.size), mode, sigma_h, ind_ks, ind_p, functional, False,
        float(np.max(np.abs(a))), int(failed[n].sum()), a, b, calibration,
    )


# ----------------------------------------------------------------------
# mean-square check


@dataclass
class MeanSquareReport:
    n: int
    lhs: float
    rhs: float
    hypothesis_ok: bool

    @property
    def relative_gap(self) -> float:
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.rhs - 1.0


def run_mean_square_check(cfg: ExperimentConfig, threads: int | None = None) -> MeanSquareReport:
    """``n^{2H-1} (E|X^n_1 - X_1|^2)^{1/2}`` against ``1/2 (E|int sigma'(X_s) D_s X_1 ds|^2)^{1/2}``."""
    coeffs = cfg.build_coefficients()
    if cfg.scheme != "euler":
        raise ValueError("the mean-square check concerns the Euler scheme")
    flow = FlowMap(coeffs)
    n = cfg.n_list[-1]

    point_cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "statistic": "pointwise_t1"})

    def work(idx):
        errs, lim = _coupled_errors(point_cfg, coeffs, flow, idx, [n], "functional")
        return errs[n][0], lim

    res = map_chunks(work, chunk_ranges(cfg.n_paths, cfg.chunk_size), threads)
    err = np.concatenate([r[0] for r in res])
    lim = np.concatenate([np.atleast_1d(r[1]) for r in res])
    bounded = coeffs.kind in ("constant", "bounded_smooth")
    if coeffs.kind == "constant":
        floor = abs(coeffs.params["c"])
    elif coeffs.kind == "bounded_smooth":
        floor = coeffs.params["a"] - coeffs.params["c"]
    else:
        floor = 0.0
    hypothesis_ok = bounded and floor > 0
    if not hypothesis_ok:
        warnings.warn(
            f"{coeffs.kind} coefficients are not bounded with sigma bounded away from 0; gap is informational",
            HypothesisWarning,
            stacklevel=2,
        )
    lhs = n ** cfg.exponent * math.sqrt(float(np.mean(err * err)))
    # lim already carries the factor -1/2
    rhs = math.sqrt(float(np.mean(lim * lim)))
    return MeanSquareReport(n, lhs, rhs, hypothesis_ok)


# ----------------------------------------------------------------------
# power variations


def run_variation_sample(
    h: float,
    n: int,
    m: int,
    n_paths: int,
    master_seed: int = 0,
    clt: bool = False,
    threads: int | None = None,
    chunk_size: int = 256,
) -> np.ndarray:
    """Normalized ``m``-th power variation of ``n_paths`` independent paths."""

    def work(idx):
        return normalized_power_variation(sample_paths(h, n, master_seed, idx), m, h=h, clt=clt)

    return np.concatenate(map_chunks(work, chunk_ranges(n_paths, chunk_size), threads))


# ----------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    return str(v)


def write_report_csv(path, rows: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("key,value\n")
        for k, v in rows.items():
            fh.write(f"{k},{_fmt(v)}\n")


def write_samples_csv(path, samples: Sequence[ErrorSample]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("path_index,n,raw_error,normalized_error,limit_value\n")
        for s in samples:
            fh.write(
                f"{s.path_index},{s.n},{format_float(s.raw_error)},{format_float(s.normalized_error)},{format_float(s.limit_value)}\n"
            )


def write_ratecurve_csv(path, report: RateReport) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("log2n,log2err_median,log2err_q1,log2err_q3\n")
        for n, m, a, b in zip(report.n_list, report.median, report.q1, report.q3):
            fh.write(f"{format_float(math.log2(n))},{format_float(math.log2(m))},{format_float(math.log2(a))},{format_float(math.log2(b))}\n")


def write_gnuplot_script(path, report: RateReport, csv_name: str = "ratecurve.csv") -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(
            "set datafile separator ','\n"
            "set key top right\n"
            "set xlabel 'log2 n'\n"
            "set ylabel 'log2 |error|'\n"
            f"slope = {format_float(-report.slope)}\n"
            f"icpt = {format_float(report.intercept)}\n"
            f"plot '{csv_name}' every ::1 using 1:2:3:4 with yerrorlines title 'median (quartiles)', \\\n"
            "     icpt + slope * x with lines dashtype 2 title 'fit'\n"
        )


def rate_report_rows(cfg: ExperimentConfig, report: RateReport) -> dict:
    rows = {
        "experiment": "rate",
        "scheme": cfg.scheme,
        "kind": cfg.coefficients.get("kind"),
        "h": cfg.h,
        "n_paths": cfg.n_paths,
        "master_seed": cfg.master_seed,
        "statistic": cfg.statistic,
        "slope": report.slope,
        "slope_halfwidth": report.slope_halfwidth,
        "theoretical_exponent": report.theoretical_exponent,
    }
    for n, k in zip(report.n_list, report.n_excluded):
        rows[f"excluded_n{n}"] = k
    if cfg.slope_band is not None:
        lo, hi = cfg.slope_band
        rows["slope_band_lo"] = float(lo)
        rows["slope_band_hi"] = float(hi)
        rows["slope_in_band"] = bool(lo <= report.slope <= hi)
    return rows
