"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 statistical
check failed under ``--assert``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import experiments as ex
from .fbm import CholeskyError, CirculantEmbeddingError, format_float, sample_path, write_path_csv
from .flow import DomainError, FlowError, FlowMap, solve_reference
from .schemes import NewtonDivergence, StepNotInvertible, run_scheme, write_scheme_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_STATISTICAL = 0, 1, 2, 3

NUMERICAL_ERRORS = (
    StepNotInvertible,
    NewtonDivergence,
    FlowError,
    DomainError,
    CholeskyError,
    CirculantEmbeddingError,
    ex.ExperimentError,
    FloatingPointError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--h", type=float, help="Hurst index")
    p.add_argument("--n", type=int, help="number of grid steps (finest grid for rate)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--paths", type=int, help="Monte Carlo paths")
    p.add_argument("--scheme", choices=("euler", "modified_euler_linear", "crank_nicholson"))
    p.add_argument("--kind", choices=("constant", "linear", "quadratic_sigma_sq", "bounded_smooth"))
    p.add_argument("--x0", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="output file (fbm, solve, variations) or directory (experiments)")
    p.add_argument("--assert", dest="check", action="store_true", help="exit 3 if the statistical check fails")
    p.add_argument("--threads", type=int, help=f"worker threads (default ${ex.THREADS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbm-sde", description="Simulate fBm-driven SDEs and check their error limits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("fbm", "sample one fBm path to CSV"),
        ("solve", "run a scheme and the reference solution on one path"),
        ("rate", "fit the convergence rate over a range of grid sizes"),
        ("as-limit", "compare normalized Euler errors with their a.s. limit"),
        ("limit-law", "KS test of Crank-Nicholson errors against the mixed Gaussian limit"),
        ("variations", "normalized power variations per path"),
        ("mean-square", "mean-square Euler error against its limit"),
        ("report", "run the config's experiments and write CSV, gnuplot and PNG output"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "variations":
            p.add_argument("--m", type=int, default=3, help="variation order")
            p.add_argument("--clt", action="store_true", help="use the n^{mH-1/2} scaling")
        if name in ("limit-law", "as-limit", "report"):
            p.add_argument("--functional", action="store_true", help="sup-norm version")
    return parser


def _coefficients_from_flags(args, base: dict | None) -> dict:
    spec = dict(base) if base else {"kind": "linear", "gamma": 1.0, "beta": 0.0}
    if args.kind is not None and args.kind != spec.get("kind"):
        spec = {"kind": args.kind}
    kind = spec["kind"]
    if kind == "linear":
        if args.gamma is not None:
            spec["gamma"] = args.gamma
        if args.beta is not None:
            spec["beta"] = args.beta
    elif kind == "quadratic_sigma_sq":
        spec.setdefault("alpha", 1.0)
        for key in ("alpha", "beta", "gamma"):
            if getattr(args, key) is not None:
                spec[key] = getattr(args, key)
    elif kind == "constant":
        if args.gamma is not None:
            spec["c"] = args.gamma
    elif kind == "bounded_smooth":
        if args.beta is not None:
            spec["drift"] = args.beta
    return spec


def build_config(args, command: str) -> ex.ExperimentConfig:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text())
    data.setdefault("h", 0.7)
    data["coefficients"] = _coefficients_from_flags(args, data.get("coefficients"))
    if args.h is not None:
        data["h"] = args.h
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.paths is not None:
        data["n_paths"] = args.paths
    if args.scheme is not None:
        data["scheme"] = args.scheme
    if args.x0 is not None:
        data["x0"] = args.x0
    if getattr(args, "functional", False):
        data["statistic"] = "sup_norm"
    if args.n is not None:
        if command in ("rate", "report"):
            data["n_list"] = [2**k for k in range(6, int(math.log2(args.n)) + 1)] if args.n >= 128 else [args.n // 2, args.n]
        else:
            data["n_list"] = [args.n]
    return ex.ExperimentConfig.from_dict(data)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# subcommands


def cmd_fbm(args) -> int:
    h = 0.7 if args.h is None else args.h
    n = 1024 if args.n is None else args.n
    seed = 0 if args.seed is None else args.seed
    path = sample_path(h, n, seed, 0, method="davies_harte" if n & (n - 1) == 0 else "cholesky")
    write_path_csv(path, args.out or sys.stdout)
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = build_config(args, "solve")
    coeffs = cfg.build_coefficients()
    n = cfg.n_list[-1]
    path = sample_path(cfg.h, n, cfg.master_seed, 0)
    ref = solve_reference(FlowMap(coeffs), path, cfg.x0, cfg.refinement, cfg.reference_method)
    res = run_scheme(cfg.scheme, coeffs, path, cfg.x0)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            write_scheme_csv(fh, res, ref)
    else:
        write_scheme_csv(sys.stdout, res, ref)
    return EXIT_OK


def _band(cfg) -> tuple[float, float]:
    if cfg.slope_band is not None:
        return float(cfg.slope_band[0]), float(cfg.slope_band[1])
    return cfg.exponent - 0.05, cfg.exponent + 0.05


def cmd_rate(args) -> int:
    cfg = build_config(args, "rate")
    report = ex.run_rate_experiment(cfg, args.threads)
    out = _out_dir(args)
    lo, hi = _band(cfg)
    rows = ex.rate_report_rows(cfg, report)
    rows.update(slope_band_lo=lo, slope_band_hi=hi, slope_in_band=lo <= report.slope <= hi)
    ex.write_report_csv(out / "report.csv", rows)
    ex.write_samples_csv(out / "samples.csv", report.samples)
    ex.write_ratecurve_csv(out / "ratecurve.csv", report)
    ex.write_gnuplot_script(out / "ratecurve.gp", report)
    print(f"slope {report.slope:.4f} +/- {report.slope_halfwidth:.4f} (theory {report.theoretical_exponent:.4f}, band [{lo:.3f}, {hi:.3f}])")
    if args.check and not lo <= report.slope <= hi:
        return EXIT_STATISTICAL
    return EXIT_OK


def _as_limit_rows(cfg, table) -> dict:
    return {
        "experiment": "as-limit",
        "scheme": cfg.scheme,
        "kind": cfg.coefficients.get("kind"),
        "h": cfg.h,
        "n": table.n,
        "n_paths": cfg.n_paths,
        "master_seed": cfg.master_seed,
        "statistic": table.statistic,
        "median_ratio": table.median_ratio,
        "median_abs_ratio_minus_1": table.median_abs_deviation,
        "skipped": table.n_skipped,
        "status": table.status,
    }


def _as_limit_pass(cfg, table) -> bool:
    if table.degenerate:
        return True
    if table.statistic == "sup_norm":
        return abs(table.median_ratio - 1.0) <= cfg.ratio_tolerance
    return table.median_abs_deviation < cfg.ratio_tolerance


def cmd_as_limit(args) -> int:
    cfg = build_config(args, "as-limit")
    table = ex.run_as_limit_check(cfg, args.threads)
    out = _out_dir(args)
    ex.write_report_csv(out / "report.csv", _as_limit_rows(cfg, table))
    ex.write_samples_csv(out / "samples.csv", table.samples())
    print(f"{table.status}: median ratio {table.median_ratio:.4f}, median |ratio - 1| {table.median_abs_deviation:.4f}")
    if args.check and not _as_limit_pass(cfg, table):
        return EXIT_STATISTICAL
    return EXIT_OK


def _limit_law_rows(cfg, rep) -> dict:
    rows = {
        "experiment": "limit-law",
        "h": cfg.h,
        "n": cfg.n_list[-1],
        "master_seed": cfg.master_seed,
        "functional": rep.functional,
        "ks_stat": rep.ks_stat,
        "p_value": rep.p_value,
        "n_a": rep.n_a,
        "n_b": rep.n_b,
        "sigma_h_mode": rep.sigma_h_mode,
        "sigma_h": rep.sigma_h,
        "independence_ks_stat": rep.independence_ks_stat,
        "independence_p_value": rep.independence_p_value,
        "excluded": rep.n_excluded,
        "degenerate": rep.degenerate,
        "max_abs_a": rep.max_abs_a,
    }
    cal = rep.calibration
    if cal is not None:
        rows.update(
            calibration_n=cal.n,
            calibration_paths=cal.n_paths,
            calibration_empirical_variance=cal.empirical_variance,
            calibration_standard_error=cal.standard_error,
            calibration_hermite_variance=cal.hermite_variance,
            calibration_finite_n_variance=cal.finite_n_variance,
            sigma_h_sq_paper_series=cal.mode_values["paper_series"],
            sigma_h_sq_variance_limit=cal.mode_values["variance_limit"],
            calibration_literal_matches=";".join(cal.literal_matches) or "none",
        )
    return rows


def _limit_law_pass(cfg, rep) -> bool:
    if rep.degenerate:
        return True
    return rep.p_value > cfg.ks_alpha


def cmd_limit_law(args) -> int:
    cfg = build_config(args, "limit-law")
    if cfg.scheme != "crank_nicholson":
        cfg = ex.ExperimentConfig.from_dict({**cfg.to_dict(), "scheme": "crank_nicholson"})
    rep = ex.run_limit_law_test(cfg, args.threads)
    if args.out:
        out = _out_dir(args)
        ex.write_report_csv(out / "report.csv", _limit_law_rows(cfg, rep))
    print(json.dumps(rep.to_json_dict()))
    if args.check and not _limit_law_pass(cfg, rep):
        return EXIT_STATISTICAL
    return EXIT_OK


def cmd_variations(args) -> int:
    h = 1 / 3 if args.h is None else args.h
    n = 2**14 if args.n is None else args.n
    paths = 100 if args.paths is None else args.paths
    seed = 0 if args.seed is None else args.seed
    vals = ex.run_variation_sample(h, n, args.m, paths, seed, args.clt, args.threads)
    fh = open(args.out, "w", newline="\n") if args.out else sys.stdout
    try:
        fh.write("n,m,normalized_value\n")
        for v in vals:
            fh.write(f"{n},{args.m},{format_float(v)}\n")
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_mean_square(args) -> int:
    cfg = build_config(args, "mean-square")
    rep = ex.run_mean_square_check(cfg, args.threads)
    rows = {
        "experiment": "mean-square",
        "kind": cfg.coefficients.get("kind"),
        "h": cfg.h,
        "n": rep.n,
        "n_paths": cfg.n_paths,
        "master_seed": cfg.master_seed,
        "lhs": rep.lhs,
        "rhs": rep.rhs,
        "relative_gap": rep.relative_gap,
        "hypothesis_ok": rep.hypothesis_ok,
    }
    if args.out:
        ex.write_report_csv(_out_dir(args) / "report.csv", rows)
    print(f"lhs {rep.lhs:.6g} rhs {rep.rhs:.6g} gap {rep.relative_gap:+.4f}")
    if args.check and not abs(rep.relative_gap) < cfg.ratio_tolerance:
        return EXIT_STATISTICAL
    return EXIT_OK


def cmd_report(args) -> int:
    from . import plotting

    cfg = build_config(args, "report")
    out = _out_dir(args)
    rate = ex.run_rate_experiment(cfg, args.threads)
    rows = ex.rate_report_rows(cfg, rate)
    samples = list(rate.samples)
    ok = True
    lo, hi = _band(cfg)
    ok &= lo <= rate.slope <= hi
    plotting.plot_rate_curve(rate, out / "ratecurve.png", f"{cfg.scheme}, {cfg.coefficients.get('kind')}, H = {cfg.h:g}")
    coeffs = cfg.build_coefficients()
    if cfg.scheme in ("euler", "modified_euler_linear"):
        table = ex.run_as_limit_check(cfg, args.threads)
        rows.update({f"aslimit_{k}": v for k, v in _as_limit_rows(cfg, table).items() if k not in rows})
        samples.extend(table.samples())
        ok &= _as_limit_pass(cfg, table)
        plotting.plot_ratio_histogram(table, out / "aslimit_ratio.png", cfg.ratio_tolerance)
    elif cfg.scheme == "crank_nicholson" and coeffs.kind in ("linear", "quadratic_sigma_sq", "constant"):
        rep = ex.run_limit_law_test(cfg, args.threads)
        rows.update({f"limitlaw_{k}": v for k, v in _limit_law_rows(cfg, rep).items() if k not in rows})
        ok &= _limit_law_pass(cfg, rep)
        plotting.plot_limit_law(rep, out / "limit_law_cdf.png")
    ex.write_report_csv(out / "report.csv", rows)
    ex.write_samples_csv(out / "samples.csv", samples)
    ex.write_ratecurve_csv(out / "ratecurve.csv", rate)
    ex.write_gnuplot_script(out / "ratecurve.gp", rate)
    print(f"report written to {out}")
    if args.check and not ok:
        return EXIT_STATISTICAL
    return EXIT_OK


COMMANDS = {
    "fbm": cmd_fbm,
    "solve": cmd_solve,
    "rate": cmd_rate,
    "as-limit": cmd_as_limit,
    "limit-law": cmd_limit_law,
    "variations": cmd_variations,
    "mean-square": cmd_mean_square,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
