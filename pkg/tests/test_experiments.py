"""Monte Carlo harness: configs, coupling, statistics, determinism."""

import json
import warnings

import numpy as np
import pytest

from fbm_sde import rng
from fbm_sde.experiments import (
    ExperimentConfig,
    ExperimentError,
    HypothesisWarning,
    calibrate_sigma_h,
    chunk_ranges,
    fit_log_log_slope,
    ks_two_sample,
    map_chunks,
    rate_report_rows,
    resolve_threads,
    run_as_limit_check,
    run_limit_law_test,
    run_mean_square_check,
    run_rate_experiment,
    run_variation_sample,
    theoretical_exponent,
    write_ratecurve_csv,
    write_report_csv,
    write_samples_csv,
)
from fbm_sde.fbm import sample_path
from fbm_sde.flow import Coefficients, FlowMap, solve_reference
from fbm_sde.schemes import euler_path

LINEAR = {"kind": "linear", "gamma": 1.0, "beta": 0.5}


def _cfg(**kw):
    base = dict(h=0.7, coefficients=LINEAR, n_list=[64, 128, 256], n_paths=20, master_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"n_list": [64, 100]},
            {"n_list": [128, 64]},
            {"n_list": [64, 64]},
            {"n_list": []},
            {"n_paths": 1},
            {"h": 1.0},
            {"scheme": "milstein"},
            {"statistic": "mean"},
            {"sigma_h_mode": "other"},
            {"master_seed": -1},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            _cfg(**kw)

    def test_json_round_trip(self, tmp_path):
        cfg = _cfg(slope_band=[0.3, 0.5], sigma_h_mode="variance_limit")
        back = ExperimentConfig.from_json(cfg.to_json())
        assert back == cfg
        p = tmp_path / "c.json"
        p.write_text(cfg.to_json())
        assert ExperimentConfig.load(p) == cfg

    def test_unknown_key(self):
        with pytest.raises((ValueError, KeyError)):
            ExperimentConfig.from_dict({**_cfg().to_dict(), "bogus": 1})

    def test_shipped_configs_load(self):
        import pathlib

        for p in sorted(pathlib.Path(__file__).parent.parent.joinpath("configs").glob("*.json")):
            cfg = ExperimentConfig.load(p)
            print(f"  {p.name}: {cfg.scheme}, h={cfg.h}")
            cfg.build_coefficients()

    @pytest.mark.parametrize(
        "scheme,h,want",
        [("euler", 0.7, 0.4), ("crank_nicholson", 0.45, 0.85), ("modified_euler_linear", 0.6, 0.2)],
    )
    def test_exponents(self, scheme, h, want):
        assert theoretical_exponent(scheme, h) == pytest.approx(want, abs=1e-14)


class TestStatistics:
    @pytest.mark.parametrize("r", [0.25, 0.4, 0.85, 1.0])
    def test_slope_recovery(self, r):
        n = [2**k for k in range(6, 13)]
        order, half, _ = fit_log_log_slope(n, 3.7 * np.asarray(n, dtype=float) ** -r)
        assert abs(order - r) < 1e-6 and half < 1e-6

    def test_slope_needs_two_points(self):
        with pytest.raises(ValueError):
            fit_log_log_slope([64], [0.1])

    def test_ks_same_law(self):
        ps = []
        for rep in range(10):
            a = rng.path_stream(99, rep, rng.AUXILIARY_GAUSSIAN).standard_normal(2000)
            b = rng.path_stream(99, rep + 100, rng.AUXILIARY_GAUSSIAN).standard_normal(2000)
            ps.append(ks_two_sample(a, b)[1])
        print("  p-values", " ".join(f"{p:.3f}" for p in ps))
        assert min(ps) >= 0.001

    def test_ks_detects_shift(self):
        g = np.random.default_rng(0)
        assert ks_two_sample(g.standard_normal(2000), g.standard_normal(2000) + 0.3)[1] < 1e-6


class TestPlumbing:
    def test_chunks_cover(self):
        ch = chunk_ranges(300, 128, offset=5)
        assert [len(c) for c in ch] == [128, 128, 44] and ch[0].start == 5 and ch[-1].stop == 305

    def test_map_chunks_order(self):
        ch = chunk_ranges(50, 7)
        assert map_chunks(lambda c: c.start, ch, threads=8) == [c.start for c in ch]

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv("FBM_SDE_THREADS", "3")
        assert resolve_threads() == 3 and resolve_threads(2) == 2
        with pytest.raises(ValueError):
            resolve_threads(0)


class TestCoupling:
    def test_subsampled_equals_restricted(self):
        cfg = _cfg(n_paths=3)
        rep = run_rate_experiment(cfg)
        coeffs = cfg.build_coefficients()
        for i in range(3):
            fine = sample_path(cfg.h, 256, cfg.master_seed, i)
            ref = solve_reference(FlowMap(coeffs), fine, cfg.x0, cfg.refinement)
            for n in cfg.n_list:
                err = euler_path(coeffs, fine.restrict(n), cfg.x0).values[-1] - ref.restrict(n).x_values[-1]
                got = [s.raw_error for s in rep.samples if s.n == n and s.path_index == i]
                assert got == [err]

    def test_normalized_error_invariant(self):
        cfg = _cfg(n_paths=4)
        rep = run_rate_experiment(cfg)
        assert cfg.exponent == pytest.approx(0.4, abs=1e-15)
        for s in rep.samples:
            assert s.normalized_error == s.raw_error * s.n**cfg.exponent

    def test_thread_determinism(self, tmp_path):
        cfg = _cfg(n_paths=40, chunk_size=8)
        outs = []
        for threads in (1, 8):
            rep = run_rate_experiment(cfg, threads=threads)
            d = tmp_path / str(threads)
            d.mkdir()
            write_report_csv(d / "report.csv", rate_report_rows(cfg, rep))
            write_samples_csv(d / "samples.csv", rep.samples)
            write_ratecurve_csv(d / "ratecurve.csv", rep)
            outs.append([(d / f).read_bytes() for f in ("report.csv", "samples.csv", "ratecurve.csv")])
        assert outs[0] == outs[1]


class TestRate:
    def test_cn_bounded_smooth_one_sided(self):
        h = 0.4
        cfg = _cfg(
            h=h,
            coefficients={"kind": "bounded_smooth", "a": 1.0, "c": 0.5},
            scheme="crank_nicholson",
            n_list=[2**k for k in range(6, 13)],
            n_paths=100,
        )
        rep = run_rate_experiment(cfg, threads=8)
        print(f"  slope {rep.slope:.3f}, lower bound {3 * h - 0.6:.3f}")
        assert rep.slope >= 3 * h - 0.5 - 0.1

    def test_drop_and_count_error(self):
        cfg = _cfg(h=0.3, coefficients={"kind": "linear", "gamma": 40.0, "beta": 0.0}, scheme="crank_nicholson", n_list=[4, 8])
        with pytest.raises(ExperimentError):
            run_rate_experiment(cfg)

    def test_incompatible_scheme(self):
        with pytest.raises(ValueError):
            run_rate_experiment(_cfg(scheme="crank_nicholson"))
        with pytest.raises(ValueError):
            run_rate_experiment(_cfg(scheme="modified_euler_linear", coefficients={"kind": "constant", "c": 1.0}))


class TestAsLimit:
    def test_linear_h075(self):
        cfg = _cfg(h=0.75, n_list=[2**14], n_paths=100)
        tab = run_as_limit_check(cfg, threads=8)
        print(f"  median |ratio - 1| {tab.median_abs_deviation:.4f}, skipped {tab.n_skipped}")
        assert tab.median_abs_deviation < 0.15 and tab.status == "ok"

    def test_constant_degenerate(self):
        cfg = _cfg(coefficients={"kind": "constant", "c": 1.5}, n_list=[1024])
        tab = run_as_limit_check(cfg)
        assert tab.degenerate and tab.status == "degenerate: scheme exact"
        assert tab.n_skipped == cfg.n_paths

    def test_rejected_combinations(self):
        with pytest.raises(ValueError):
            run_as_limit_check(_cfg(scheme="modified_euler_linear", statistic="sup_norm"))
        with pytest.raises(ValueError):
            run_as_limit_check(_cfg(coefficients={"kind": "linear", "gamma": 1.0}, scheme="crank_nicholson"))


class TestLimitLaw:
    def test_alpha_zero_degenerate(self):
        cfg = _cfg(h=1 / 3, coefficients={"kind": "constant", "c": 1.0}, scheme="crank_nicholson", n_list=[1024], sigma_h_mode="variance_limit")
        rep = run_limit_law_test(cfg)
        assert rep.degenerate and rep.max_abs_a < 1e-9

    def test_report_fields(self):
        cfg = _cfg(h=1 / 3, coefficients={"kind": "linear", "gamma": 1.0}, scheme="crank_nicholson", n_list=[256], n_paths=200, sigma_h_mode="variance_limit")
        rep = run_limit_law_test(cfg)
        d = rep.to_json_dict()
        assert set(d) == {"ks_stat", "p_value", "n_a", "n_b", "sigma_h_mode"}
        assert d["n_a"] == d["n_b"] == 200 and 0 <= d["p_value"] <= 1
        json.dumps(d)

    def test_functional_sample(self):
        cfg = _cfg(h=1 / 3, coefficients={"kind": "linear", "gamma": 1.0}, scheme="crank_nicholson", n_list=[256], n_paths=50, sigma_h_mode="variance_limit")
        rep = run_limit_law_test(cfg, functional=True)
        assert rep.functional and np.all(rep.sample_a >= 0) and np.all(rep.sample_b >= 0)

    def test_requires_cn(self):
        with pytest.raises(ValueError):
            run_limit_law_test(_cfg())


class TestCalibration:
    def test_small_run(self):
        rep = calibrate_sigma_h(0.5, n=1024, n_paths=2000, master_seed=3)
        print(f"  h=1/2: variance {rep.empirical_variance:.3f} +- {rep.standard_error:.3f}, chosen {rep.chosen_mode}")
        assert rep.chosen_mode in rep.mode_values
        # Brownian case: n^{-1/2} sum (sqrt(n) dB)^3 has variance 15 exactly
        assert abs(rep.empirical_variance - 15.0) < 4 * rep.standard_error
        assert rep.finite_n_variance == pytest.approx(15.0, rel=1e-12)


class TestMeanSquare:
    def test_constant_zero(self):
        rep = run_mean_square_check(_cfg(coefficients={"kind": "constant", "c": 1.0}, n_list=[512]))
        assert rep.lhs < 1e-12 and rep.rhs == 0.0 and rep.hypothesis_ok

    def test_linear_warns(self):
        with pytest.warns(HypothesisWarning):
            rep = run_mean_square_check(_cfg(n_list=[512]))
        assert not rep.hypothesis_ok
        print(f"  informational gap {rep.relative_gap:.3f}")


def test_variation_sample_deterministic():
    a = run_variation_sample(0.6, 256, 2, 30, master_seed=1)
    b = run_variation_sample(0.6, 256, 2, 30, master_seed=1, threads=4, chunk_size=7)
    assert np.array_equal(a, b)


def test_no_stray_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_rate_experiment(_cfg(n_paths=4))
