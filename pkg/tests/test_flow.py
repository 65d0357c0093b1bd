"""Coefficient families, the flow map and reference solutions."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbm_sde.fbm import sample_path, sample_paths
from fbm_sde.flow import Coefficients, DomainError, FlowError, FlowMap, solve_reference

CLOSED_FORM_CASES = [
    ("constant", Coefficients.constant(0.7)),
    ("linear", Coefficients.linear(1.3, 0.0)),
    ("quadratic_exp", Coefficients.quadratic_sigma_sq(4.0, 4.0, 1.0)),
    ("quadratic_sinh", Coefficients.quadratic_sigma_sq(1.0, 0.5, 2.0)),
    ("quadratic_sinh", Coefficients.quadratic_sigma_sq(0.5, 0.0, 1.0, sign=-1)),
    ("lamperti_tanh", Coefficients.bounded_smooth(1.0, 0.5)),
    ("lamperti_tanh", Coefficients.bounded_smooth(2.0, 1.9)),
]

sinusoid = Coefficients.custom(lambda x: np.sin(x) + 2.0, np.cos, lambda x: -np.sin(x))


class TestCoefficients:
    @pytest.mark.parametrize("label,c", CLOSED_FORM_CASES)
    def test_derivatives_consistent(self, label, c):
        assert c.check_derivatives() < 1e-6

    def test_inconsistent_derivative_detected(self):
        bad = Coefficients.custom(np.sin, np.sin, np.cos)
        with pytest.raises(ValueError, match="inconsistent"):
            bad.check_derivatives()

    def test_linear_kind(self):
        c = Coefficients.linear(2.0, -0.5)
        x = np.array([-1.0, 0.5, 3.0])
        np.testing.assert_array_equal(c.sigma(x), 2 * x)
        np.testing.assert_array_equal(c.b(x), -0.5 * x)
        assert not c.drift_free

    def test_quadratic_square_is_consistent(self):
        c = Coefficients.quadratic_sigma_sq(1.0, -0.4, 0.3)
        x = np.linspace(-3, 3, 13)
        np.testing.assert_allclose(c.sigma(x) ** 2, x * x - 0.4 * x + 0.3, rtol=1e-13)

    def test_quadratic_domain_error(self):
        c = Coefficients.quadratic_sigma_sq(-1.0, 0.0, 1.0)
        assert c.sigma(0.5) > 0
        with pytest.raises(DomainError):
            c.sigma(np.array([0.0, 2.0]))

    @pytest.mark.parametrize("a,c", [(0.5, 0.5), (1.0, -0.1), (0.2, 0.9)])
    def test_bounded_smooth_validation(self, a, c):
        with pytest.raises(ValueError):
            Coefficients.bounded_smooth(a, c)

    def test_bounded_smooth_floor(self):
        c = Coefficients.bounded_smooth(1.0, 0.5)
        x = np.linspace(-50, 50, 1001)
        assert c.sigma(x).min() >= 0.5 and c.sigma(x).max() <= 1.5

    @pytest.mark.parametrize(
        "spec",
        [
            {"kind": "linear", "gamma": 1.0, "beta": 0.5},
            {"kind": "constant", "c": 2.0},
            {"kind": "quadratic_sigma_sq", "alpha": 1.0, "beta": 0.0, "gamma": 0.0, "sign": 1},
            {"kind": "bounded_smooth", "a": 1.0, "c": 0.5, "drift": 0.3},
        ],
    )
    def test_spec_round_trip(self, spec):
        c = Coefficients.from_spec(spec)
        again = Coefficients.from_spec(c.to_spec())
        x = np.linspace(-1, 1, 5)
        np.testing.assert_array_equal(c.sigma(x), again.sigma(x))
        np.testing.assert_array_equal(c.b(x), again.b(x))

    def test_custom_needs_both_drift_parts(self):
        with pytest.raises(ValueError):
            Coefficients.custom(np.sin, np.cos, np.sin, b=np.sin)


class TestPhi:
    def test_linear(self):
        f = FlowMap(Coefficients.quadratic_sigma_sq(1.0, 0.0, 0.0))
        x1, x2 = np.array([0.3, -2.0, 5.0]), np.array([1.0, -0.5, 0.25])
        np.testing.assert_allclose(f.phi(x1, x2), x1 * np.exp(x2), rtol=1e-14)
        np.testing.assert_allclose(f.dphi_dx1(x1, x2), np.exp(x2), rtol=1e-14)

    def test_constant(self):
        f = FlowMap(Coefficients.constant(2.5))
        assert f.phi(1.0, 0.4) == pytest.approx(2.0, abs=1e-15)
        assert f.dphi_dx1(1.0, 0.4) == 1.0

    @pytest.mark.parametrize("label,c", CLOSED_FORM_CASES)
    def test_closed_form_against_integrator(self, label, c):
        f = FlowMap(c)
        assert f.closed_form == label
        g = np.random.default_rng(2)
        x1, x2 = g.uniform(-2, 2, 30), g.uniform(-2, 2, 30)
        d_phi = np.max(np.abs(f.phi(x1, x2) - f.phi_generic(x1, x2)) / (1 + np.abs(f.phi(x1, x2))))
        d_jac = np.max(np.abs(f.dphi_dx1(x1, x2) - f.dphi_dx1_generic(x1, x2)) / (1 + f.dphi_dx1(x1, x2)))
        print(f"  {label}: phi {d_phi:.2e}, dphi/dx1 {d_jac:.2e}")
        assert d_phi < 1e-9 and d_jac < 1e-9

    def test_no_closed_form_for_negative_discriminant(self):
        c = Coefficients.quadratic_sigma_sq(1.0, 0.0, -1.0)
        f = FlowMap(c)
        assert f.closed_form is None
        # sigma = sqrt(x^2 - 1) on x > 1
        assert f.phi(2.0, 0.3) == pytest.approx(np.cosh(np.arccosh(2.0) + 0.3), rel=1e-10)

    def test_semigroup_custom(self):
        f = FlowMap(sinusoid)
        x1 = np.linspace(-2, 2, 9)
        gap = np.max(np.abs(f.phi(f.phi(x1, 0.3), 0.7) - f.phi(x1, 1.0)))
        print(f"  semigroup gap {gap:.2e}")
        assert gap < 1e-10

    def test_semigroup_random_triples(self):
        f = FlowMap(sinusoid)
        g = np.random.default_rng(7)
        x1, y, x2 = g.uniform(-2, 2, 100), g.uniform(-1.5, 1.5, 100), g.uniform(-1.5, 1.5, 100)
        gap = np.max(np.abs(f.phi(f.phi(x1, y), x2 - y) - f.phi(x1, x2)))
        assert gap < 10 * f.atol * 10

    @pytest.mark.parametrize("c", [sinusoid] + [c for _, c in CLOSED_FORM_CASES])
    def test_reciprocity(self, c):
        f = FlowMap(c)
        g = np.random.default_rng(8)
        x1, x2 = g.uniform(-1.5, 1.5, 20), g.uniform(-1.5, 1.5, 20)
        prod = f.dphi_dx1(f.phi(x1, x2), -x2) * f.dphi_dx1(x1, x2)
        assert np.max(np.abs(prod - 1)) < 1e-9

    def test_jacobian_is_sigma_ratio(self):
        f = FlowMap(sinusoid)
        x1, x2 = np.array([0.1, 1.2]), np.array([0.8, -1.1])
        ratio = sinusoid.sigma(f.phi(x1, x2)) / sinusoid.sigma(x1)
        np.testing.assert_allclose(f.dphi_dx1(x1, x2), ratio, rtol=1e-10)

    def test_blow_up_reports_escape(self):
        # sigma(x) = x^2 explodes at x2 = 1 from x1 = 1
        f = FlowMap(Coefficients.custom(lambda x: x * x, lambda x: 2 * x, lambda x: 2 + 0 * x), max_steps=2**12)
        with pytest.raises(FlowError) as info:
            f.phi(np.array([1.0]), np.array([2.0]))
        print(f"  escape coordinate {info.value.escape_coordinate}")
        assert info.value.escape_coordinate == 2.0


@settings(max_examples=60, deadline=None)
@given(x1=st.floats(-1e6, 1e6, allow_nan=False), case=st.integers(0, len(CLOSED_FORM_CASES)))
def test_identity_at_zero_is_exact(x1, case):
    c = sinusoid if case == len(CLOSED_FORM_CASES) else CLOSED_FORM_CASES[case][1]
    f = FlowMap(c)
    if c.kind == "quadratic_sigma_sq" and c.params["alpha"] < 0:
        return
    assert f.phi(x1, 0.0) == x1
    assert f.dphi_dx1(x1, 0.0) == 1.0


@settings(max_examples=40, deadline=None)
@given(
    x1=st.floats(-3, 3),
    y=st.floats(-2, 2),
    x2=st.floats(-2, 2),
    case=st.integers(0, len(CLOSED_FORM_CASES) - 1),
)
def test_semigroup_property(x1, y, x2, case):
    f = FlowMap(CLOSED_FORM_CASES[case][1])
    lhs = f.phi(f.phi(x1, y), x2 - y)
    rhs = f.phi(x1, x2)
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(rhs))


class TestReference:
    def test_linear_closed_form(self):
        gamma, beta, x0 = 1.0, 0.5, 1.0
        c = Coefficients.linear(gamma, beta)
        path = sample_path(0.7, 1024, 3)
        ref = solve_reference(FlowMap(c), path, x0, refinement=8, method="doss_sussmann")
        exact = x0 * np.exp(beta * path.grid.points + gamma * path.values)
        err = np.max(np.abs(ref.x_values - exact))
        print(f"  max error {err:.2e}")
        assert err < 1e-8
        assert ref.x_values[0] == x0

    def test_driftless_is_flow_of_x0(self):
        c = Coefficients.quadratic_sigma_sq(1.0, 0.0, 0.0)
        path = sample_path(0.3, 512, 4)
        ref = solve_reference(FlowMap(c), path, 2.0)
        assert np.all(ref.a_values == 2.0)
        assert ref.x_values[-1] == 2.0 * np.exp(path.values[-1])

    def test_driftless_general(self):
        c = Coefficients.bounded_smooth(1.0, 0.5)
        ref = solve_reference(FlowMap(c), sample_path(0.4, 256, 5), -0.3)
        assert np.all(ref.a_values == -0.3)

    @pytest.mark.parametrize("method", ["doss_sussmann", "interpolated_ode"])
    def test_flow_representation(self, method):
        c = Coefficients.bounded_smooth(1.0, 0.5, drift=0.8)
        f = FlowMap(c)
        path = sample_path(0.6, 512, 6)
        ref = solve_reference(f, path, 0.2, method=method)
        assert ref.x_values[0] == 0.2
        np.testing.assert_allclose(ref.x_values, f.phi(ref.a_values, path.values), atol=1e-10)

    def test_methods_agree(self):
        c = Coefficients.bounded_smooth(1.0, 0.5, drift=0.8)
        f = FlowMap(c)
        paths = sample_paths(0.6, 512, 7, range(5))
        a = solve_reference(f, paths, 0.2, method="doss_sussmann")
        b = solve_reference(f, paths, 0.2, method="interpolated_ode")
        gap = np.max(np.abs(a.x_values - b.x_values))
        print(f"  route gap {gap:.2e}")
        assert gap < 1e-10

    def test_refinement_stable(self):
        c = Coefficients.bounded_smooth(1.0, 0.5, drift=0.8)
        f = FlowMap(c)
        path = sample_path(0.7, 1024, 8)
        x8 = solve_reference(f, path, 0.0, refinement=8).x_values[-1]
        x16 = solve_reference(f, path, 0.0, refinement=16).x_values[-1]
        print(f"  |X1(8) - X1(16)| = {abs(x8 - x16):.2e}")
        assert abs(x8 - x16) < 1e-8

    def test_batch_matches_single(self):
        c = Coefficients.linear(1.0, 0.5)
        f = FlowMap(c)
        paths = sample_paths(0.7, 256, 9, range(3))
        batch = solve_reference(f, paths, 1.0)
        single = solve_reference(f, sample_path(0.7, 256, 9, 1), 1.0)
        assert np.array_equal(batch.x_values[1], single.x_values)

    def test_restrict(self):
        c = Coefficients.linear(1.0, 0.5)
        path = sample_path(0.7, 256, 9)
        ref = solve_reference(FlowMap(c), path, 1.0)
        coarse = ref.restrict(64)
        assert np.array_equal(coarse.x_values, ref.x_values[::4])
        assert coarse.n == 64

    def test_bad_method(self):
        c = Coefficients.linear(1.0, 0.5)
        with pytest.raises(ValueError):
            solve_reference(FlowMap(c), sample_path(0.7, 8, 0), 1.0, method="euler")
