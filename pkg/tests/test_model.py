import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import fsolve
from scipy.stats import qmc

from mfosc.errors import ConfigurationError, DomainError
from mfosc.model import (
    DiagonalMatrix,
    DiffusionModel,
    VectorFieldSpec,
    cutoff_profile,
    cutoff_profile_derivative,
    default_model,
    eval_field,
    eval_jacobian,
)


def constant_model(value=(1.0, 0.0)):
    return DiffusionModel(
        d=2, delta=0.1, K=DiagonalMatrix((1.0, 2.0)), sigma=DiagonalMatrix((0.5, 0.5)),
        field=VectorFieldSpec(kind="constant", params={"value": list(value)},
                              cutoff_radius=None),
    )


def linear_model(A, cutoff=None):
    return DiffusionModel(
        d=2, delta=0.1, K=DiagonalMatrix((1.0, 1.0)), sigma=DiagonalMatrix((0.5, 0.5)),
        field=VectorFieldSpec(kind="linear-test", params={"matrix": A},
                              cutoff_radius=cutoff),
    )


class TestCutoffProfile:
    def test_plateau_and_support(self):
        assert cutoff_profile(0.3) == 1.0
        assert cutoff_profile(1.0) == 1.0
        assert cutoff_profile(2.0) == 0.0
        assert cutoff_profile(5.0) == 0.0

    @given(st.floats(min_value=1.0, max_value=2.0))
    @settings(max_examples=50, deadline=None)
    def test_non_increasing(self, t):
        h = 1e-4
        lo, hi = max(1.0, t - h), min(2.0, t + h)
        assert cutoff_profile(lo) >= cutoff_profile(hi) - 1e-12

    def test_derivative_matches_finite_differences(self):
        ts = np.linspace(1.05, 1.95, 41)
        h = 1e-6
        fd = (cutoff_profile(ts + h) - cutoff_profile(ts - h)) / (2 * h)
        assert np.max(np.abs(fd - cutoff_profile_derivative(ts))) < 1e-6


class TestEvalField:
    def test_constant_field(self):
        m = constant_model((1.0, 0.0))
        for x in ([0.0, 0.0], [3.0, -7.0], [100.0, 5.0]):
            assert np.allclose(eval_field(m, np.array(x)), [1.0, 0.0])

    def test_fhn_nullcline_intersection(self):
        # independently root-find the rest point of the local dynamics
        m = default_model()
        a, b, c = (m.field.params[k] for k in ("a", "b", "c"))

        def raw(v):
            x, y = v
            return [x - x**3 / 3 - y, (x + a - b * y) / c]

        root = fsolve(raw, x0=[-0.9, -0.5], full_output=False)
        assert np.allclose(root, [-1.0, -2.0 / 3.0], atol=1e-9)
        assert np.max(np.abs(eval_field(m, np.asarray(root)))) < 1e-12

    def test_zero_outside_twice_cutoff_radius(self):
        m = default_model()
        R = m.field.cutoff_radius
        for ang in np.linspace(0, 2 * np.pi, 7):
            x = 2.0 * R * np.array([np.cos(ang), np.sin(ang)])
            assert np.all(eval_field(m, x) == 0.0)
            assert np.all(eval_field(m, 1.7 * x) == 0.0)

    def test_non_finite_input_rejected(self):
        m = default_model()
        with pytest.raises(DomainError):
            eval_field(m, np.array([np.nan, 0.0]))
        with pytest.raises(DomainError):
            eval_jacobian(m, np.array([np.inf, 0.0]))


class TestEvalJacobian:
    def test_constant_field_zero_jacobian(self):
        m = constant_model()
        assert np.all(eval_jacobian(m, np.array([2.0, 3.0])) == 0.0)

    def test_linear_field_returns_matrix(self):
        A = [[0.3, -1.2], [0.7, 0.1]]
        m = linear_model(A, cutoff=50.0)
        assert np.allclose(eval_jacobian(m, np.array([1.0, -2.0])), A)

    def test_fhn_jacobian_at_rest_point(self):
        m = default_model()
        J = eval_jacobian(m, np.array([-1.0, -2.0 / 3.0]))
        assert np.allclose(J, [[0.0, -1.0], [0.1, -0.1]], atol=1e-12)

    def test_matches_central_differences(self):
        m = default_model()
        gen = np.random.default_rng(11)
        pts = gen.uniform(-12, 12, size=(1000, 2))
        J = eval_jacobian(m, pts)
        h = 1e-5
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd = (eval_field(m, pts + e) - eval_field(m, pts - e)) / (2 * h)
            num = np.abs(J[:, :, k] - fd)
            den = np.maximum(np.abs(fd), 1.0)
            assert np.max(num / den) < 1e-6


class TestBounds:
    def test_sampled_field_bound_holds(self):
        m = default_model()
        R = m.field.cutoff_radius
        sampler = qmc.Sobol(d=2, scramble=False, seed=1)
        pts = (sampler.random_base2(17) - 0.5) * 4.0 * R
        vals = np.linalg.norm(eval_field(m, pts), axis=1)
        assert np.max(vals) <= m.field_bound()

    def test_constant_bound_exact(self):
        m = constant_model((3.0, 4.0))
        assert m.field_bound() == pytest.approx(5.0)


class TestValidation:
    def test_diagonal_requires_positive_entries(self):
        with pytest.raises(ConfigurationError):
            DiagonalMatrix((1.0, 0.0))
        with pytest.raises(ConfigurationError):
            DiagonalMatrix((1.0, -2.0))

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            DiffusionModel(d=3, delta=0.1, K=DiagonalMatrix((1.0, 1.0)),
                           sigma=DiagonalMatrix((1.0, 1.0)),
                           field=VectorFieldSpec("constant", {"value": [1.0] * 3},
                                                 cutoff_radius=None))

    def test_fhn_requires_cutoff(self):
        with pytest.raises(ConfigurationError):
            VectorFieldSpec("fitzhugh-nagumo-cutoff", {"a": 0.3, "b": 1.0, "c": 10.0},
                            cutoff_radius=None)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            VectorFieldSpec("vortex", {})

    def test_gamma_ratio(self):
        m = default_model()
        assert np.allclose(m.gamma_ratio, [0.2, 0.2])

    def test_roundtrip_dict(self):
        m = default_model()
        m2 = DiffusionModel.from_dict(m.to_dict())
        assert m2.fingerprint() == m.fingerprint()


def test_custom_table_kind_interpolates_and_vanishes_outside():
    xs = np.linspace(-2, 2, 21)
    vals = np.zeros((21, 21, 2))
    vals[..., 0] = 1.0  # constant unit x-drift on the table
    m = DiffusionModel(
        d=2, delta=0.1, K=DiagonalMatrix((1.0, 1.0)), sigma=DiagonalMatrix((1.0, 1.0)),
        field=VectorFieldSpec("custom-table", {"axes": [xs, xs], "values": vals},
                              cutoff_radius=None),
    )
    assert np.allclose(eval_field(m, np.array([0.3, -0.4])), [1.0, 0.0])
    assert np.allclose(eval_field(m, np.array([5.0, 5.0])), [0.0, 0.0])
