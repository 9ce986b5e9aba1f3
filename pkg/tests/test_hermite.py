import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfosc import audits
from mfosc.errors import ConfigurationError, TruncationError
from mfosc.hermite import (
    DualVector,
    HermiteBasis,
    cross_weight_comparison,
    delta_coefficients,
    dual_norm,
    empirical_coefficients,
    empirical_distance,
    gaussian_coefficients,
    hermite_derivative_values,
    hermite_values,
    weight,
)

SIG = (np.sqrt(0.2), np.sqrt(0.2))


def basis(theta=0.5, r=4.0, L=30, sigma=SIG, k=(1.0, 1.0)):
    return HermiteBasis(theta=theta, r=r, k=k, sigma=sigma, L=L)


class TestOneDimensional:
    def test_recurrence_standard_holds_shifted_fails(self):
        errs = audits.recurrence_errors(lmax=14)
        assert errs["standard"] < 1e-12
        assert errs["shifted"] > 1e-3  # the misprinted index pattern is wrong

    @given(st.floats(-6, 6))
    @settings(max_examples=40, deadline=None)
    def test_recurrence_pointwise(self, y):
        H = hermite_values(np.array([y]), 10)[0]
        for n in range(2, 11):
            lhs = y * H[n - 1]
            rhs = np.sqrt(n) * H[n] + np.sqrt(n - 1) * H[n - 2]
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_derivative_identity(self):
        y = np.linspace(-4, 4, 33)
        h = 1e-6
        fd = (hermite_values(y + h, 8) - hermite_values(y - h, 8)) / (2 * h)
        an = hermite_derivative_values(y, 8)
        assert np.max(np.abs(fd - an)) < 1e-7

    def test_orthonormal_under_standard_gaussian_weight(self):
        t, w = np.polynomial.hermite.hermgauss(40)
        y = np.sqrt(2.0) * t
        W = np.sqrt(2.0) * w  # integrates f(y) exp(-y^2/2) dy
        H = hermite_values(y, 12)
        G = (H * W[:, None]).T @ H
        assert np.max(np.abs(G - np.eye(13))) < 1e-10


class TestWeight:
    def test_values(self):
        assert weight(0.7, np.zeros(2), (1.0, 1.0), (1.0, 1.0)) == 1.0
        assert weight(0.0, np.array([3.0, -1.0]), (1.0, 1.0), (1.0, 1.0)) == 1.0
        # d=1, k=1, sigma=1, theta=1, x=2 -> exp(-2)
        assert weight(1.0, np.array([[2.0]]), (1.0,), (1.0,)) == pytest.approx(np.exp(-2.0))


class TestBasis:
    def test_mode_zero_constant_for_unit_scales(self):
        # theta k / sigma^2 = 1 reproduces the bare normalization (2 pi)^(-d/4)
        b = HermiteBasis(theta=1.0, r=2.0, k=(1.0, 1.0), sigma=(1.0, 1.0), L=4)
        val = b.basis_eval((0, 0), np.array([0.7, -1.3]))
        assert val == pytest.approx((2 * np.pi) ** (-0.5))

    def test_gram_identity(self):
        b = basis(L=12)
        assert audits.gram_error(b) < 1e-10

    def test_eigen_residual(self):
        b = basis(L=8)
        assert audits.eigen_residual_max(b, lmax=6) < 1e-8

    def test_lambda_formula(self):
        b = basis(L=3, k=(1.5, 0.7))
        lam = b.lambdas
        modes = b.modes
        expected = b.theta * (1.5 * modes[:, 0] + 0.7 * modes[:, 1])
        assert np.allclose(lam, expected)

    def test_out_of_range_mode(self):
        b = basis(L=3)
        with pytest.raises(ConfigurationError):
            b.basis_eval((4, 0), np.zeros(2))


class TestDualNorm:
    def test_dual_basis_element_norm_one(self):
        b = basis(L=10)
        l0 = (2, 1)
        flat = 2 * (b.L + 1) + 1
        lam0 = b.lambdas[flat]
        pts, W = b.quadrature()
        psi_l0 = b.mode_values(pts)[:, flat]
        # u = (1+lam)^{r/2} w_theta psi_l0 as a weighted point set
        wts = W * psi_l0 * (1 + lam0) ** (b.r / 2)
        rep = dual_norm((pts, wts), b)
        assert rep.value == pytest.approx(1.0, abs=1e-10)

    def test_difference_of_identical_deltas_is_zero(self):
        b = basis(L=8)
        x = np.array([0.4, -0.2])
        d1 = delta_coefficients(b, x)
        d2 = delta_coefficients(b, x)
        assert (d1 - d2).norm() == 0.0

    def test_partial_norms_non_decreasing(self):
        b = basis(L=20)
        dv = delta_coefficients(b, np.array([1.1, -0.6]))
        norms = [dv.norm_at(L) for L in range(1, 21)]
        assert all(b2 >= a2 - 1e-15 for a2, b2 in zip(norms, norms[1:]))

    def test_point_mass_bound_with_constant_fitted_at_origin(self):
        rep = audits.delta_norm_sweep(basis(), radius=3.0, grid=9)
        assert rep["violations"] == 0
        assert rep["tails_ok"]

    def test_tail_under_budget_at_default_r(self):
        b = basis()
        dv = delta_coefficients(b, np.array([2.1, 2.1]))
        assert dv.tail_estimate() / dv.norm() < 0.01

    def test_growing_shells_raise(self):
        # far outside the resolvable range the shell masses still grow at L
        b = basis(L=10, theta=1.0)
        dv = delta_coefficients(b, np.array([6.0, 6.0]))
        with pytest.raises(TruncationError):
            dv.tail_estimate()

    def test_basis_mismatch_rejected(self):
        a = delta_coefficients(basis(L=8), np.zeros(2))
        c = delta_coefficients(basis(L=8, theta=0.25), np.zeros(2))
        with pytest.raises(ConfigurationError):
            _ = a - c


class TestCrossWeight:
    def test_same_theta_ratio_is_one(self):
        rep = cross_weight_comparison(np.array([[0.5, 0.5], [1.0, -1.0]]),
                                      0.5, 0.5, (1.0, 1.0), SIG, 4.0, 16)
        assert rep["max_ratio"] == pytest.approx(1.0, abs=1e-12)

    def test_origin_ratio_stable_in_L(self):
        vals = []
        for L in (16, 24, 30):
            rep = cross_weight_comparison(np.zeros((1, 2)), 0.5, 0.25,
                                          (1.0, 1.0), SIG, 4.0, L)
            vals.append(rep["max_ratio"])
        assert abs(vals[-1] - vals[-2]) < 0.02 * vals[-1]

    def test_family_within_radius_finite(self):
        xs = np.linspace(-3, 3, 5)
        fam = np.array([[a, b] for a in xs for b in xs
                        if np.hypot(a, b) <= 3.0])
        rep = cross_weight_comparison(fam, 0.5, 0.25, (1.0, 1.0), SIG, 4.0, 30)
        assert np.isfinite(rep["max_ratio"])

    def test_theta_prime_above_theta_rejected(self):
        with pytest.raises(ConfigurationError):
            cross_weight_comparison(np.zeros((1, 2)), 0.25, 0.5,
                                    (1.0, 1.0), SIG, 4.0, 8)


class TestEmpirical:
    def test_identical_ensemble_distance_zero(self):
        b = basis(L=12)
        gen = np.random.default_rng(0)
        pts = gen.normal(size=(200, 2))
        target = empirical_coefficients(b, pts)
        assert empirical_distance(b, pts, None, target) == 0.0

    def test_clt_rate_against_gaussian_target(self):
        b = basis(L=16)
        var = np.array([0.2, 0.2])
        target = gaussian_coefficients(b, [0.0, 0.0], var)
        gen = np.random.default_rng(42)
        ns = [100, 1000, 10000]
        dists = []
        for n in ns:
            reps = []
            for _ in range(12):
                pts = gen.normal(size=(n, 2)) * np.sqrt(var)
                reps.append(empirical_distance(b, pts, None, target))
            dists.append(np.mean(reps))
        slope = np.polyfit(np.log(ns), np.log(dists), 1)[0]
        assert -0.6 < slope < -0.4

    def test_product_norm_includes_mean_component(self):
        b = basis(L=8)
        gen = np.random.default_rng(3)
        pts = gen.normal(size=(500, 2)) * np.sqrt(0.2)
        target = empirical_coefficients(b, pts)
        d = empirical_distance(b, pts, np.array([0.3, 0.4]), target,
                               target_mean=np.zeros(2))
        assert d == pytest.approx(0.5)


class TestPairingConsistency:
    def test_duality_pairing_matches_quadrature(self):
        # <u, f> via coefficients equals the direct integral for a density u
        b = basis(L=20)
        mean, var = np.array([0.2, -0.1]), np.array([0.3, 0.25])

        def f(x):
            return np.exp(-0.5 * np.sum(x**2, axis=1)) * (1 + x[:, 0])

        u = gaussian_coefficients(b, mean, var)
        pts, W = b.quadrature(order=80)
        wts = b.weight(pts)
        fv = f(pts)
        # expand f on the H^r basis through the weighted quadrature
        vals = b.mode_values(pts)
        a_raw = (W * fv) @ vals           # <f, psi_l>_{L2_theta}
        f_coeffs = a_raw * (1 + b.lambdas) ** (b.r / 2)  # coefficients against psi_{l,r}
        via_coeffs = float(u.coeffs @ f_coeffs)
        # direct integral of u * f using u's own Gaussian quadrature
        t, w2 = np.polynomial.hermite.hermgauss(40)
        w2 = w2 / np.sqrt(np.pi)
        ax = [np.sqrt(2 * var[i]) * t + mean[i] for i in range(2)]
        G1, G2 = np.meshgrid(*ax, indexing="ij")
        gpts = np.stack([G1.ravel(), G2.ravel()], axis=1)
        gw = np.outer(w2, w2).ravel()
        direct = float(gw @ f(gpts))
        assert via_coeffs == pytest.approx(direct, abs=1e-8)


class TestProductEstimate:
    def test_ring_growth_flat(self):
        rep = audits.product_estimate_report(0.5, 0.25, (1.0, 1.0), SIG,
                                             rprime=4.0, lmax=8)
        assert rep["all_ok"]
        for order in rep["orders"]:
            assert np.isfinite(order["C_fit"]) and order["C_fit"] > 0
