"""Weighted spectral spaces built on the relaxation operator's eigenbasis.

The linear relaxation generator with diagonal rates K and noise sigma is
diagonalized, under the Gaussian-type weight w_theta, by rescaled Hermite
polynomials.  Expanding a signed measure in that basis gives computable
negative-order Sobolev norms: the natural yardstick for distances between
empirical measures and densities.  All norms are truncated at max-degree L
and carry an explicit tail estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigurationError, TruncationError
from .model import DiffusionModel

__all__ = [
    "hermite_values",
    "hermite_derivative_values",
    "weight",
    "HermiteBasis",
    "DualVector",
    "NormReport",
    "dual_norm",
    "empirical_coefficients",
    "empirical_distance",
    "gaussian_coefficients",
    "cross_weight_comparison",
]


def hermite_values(y, L: int) -> np.ndarray:
    """Renormalized Hermite values h_0..h_L at points y; shape (len(y), L+1).

    h_0 = (2 pi)^(-1/4) and y h_n = sqrt(n+1) h_{n+1} + sqrt(n) h_{n-1},
    which makes {h_n} orthonormal for the standard Gaussian weight
    exp(-y^2/2).
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    H = np.empty((y.size, L + 1))
    H[:, 0] = (2.0 * np.pi) ** (-0.25)
    if L >= 1:
        H[:, 1] = y * H[:, 0]
    for n in range(2, L + 1):
        H[:, n] = (y * H[:, n - 1] - np.sqrt(n - 1) * H[:, n - 2]) / np.sqrt(n)
    return H


def hermite_derivative_values(y, L: int) -> np.ndarray:
    """Derivatives h_n'(y) = sqrt(n) h_{n-1}(y); shape (len(y), L+1)."""
    H = hermite_values(y, L)
    out = np.zeros_like(H)
    n = np.arange(1, L + 1)
    out[:, 1:] = np.sqrt(n) * H[:, :-1]
    return out


def hermite_second_derivative_values(y, L: int) -> np.ndarray:
    """Second derivatives h_n''(y) = sqrt(n(n-1)) h_{n-2}(y)."""
    H = hermite_values(y, L)
    out = np.zeros_like(H)
    n = np.arange(2, L + 1)
    out[:, 2:] = np.sqrt(n * (n - 1)) * H[:, :-2]
    return out


def weight(theta: float, x, k, sigma) -> np.ndarray:
    """Gaussian-type weight exp(-theta/2 * sum_i k_i x_i^2 / sigma_i^2).

    Negative theta gives the reciprocal (growing) weight.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = np.asarray(k, dtype=float)
    s2 = np.asarray(sigma, dtype=float) ** 2
    q = np.sum(k * x**2 / s2, axis=1)
    out = np.exp(-0.5 * theta * q)
    return out if out.size > 1 else float(out[0])


@dataclass(frozen=True)
class HermiteBasis:
    """Truncated eigenbasis for weight parameter theta and regularity r.

    Modes are multi-indices with max degree <= L.  ``scales[i]`` is
    sqrt(theta k_i / sigma_i^2); each 1-D factor carries a sqrt(scale)
    normalization so the basis is orthonormal in the weighted L2 space.
    """

    theta: float
    r: float
    k: tuple
    sigma: tuple
    L: int

    def __post_init__(self):
        if not (0 < self.theta):
            raise ConfigurationError("theta must be positive", key_path="numerics.theta")
        if self.L < 1:
            raise ConfigurationError("truncation L must be >= 1", key_path="numerics.l_max")
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))

    @classmethod
    def for_model(cls, model: DiffusionModel, theta: float = 0.5, r: float = 4.0,
                  L: int = 30) -> "HermiteBasis":
        return cls(theta=theta, r=r, k=tuple(model.k), sigma=tuple(model.sig), L=L)

    @property
    def d(self) -> int:
        return len(self.k)

    @property
    def scales(self) -> np.ndarray:
        k = np.asarray(self.k)
        s2 = np.asarray(self.sigma) ** 2
        return np.sqrt(self.theta * k / s2)

    @property
    def modes(self) -> np.ndarray:
        idx = np.indices((self.L + 1,) * self.d).reshape(self.d, -1).T
        return idx

    @property
    def lambdas(self) -> np.ndarray:
        """Eigenvalues lambda_l = theta * sum_i k_i l_i, aligned with modes."""
        return self.theta * (self.modes @ np.asarray(self.k))

    @property
    def n_modes(self) -> int:
        return (self.L + 1) ** self.d

    def shell_index(self) -> np.ndarray:
        return self.modes.max(axis=1)

    def mode_values(self, points) -> np.ndarray:
        """psi_l at each point; shape (n_points, n_modes)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        sc = self.scales
        vals = np.ones((pts.shape[0], self.n_modes))
        modes = self.modes
        for i in range(self.d):
            Hi = hermite_values(sc[i] * pts[:, i], self.L) * np.sqrt(sc[i])
            vals *= Hi[:, modes[:, i]]
        return vals

    def mode_derivative_values(self, points, axis: int) -> np.ndarray:
        """d/dx_axis psi_l at each point; shape (n_points, n_modes)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        sc = self.scales
        vals = np.ones((pts.shape[0], self.n_modes))
        modes = self.modes
        for i in range(self.d):
            if i == axis:
                Di = hermite_derivative_values(sc[i] * pts[:, i], self.L) * (np.sqrt(sc[i]) * sc[i])
                vals *= Di[:, modes[:, i]]
            else:
                Hi = hermite_values(sc[i] * pts[:, i], self.L) * np.sqrt(sc[i])
                vals *= Hi[:, modes[:, i]]
        return vals

    def basis_eval(self, l, x) -> float:
        """psi_l(x) for one multi-index l = (l_1, ..., l_d)."""
        l = tuple(int(v) for v in np.atleast_1d(l))
        if len(l) != self.d or any(v < 0 or v > self.L for v in l):
            raise ConfigurationError(f"multi-index {l} outside truncation |l|_inf <= {self.L}")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sc = self.scales
        out = np.ones(x.shape[0])
        for i in range(self.d):
            Hi = hermite_values(sc[i] * x[:, i], max(l[i], 1)) * np.sqrt(sc[i])
            out *= Hi[:, l[i]]
        return float(out[0]) if out.size == 1 else out

    def weight(self, x):
        return weight(self.theta, x, self.k, self.sigma)

    def sobolev_factors(self) -> np.ndarray:
        """(1 + lambda_l)^(-r/2): converts raw pairings to H^-r coefficients."""
        return (1.0 + self.lambdas) ** (-self.r / 2.0)

    def quadrature(self, order: int | None = None):
        """Nodes/weights with the weight folded in: sum W f(x) = int f w_theta dx."""
        order = order or (2 * self.L + 1)
        t, w = np.polynomial.hermite.hermgauss(order)
        sc = self.scales
        axes = [np.sqrt(2.0) * t / sc[i] for i in range(self.d)]
        wts = [np.sqrt(2.0) * w / sc[i] for i in range(self.d)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        wg = np.meshgrid(*wts, indexing="ij")
        W = np.prod(np.stack([g.ravel() for g in wg], axis=0), axis=0)
        return pts, W

    def manifest(self) -> dict:
        return {
            "theta": self.theta,
            "r": self.r,
            "k": list(self.k),
            "sigma": list(self.sigma),
            "L": self.L,
        }

    def compatible_with(self, other: "HermiteBasis") -> bool:
        return self.manifest() == other.manifest()


@dataclass
class DualVector:
    """Coefficients of a distribution against the H^r basis functions.

    ``coeffs[j] = <u, psi_{l_j, r, theta}> = (1+lambda_j)^(-r/2) <u, psi_{l_j}>``,
    so the truncated dual norm is the plain l2 norm of ``coeffs``.
    """

    basis: HermiteBasis
    coeffs: np.ndarray
    mean_part: np.ndarray | None = None

    def _check(self, other: "DualVector"):
        if not self.basis.compatible_with(other.basis):
            raise ConfigurationError("basis mismatch between dual vectors "
                                     f"({self.basis.manifest()} vs {other.basis.manifest()})")

    def __sub__(self, other: "DualVector") -> "DualVector":
        self._check(other)
        mp = None
        if self.mean_part is not None and other.mean_part is not None:
            mp = self.mean_part - other.mean_part
        return DualVector(self.basis, self.coeffs - other.coeffs, mp)

    def shells(self) -> np.ndarray:
        """Squared-coefficient mass per max-degree shell."""
        idx = self.basis.shell_index()
        out = np.zeros(self.basis.L + 1)
        np.add.at(out, idx, self.coeffs**2)
        return out

    def norm_at(self, L: int) -> float:
        sh = self.shells()
        return float(np.sqrt(np.sum(sh[: L + 1])))

    def tail_estimate(self) -> float:
        """Extrapolated truncation error of the norm (absolute).

        Shell masses of rough measures (point masses) decay only at a power
        law with an oscillating prefactor, so the estimate block-averages the
        top shells and fits a log-log slope; smooth densities give steep
        slopes and negligible tails.  Raises :class:`TruncationError` when
        the fitted shell mass is non-summable (still growing at the cut).
        """
        sh = self.shells()
        total = float(np.sum(sh))
        if total <= 0:
            return 0.0
        L = self.basis.L
        block = 4
        nblocks = min(5, (L + 1) // block)
        if nblocks < 2:
            return 0.0
        means = []
        centers = []
        for b in range(nblocks):
            hi = L + 1 - b * block
            lo = hi - block
            means.append(np.mean(sh[lo:hi]))
            centers.append(0.5 * (lo + hi - 1))
        means = np.asarray(means[::-1])
        centers = np.asarray(centers[::-1])
        if means[-1] <= 1e-28 * total:
            return 0.0
        keep = means > 0
        if keep.sum() < 2:
            return 0.0
        logj = np.log(centers[keep])
        logm = np.log(means[keep])
        p = np.polyfit(logj, logm, 1)[0]
        last = means[-1]
        if p >= -1.0:
            if last > 1e-14 * total:
                raise TruncationError(
                    f"dual-norm shells are not summable at L={L} "
                    f"(fitted decay exponent {p:.2f}); increase L")
            return 0.0
        # sum_{j>L} A j^p with A pinned at the last block
        A = last / centers[-1] ** p
        tail_sq = A * (L + 1) ** (p + 1.0) / (-p - 1.0)
        return float(np.sqrt(total + max(tail_sq, 0.0)) - np.sqrt(total))

    def norm(self) -> float:
        val = float(np.linalg.norm(self.coeffs))
        if self.mean_part is not None:
            val = float(np.hypot(val, np.linalg.norm(self.mean_part)))
        return val


@dataclass
class NormReport:
    value: float
    tail_estimate: float
    manifest: dict


def delta_coefficients(basis: HermiteBasis, x) -> DualVector:
    """Dual coefficients of the point mass at x."""
    vals = basis.mode_values(np.atleast_2d(x))[0]
    return DualVector(basis, basis.sobolev_factors() * vals)


def empirical_coefficients(basis: HermiteBasis, points: np.ndarray,
                           weights: np.ndarray | None = None) -> DualVector:
    """Dual coefficients of (weighted) point clouds, default uniform 1/N."""
    pts = np.atleast_2d(points)
    vals = basis.mode_values(pts)
    if weights is None:
        raw = vals.mean(axis=0)
    else:
        w = np.asarray(weights, dtype=float)
        raw = w @ vals
    return DualVector(basis, basis.sobolev_factors() * raw)


def gaussian_coefficients(basis: HermiteBasis, mean, var_diag) -> DualVector:
    """Dual coefficients of a diagonal Gaussian density (exact quadrature)."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var_diag, dtype=float)
    order = basis.L + 1
    t, w = np.polynomial.hermite.hermgauss(order)
    w = w / np.sqrt(np.pi)
    axes = [np.sqrt(2.0 * var[i]) * t + mean[i] for i in range(basis.d)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wg = np.meshgrid(*([w] * basis.d), indexing="ij")
    W = np.prod(np.stack([g.ravel() for g in wg], axis=0), axis=0)
    return empirical_coefficients(basis, pts, W)


def dual_norm(u, basis: HermiteBasis, require_tail: float | None = None) -> NormReport:
    """Truncated dual norm of u with its tail estimate.

    ``u`` may be a DualVector, a point (interpreted as delta_x), an (n, d)
    point cloud (its empirical measure), or a pair (points, weights).
    """
    if isinstance(u, DualVector):
        dv = u
    else:
        if isinstance(u, tuple) and len(u) == 2:
            dv = empirical_coefficients(basis, u[0], u[1])
        else:
            arr = np.asarray(u, dtype=float)
            if arr.ndim == 1:
                dv = delta_coefficients(basis, arr)
            else:
                dv = empirical_coefficients(basis, arr)
    tail = dv.tail_estimate()
    value = dv.norm()
    if require_tail is not None and value > 0 and tail > require_tail * value:
        raise TruncationError(
            f"tail estimate {tail:.3g} exceeds {require_tail:.2%} of the norm {value:.3g}"
        )
    return NormReport(value=value, tail_estimate=tail, manifest=basis.manifest())


def empirical_distance(basis: HermiteBasis, points: np.ndarray, mean_state,
                       target: DualVector, target_mean=None) -> float:
    """Product-space distance between an ensemble and a target density.

    The density parts are compared in the truncated dual norm; the Euclidean
    mean component enters through the product structure (root sum of
    squares).
    """
    emp = empirical_coefficients(basis, points)
    diff = emp - target
    dens = float(np.linalg.norm(diff.coeffs))
    if target_mean is None:
        return dens
    dm = np.asarray(mean_state, dtype=float) - np.asarray(target_mean, dtype=float)
    return float(np.hypot(dens, np.linalg.norm(dm)))


def cross_weight_comparison(points, theta: float, theta_prime: float,
                            k, sigma, r: float, L: int) -> dict:
    """Empirical comparison constant between dual norms at two weights.

    Evaluates ||u||_{-r, theta'} / ||u||_{-r, theta} over a family of point
    masses (theta' <= theta) and reports the maximum ratio.
    """
    if theta_prime > theta:
        raise ConfigurationError("cross-weight comparison requires theta' <= theta")
    b1 = HermiteBasis(theta=theta, r=r, k=tuple(k), sigma=tuple(sigma), L=L)
    b2 = HermiteBasis(theta=theta_prime, r=r, k=tuple(k), sigma=tuple(sigma), L=L)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ratios = []
    for x in pts:
        n1 = dual_norm(x, b1)
        n2 = dual_norm(x, b2)
        ratios.append(n2.value / n1.value)
    ratios = np.asarray(ratios)
    return {
        "theta": theta,
        "theta_prime": theta_prime,
        "r": r,
        "L": L,
        "max_ratio": float(ratios.max()),
        "ratios": ratios,
    }
