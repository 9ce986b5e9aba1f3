"""Spectral solver for the centered limit dynamics (density + mean).

The density of the recentered coordinates is expanded on the eigenbasis of
the linear relaxation operator, on which that operator acts diagonally with
rates -lambda_l; the slow transport term is evaluated pseudo-spectrally on a
Gauss-Hermite grid of twice the truncation order (de-aliasing by padding)
and projected back.  Time stepping is a Strang splitting: exact exponential
on the diagonal part, midpoint rule on the transport.

The periodic solution of the coupled system is found by a damped fixed-point
iteration on the return map to a Poincare section of the mean path, with the
phase pinned to the section.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, ConvergenceError, ResolutionError
from .hermite import DualVector, HermiteBasis, hermite_derivative_values, hermite_values
from .model import DiffusionModel, eval_field
from .reduced import LimitCycle

__all__ = [
    "SpectralSolver",
    "SpectralState",
    "PeriodicSolutionArtifact",
    "find_periodic_solution",
]


@dataclass
class SpectralState:
    """Expansion coefficients of the centered density plus the mean.

    ``coeffs`` has shape (L+1,)*d; entry l is <p, psi_l> for the solver's
    evolution basis, so the realized density is p = (sum_l c_l psi_l) * w.
    """

    coeffs: np.ndarray
    m: np.ndarray
    t: float = 0.0

    def copy(self) -> "SpectralState":
        return SpectralState(self.coeffs.copy(), self.m.copy(), self.t)


class SpectralSolver:
    def __init__(self, model: DiffusionModel, L: int = 30,
                 diffusion_scale: float = 1.0, quad_order: int | None = None):
        if L < 2:
            raise ConfigurationError("spectral truncation L must be >= 2", key_path="numerics.l_max")
        if not (0.0 < diffusion_scale <= 1.0):
            raise ConfigurationError("diffusion scale must lie in (0, 1]")
        self.model = model
        self.L = L
        self.diffusion_scale = diffusion_scale
        d = model.d
        self.d = d
        self.scales = np.sqrt(model.k / (diffusion_scale * model.sig2))

        Q = quad_order or max(2 * L, L + 2)
        self.quad_order = Q
        t, w = np.polynomial.hermite.hermgauss(Q)
        self.axes = [np.sqrt(2.0) * t / self.scales[i] for i in range(d)]
        self.axis_weights = [np.sqrt(2.0) * w / self.scales[i] for i in range(d)]

        # per-dimension value/derivative tables at the grid nodes
        self.psi_tabs = []
        self.dpsi_tabs = []
        for i in range(d):
            y = self.scales[i] * self.axes[i]
            root = np.sqrt(self.scales[i])
            self.psi_tabs.append(hermite_values(y, L) * root)
            self.dpsi_tabs.append(hermite_derivative_values(y, L) * (root * self.scales[i]))

        grids = np.meshgrid(*self.axes, indexing="ij")
        self.grid_points = np.stack([g.ravel() for g in grids], axis=1)
        wg = np.meshgrid(*self.axis_weights, indexing="ij")
        self.grid_weights = np.prod(np.stack([g.ravel() for g in wg], axis=0), axis=0)
        self.grid_shape = (Q,) * d

        l_axis = np.arange(L + 1)
        lam = np.zeros((L + 1,) * d)
        for i in range(d):
            shape = [1] * d
            shape[i] = L + 1
            lam = lam + (model.k[i] * l_axis).reshape(shape)
        self.lam = lam
        self.mass_factor = float(np.prod((2.0 * np.pi) ** 0.25 / np.sqrt(self.scales)))
        self._dual_cache: dict = {}
        self._exp_cache: dict = {}
        self._w_grid = self.grid_weights.reshape(self.grid_shape)
        try:
            from .particle import kernel_field_code

            self._code, self._fp = kernel_field_code(model)
        except ConfigurationError:
            self._code = None
            self._fp = None

    # -- basic transforms ----------------------------------------------------

    def _to_grid(self, C: np.ndarray) -> np.ndarray:
        out = C
        for i in range(self.d):
            out = np.moveaxis(np.tensordot(self.psi_tabs[i], out, axes=(1, i)), 0, i)
        return out

    def _project(self, U: np.ndarray, deriv_axis: int | None = None) -> np.ndarray:
        """Adjoint transform of a weighted grid function onto the modes."""
        out = U
        for i in range(self.d):
            tab = self.dpsi_tabs[i] if i == deriv_axis else self.psi_tabs[i]
            out = np.moveaxis(np.tensordot(tab.T, out, axes=(1, i)), 0, i)
        return out

    def rho_coefficients(self) -> np.ndarray:
        """Coefficients of the stationary Gaussian of the relaxation operator."""
        C = np.zeros((self.L + 1,) * self.d)
        C[(0,) * self.d] = np.prod(np.sqrt(self.scales) * (2.0 * np.pi) ** (-0.25))
        return C

    def stationary_state(self, m=None) -> SpectralState:
        m = np.zeros(self.d) if m is None else np.asarray(m, dtype=float).copy()
        return SpectralState(self.rho_coefficients(), m)

    def mass(self, C: np.ndarray) -> float:
        return float(C[(0,) * self.d] * self.mass_factor)

    def density_on_grid(self, C: np.ndarray) -> np.ndarray:
        """Realized density values p(x_q) = P(x_q) w(x_q) on the flat grid."""
        P = self._to_grid(C).ravel()
        q = np.sum(self.scales**2 * self.grid_points**2, axis=1)
        return P * np.exp(-0.5 * q)

    def moment(self, C: np.ndarray, func) -> np.ndarray:
        """<p, f> for a grid-evaluable f (integration against the density)."""
        P = self._to_grid(C).ravel()
        vals = func(self.grid_points)
        return np.tensordot(self.grid_weights * P, vals, axes=(0, 0))

    def top_shell_fraction(self, C: np.ndarray) -> float:
        total = float(np.sum(C**2))
        if total == 0.0:
            return 0.0
        sl = [slice(None)] * self.d
        top = 0.0
        for i in range(self.d):
            s = list(sl)
            s[i] = self.L
            top += float(np.sum(C[tuple(s)] ** 2))
        return top / total

    # -- generator and time stepping ------------------------------------------

    def _field_on_grid(self, m: np.ndarray) -> np.ndarray:
        if self._code is not None:
            from ._kernels import field_batch

            out = np.empty_like(self.grid_points)
            field_batch(self.grid_points + m, self._code, self._fp, out)
            return out
        return eval_field(self.model, self.grid_points + m)

    def transport_rhs(self, C: np.ndarray, m: np.ndarray):
        """delta-scale transport term and mean velocity (OU part excluded)."""
        delta = self.model.delta
        if self.d == 2:
            P0, P1 = self.psi_tabs
            D0, D1 = self.dpsi_tabs
            P = P0 @ C @ P1.T
            WP = self._w_grid * P
            F = self._field_on_grid(m)
            wp_flat = WP.ravel()
            meanF = wp_flat @ F
            U0 = WP * (F[:, 0].reshape(self.grid_shape) - meanF[0])
            U1 = WP * (F[:, 1].reshape(self.grid_shape) - meanF[1])
            dC = D0.T @ U0 @ P1 + P0.T @ U1 @ D1
            return delta * dC, delta * meanF
        P = self._to_grid(C)
        WP = self._w_grid * P
        F = self._field_on_grid(m).reshape(self.grid_shape + (self.d,))
        meanF = np.tensordot(WP.ravel(), F.reshape(-1, self.d), axes=(0, 0))
        dC = np.zeros_like(C)
        for k in range(self.d):
            U = WP * (F[..., k] - meanF[k])
            dC += self._project(U, deriv_axis=k)
        return delta * dC, delta * meanF

    def apply_generator(self, state: SpectralState, alias_tol: float = 0.1):
        """Full time derivative (dC, dm); raises on an aliased coefficient tail."""
        frac = self.top_shell_fraction(state.coeffs)
        if frac > alias_tol:
            raise ResolutionError(
                f"top-shell energy fraction {frac:.2%} exceeds {alias_tol:.0%}; increase L"
            )
        tC, tm = self.transport_rhs(state.coeffs, state.m)
        return tC - self.lam * state.coeffs, tm

    def _strang_step(self, C: np.ndarray, m: np.ndarray, dt: float):
        half = self._exp_cache.get(dt)
        if half is None:
            half = np.exp(-self.lam * (0.5 * dt))
            if len(self._exp_cache) < 64:
                self._exp_cache[dt] = half
        C = half * C
        k1C, k1m = self.transport_rhs(C, m)
        midC = C + 0.5 * dt * k1C
        midm = m + 0.5 * dt * k1m
        k2C, k2m = self.transport_rhs(midC, midm)
        C = C + dt * k2C
        m = m + dt * k2m
        return half * C, m

    def evolve(self, state: SpectralState, horizon: float, dt: float = 1e-2,
               alias_check_every: int = 200, alias_tol: float = 0.1) -> SpectralState:
        """Advance by ``horizon`` with Strang steps of size dt (remainder step at the end)."""
        if horizon < 0:
            raise ConfigurationError("horizon must be >= 0")
        C = state.coeffs.copy()
        m = state.m.copy()
        nfull = int(np.floor(horizon / dt + 1e-12))
        rem = horizon - nfull * dt
        for s in range(nfull):
            C, m = self._strang_step(C, m, dt)
            if alias_check_every and (s + 1) % alias_check_every == 0:
                frac = self.top_shell_fraction(C)
                if frac > alias_tol:
                    raise ResolutionError(
                        f"top-shell energy fraction {frac:.2%} exceeds {alias_tol:.0%} "
                        f"at t={state.t + (s + 1) * dt:.3f}")
        if rem > 1e-14:
            C, m = self._strang_step(C, m, rem)
        return SpectralState(C, m, state.t + horizon)

    # -- projections onto reporting bases --------------------------------------

    def _dual_tables(self, basis: HermiteBasis):
        key = tuple(sorted(basis.manifest().items(), key=lambda kv: kv[0]))
        key = str(key)
        tabs = self._dual_cache.get(key)
        if tabs is None:
            tabs = []
            for i in range(self.d):
                y = basis.scales[i] * self.axes[i]
                tabs.append(hermite_values(y, basis.L) * np.sqrt(basis.scales[i]))
            self._dual_cache[key] = tabs
        return tabs

    def dual_coefficients(self, C: np.ndarray, basis: HermiteBasis) -> DualVector:
        """Expand the spectral density on a reporting basis (exact quadrature)."""
        if basis.d != self.d:
            raise ConfigurationError("basis dimension mismatch")
        tabs = self._dual_tables(basis)
        U = self.grid_weights.reshape(self.grid_shape) * self._to_grid(C)
        out = U
        for i in range(self.d):
            out = np.moveaxis(np.tensordot(tabs[i].T, out, axes=(1, i)), 0, i)
        raw = out.ravel()
        return DualVector(basis, basis.sobolev_factors() * raw)

    def sample_density(self, C: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
        """Draw n points from the realized density by rejection against the base Gaussian."""
        P = self._to_grid(C).ravel()
        Prho = float(np.prod(self.scales / np.sqrt(2.0 * np.pi)))
        Mbound = 1.05 * max(float(P.max()) / Prho, 1.0)
        gen = np.random.default_rng(np.random.SeedSequence([int(seed), 914]))
        sd = 1.0 / self.scales
        out = np.empty((n, self.d))
        got = 0
        tabs = self.psi_tabs
        while got < n:
            batch = max(2 * (n - got), 1000)
            x = gen.standard_normal((batch, self.d)) * sd
            vals = np.ones(batch)
            Cflat = C
            # evaluate P at the sample points via the mode tensor
            V = None
            prod = []
            for i in range(self.d):
                y = self.scales[i] * x[:, i]
                prod.append(hermite_values(y, self.L) * np.sqrt(self.scales[i]))
            if self.d == 1:
                Pv = prod[0] @ Cflat
            elif self.d == 2:
                Pv = np.einsum("qa,ab,qb->q", prod[0], Cflat, prod[1])
            else:
                Pv = np.zeros(batch)
                it = np.ndindex(*Cflat.shape)
                for l in it:
                    term = Cflat[l]
                    if term == 0.0:
                        continue
                    contrib = np.full(batch, term)
                    for i in range(self.d):
                        contrib *= prod[i][:, l[i]]
                    Pv += contrib
            ratio = np.clip(Pv / Prho, 0.0, None) / Mbound
            acc = gen.random(batch) < ratio
            take = min(int(acc.sum()), n - got)
            out[got:got + take] = x[acc][:take]
            got += take
        return out


@dataclass
class PeriodicSolutionArtifact:
    """Periodic solution of the spectral system: snapshots over one period."""

    period: float
    times: np.ndarray
    coeff_snapshots: np.ndarray   # (S,) + (L+1,)*d
    gamma: np.ndarray             # (S, d)
    residual: float
    iterations: int
    L: int
    diffusion_scale: float
    residual_basis: dict
    model_fingerprint: str = ""
    mass_error: float = 0.0
    mean_error: float = 0.0

    def gamma_at(self, phase):
        T = self.period
        tg = np.append(self.times, T)
        g = np.vstack([self.gamma, self.gamma[:1]])
        spl = CubicSpline(tg, g, bc_type="periodic")
        return spl(np.mod(phase, T))

    def coeffs_at(self, phase) -> np.ndarray:
        T = self.period
        tg = np.append(self.times, T)
        flat = self.coeff_snapshots.reshape(len(self.times), -1)
        closed = np.vstack([flat, flat[:1]])
        spl = CubicSpline(tg, closed, bc_type="periodic")
        return spl(np.mod(phase, T)).reshape(self.coeff_snapshots.shape[1:])

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "times": self.times.tolist(),
            "coeff_snapshots": self.coeff_snapshots.reshape(len(self.times), -1).tolist(),
            "coeff_shape": list(self.coeff_snapshots.shape[1:]),
            "gamma": self.gamma.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "L": self.L,
            "diffusion_scale": self.diffusion_scale,
            "residual_basis": self.residual_basis,
            "model_fingerprint": self.model_fingerprint,
            "mass_error": self.mass_error,
            "mean_error": self.mean_error,
        }

    @staticmethod
    def from_dict(data: dict) -> "PeriodicSolutionArtifact":
        shape = tuple(data["coeff_shape"])
        snaps = np.asarray(data["coeff_snapshots"]).reshape((-1,) + shape)
        return PeriodicSolutionArtifact(
            period=float(data["period"]),
            times=np.asarray(data["times"]),
            coeff_snapshots=snaps,
            gamma=np.asarray(data["gamma"]),
            residual=float(data["residual"]),
            iterations=int(data["iterations"]),
            L=int(data["L"]),
            diffusion_scale=float(data["diffusion_scale"]),
            residual_basis=data["residual_basis"],
            model_fingerprint=data.get("model_fingerprint", ""),
            mass_error=float(data.get("mass_error", 0.0)),
            mean_error=float(data.get("mean_error", 0.0)),
        )


def _flow_to_section(solver: SpectralSolver, state: SpectralState, anchor, normal,
                     t_blind: float, t_max: float, dt: float) -> tuple[SpectralState, float]:
    """Flow blind for t_blind, then to the first positive crossing of the section."""
    st = solver.evolve(state, t_blind, dt)
    elapsed = t_blind
    s_prev = (st.m - anchor) @ normal
    while elapsed < t_max:
        nxt = solver.evolve(st, dt, dt)
        s_new = (nxt.m - anchor) @ normal
        if s_prev < 0.0 and s_new >= 0.0:
            frac = s_prev / (s_prev - s_new)
            final = solver.evolve(st, frac * dt, dt)
            return final, elapsed + frac * dt
        st = nxt
        s_prev = s_new
        elapsed += dt
    raise ConvergenceError("mean path did not return to the section "
                           f"within {t_max:.1f} time units")


def find_periodic_solution(model: DiffusionModel, cycle: LimitCycle,
                           L: int = 30, dt: float = 1e-2,
                           basis: HermiteBasis | None = None,
                           tol: float = 1e-6, max_iter: int = 60,
                           damping: float = 0.5,
                           n_snapshots: int = 96,
                           diffusion_scale: float = 1.0,
                           solver: SpectralSolver | None = None,
                           ) -> tuple[PeriodicSolutionArtifact, SpectralSolver]:
    """Damped fixed-point iteration on the section return map of the spectral flow.

    Starts from (stationary density, reduced-cycle anchor) with the reduced
    period divided by delta as the first period guess.  The residual is the
    product-space distance between successive section states, measured in the
    reporting basis.  Raises :class:`ConvergenceError` when the iteration
    stalls (resolution- or bifurcation-limited).
    """
    if model.delta <= 0:
        raise ConfigurationError("periodic solution requires delta > 0", key_path="model.delta")
    solver = solver or SpectralSolver(model, L=L, diffusion_scale=diffusion_scale)
    basis = basis or HermiteBasis.for_model(model, theta=0.5, r=4.0, L=L)

    anchor = cycle.samples[0].copy()
    normal = cycle.velocities[0] / np.linalg.norm(cycle.velocities[0])
    T_guess = cycle.period / model.delta

    state = solver.stationary_state(m=anchor)
    residual_history = []
    period = T_guess
    lam = damping
    for it in range(max_iter):
        ret, period = _flow_to_section(solver, SpectralState(state.coeffs, state.m, 0.0),
                                       anchor, normal, 0.5 * T_guess, 2.5 * T_guess, dt)
        dv = solver.dual_coefficients(ret.coeffs - state.coeffs, basis)
        res = float(np.hypot(dv.norm(), np.linalg.norm(ret.m - state.m)))
        residual_history.append(res)
        if res <= tol:
            state = ret
            break
        # the return map is strongly contracting transverse to the orbit, so
        # damping is only kept while the first iterates settle; it is restored
        # if an undamped step ever increases the residual
        if it >= 2 and (len(residual_history) < 2 or res <= residual_history[-2]):
            lam = 1.0
        elif it >= 2 and res > residual_history[-2]:
            lam = damping
        state = SpectralState(state.coeffs + lam * (ret.coeffs - state.coeffs),
                              state.m + lam * (ret.m - state.m), 0.0)
    else:
        raise ConvergenceError(
            f"periodic-solution iteration did not reach {tol} in {max_iter} iterations",
            residual_history,
        )

    # final sweep: store snapshots at uniform phases over one period
    times = np.arange(n_snapshots) * (period / n_snapshots)
    snaps = np.empty((n_snapshots,) + state.coeffs.shape)
    gam = np.empty((n_snapshots, model.d))
    cur = SpectralState(state.coeffs.copy(), state.m.copy(), 0.0)
    step_len = period / n_snapshots
    mass_err = 0.0
    mean_err = 0.0
    for j in range(n_snapshots):
        snaps[j] = cur.coeffs
        gam[j] = cur.m
        mass_err = max(mass_err, abs(solver.mass(cur.coeffs) - 1.0))
        mean_err = max(mean_err, float(np.max(np.abs(
            solver.moment(cur.coeffs, lambda x: x)))))
        if j < n_snapshots - 1:
            cur = solver.evolve(cur, step_len, dt)

    artifact = PeriodicSolutionArtifact(
        period=float(period),
        times=times,
        coeff_snapshots=snaps,
        gamma=gam,
        residual=residual_history[-1],
        iterations=len(residual_history),
        L=solver.L,
        diffusion_scale=solver.diffusion_scale,
        residual_basis=basis.manifest(),
        model_fingerprint=model.fingerprint(),
        mass_error=mass_err,
        mean_error=mean_err,
    )
    return artifact, solver
