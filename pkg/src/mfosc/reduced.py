"""Reduced slow dynamics: Gaussian-smoothed drift, limit cycle, isochron.

For small coupling the ensemble mean follows (after time rescaling) the ODE
z' = G(z), where G is the drift field averaged against the Gaussian
relaxation profile of the fast coordinates.  This module locates the stable
periodic orbit of that ODE, computes its Floquet structure, builds the
asymptotic-phase (isochron) map in a tube around the orbit, and evaluates
the cycle-averaged phase-drift/phase-diffusion coefficients used as the
finite-dimensional oracle for the particle measurements.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    ConfigurationError,
    ConvergenceError,
    NoCycleError,
    OutOfBasinError,
)
from .model import DiffusionModel, eval_field, eval_jacobian

__all__ = [
    "SmoothedField",
    "LimitCycle",
    "IsochronMap",
    "PhaseOracle",
    "find_limit_cycle",
    "principal_matrix",
    "build_isochron",
    "oracle_phase_coefficients",
]


class SmoothedField:
    """Drift field averaged against the Gaussian with covariance sigma^2 K^-1.

    Uses a tensor Gauss-Hermite rule; ``order`` nodes per dimension integrate
    polynomials of degree <= 2*order - 1 exactly.
    """

    def __init__(self, model: DiffusionModel, order: int = 20):
        if order < 2:
            raise ConfigurationError("quadrature order must be >= 2", key_path="numerics.quad_order")
        self.model = model
        self.order = order
        nodes1, weights1 = np.polynomial.hermite.hermgauss(order)
        sd = np.sqrt(model.stationary_variance)
        axes = [np.sqrt(2.0) * sd[i] * nodes1 for i in range(model.d)]
        grids = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([g.ravel() for g in grids], axis=1)
        w = weights1 / np.sqrt(np.pi)
        wg = np.meshgrid(*([w] * model.d), indexing="ij")
        self.weights = np.prod(np.stack([g.ravel() for g in wg], axis=0), axis=0)
        self.weights = self.weights / self.weights.sum()
        # compiled fast path for the built-in field kinds
        try:
            from .particle import kernel_field_code

            self._code, self._fp = kernel_field_code(model)
        except ConfigurationError:
            self._code = None
            self._fp = None

    def __call__(self, z) -> np.ndarray:
        return self.eval_batch(np.asarray(z, dtype=float)[None, :])[0]

    def jacobian(self, z) -> np.ndarray:
        return self.jacobian_batch(np.asarray(z, dtype=float)[None, :])[0]

    def eval_batch(self, Z: np.ndarray) -> np.ndarray:
        """G at a batch of points; shape (n, d)."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self._code is not None:
            from ._kernels import smoothed_field_batch

            out = np.empty_like(Z)
            smoothed_field_batch(Z, self.nodes, self.weights, self._code, self._fp, out)
            return out
        n, d = Z.shape
        q = len(self.weights)
        pts = (self.nodes[None, :, :] + Z[:, None, :]).reshape(n * q, d)
        F = eval_field(self.model, pts).reshape(n, q, d)
        return np.tensordot(F, self.weights, axes=(1, 0))

    def jacobian_batch(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        n, d = Z.shape
        if self._code is not None:
            from ._kernels import smoothed_jacobian_batch

            out = np.empty((n, d, d))
            smoothed_jacobian_batch(Z, self.nodes, self.weights, self._code, self._fp, out)
            return out
        q = len(self.weights)
        pts = (self.nodes[None, :, :] + Z[:, None, :]).reshape(n * q, d)
        J = eval_jacobian(self.model, pts).reshape(n, q, d, d)
        return np.einsum("nqij,q->nij", J, self.weights)

    def moment_checks(self) -> dict:
        """Quadrature sanity: total mass, mean, and second moments of the profile."""
        mass = float(self.weights.sum())
        mean = self.weights @ self.nodes
        second = (self.weights[:, None] * self.nodes) .T @ self.nodes
        return {
            "mass_error": abs(mass - 1.0),
            "mean_error": float(np.max(np.abs(mean))),
            "second_moment_error": float(
                np.max(np.abs(second - np.diag(self.model.stationary_variance)))
            ),
        }

    def _rhs(self, t, z):
        return self(z)

    def flow(self, z0, tspan, rtol=1e-10, atol=1e-10, **kw):
        return solve_ivp(self._rhs, tspan, np.asarray(z0, dtype=float),
                         rtol=rtol, atol=atol, dense_output=True, **kw)

    def _rhs_var(self, t, y):
        d = self.model.d
        z = y[:d]
        P = y[d:].reshape(d, d)
        dz = self(z)
        dP = self.jacobian(z) @ P
        return np.concatenate([dz, dP.ravel()])

    def flow_with_variational(self, z0, tspan, rtol=1e-10, atol=1e-10, **kw):
        d = self.model.d
        y0 = np.concatenate([np.asarray(z0, dtype=float), np.eye(d).ravel()])
        return solve_ivp(self._rhs_var, tspan, y0, rtol=rtol, atol=atol,
                         dense_output=True, **kw)


@dataclass
class LimitCycle:
    """Sampled periodic orbit with Floquet data.

    ``principal[j]`` is the principal matrix solution from phase 0 to
    ``times[j]``; ``pc``/``ps`` are the rank-1 tangential and complementary
    spectral projections of the monodromy at each sample.
    """

    period: float
    times: np.ndarray
    samples: np.ndarray
    velocities: np.ndarray
    principal: np.ndarray
    monodromy: np.ndarray
    multipliers: np.ndarray
    pc: np.ndarray
    ps: np.ndarray
    section_anchor: np.ndarray
    section_normal: np.ndarray
    shooting_residual: float
    model_fingerprint: str = ""
    _state_spline: CubicSpline = dc_field(default=None, repr=False, compare=False)
    _velocity_spline: CubicSpline = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._state_spline is None:
            tgrid = np.append(self.times, self.period)
            closed = np.vstack([self.samples, self.samples[:1]])
            vclosed = np.vstack([self.velocities, self.velocities[:1]])
            object.__setattr__(self, "_state_spline",
                               CubicSpline(tgrid, closed, bc_type="periodic"))
            object.__setattr__(self, "_velocity_spline",
                               CubicSpline(tgrid, vclosed, bc_type="periodic"))

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def state_at(self, u):
        return self._state_spline(np.mod(u, self.period))

    def velocity_at(self, u):
        return self._velocity_spline(np.mod(u, self.period))

    def stable_multiplier_modulus(self) -> float:
        mods = np.abs(self.multipliers)
        return float(np.sort(mods)[-2]) if len(mods) > 1 else 0.0

    def nearest_phase(self, x, refine: bool = True) -> tuple[float, float]:
        """Phase of the closest cycle point and the distance to it."""
        x = np.asarray(x, dtype=float)
        d2 = np.sum((self.samples - x) ** 2, axis=1)
        j = int(np.argmin(d2))
        u = self.times[j]
        if refine:
            # Newton on g(u) = (alpha(u) - x) . alpha'(u)
            for _ in range(30):
                a = self.state_at(u)
                v = self.velocity_at(u)
                acc = self._velocity_spline(np.mod(u, self.period), 1)
                g = (a - x) @ v
                dg = v @ v + (a - x) @ acc
                if dg <= 0:
                    break
                du = -g / dg
                u = u + np.clip(du, -0.25 * self.period, 0.25 * self.period)
                if abs(du) < 1e-13 * self.period:
                    break
        u = float(np.mod(u, self.period))
        dist = float(np.linalg.norm(self.state_at(u) - x))
        return u, dist

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "times": self.times.tolist(),
            "samples": self.samples.tolist(),
            "velocities": self.velocities.tolist(),
            "principal": self.principal.tolist(),
            "monodromy": self.monodromy.tolist(),
            "multipliers_real": np.real(self.multipliers).tolist(),
            "multipliers_imag": np.imag(self.multipliers).tolist(),
            "pc": self.pc.tolist(),
            "ps": self.ps.tolist(),
            "section_anchor": self.section_anchor.tolist(),
            "section_normal": self.section_normal.tolist(),
            "shooting_residual": self.shooting_residual,
            "model_fingerprint": self.model_fingerprint,
        }

    @staticmethod
    def from_dict(data: dict) -> "LimitCycle":
        mult = np.asarray(data["multipliers_real"]) + 1j * np.asarray(data["multipliers_imag"])
        return LimitCycle(
            period=float(data["period"]),
            times=np.asarray(data["times"]),
            samples=np.asarray(data["samples"]),
            velocities=np.asarray(data["velocities"]),
            principal=np.asarray(data["principal"]),
            monodromy=np.asarray(data["monodromy"]),
            multipliers=mult,
            pc=np.asarray(data["pc"]),
            ps=np.asarray(data["ps"]),
            section_anchor=np.asarray(data["section_anchor"]),
            section_normal=np.asarray(data["section_normal"]),
            shooting_residual=float(data["shooting_residual"]),
            model_fingerprint=data.get("model_fingerprint", ""),
        )


def _section_basis(normal: np.ndarray) -> np.ndarray:
    """Orthonormal in-plane directions completing the section normal."""
    d = len(normal)
    M = np.eye(d) - np.outer(normal, normal)
    q, r = np.linalg.qr(M)
    cols = [q[:, j] for j in range(d) if abs(r[j, j]) > 1e-8]
    return np.column_stack(cols[: d - 1])


def _return_to_section(field: SmoothedField, x0, anchor, normal, t_max, t_min=0.0,
                       rtol=1e-10, atol=1e-10):
    """Integrate until the first positive-direction crossing after t_min."""

    def event(t, z):
        return (z - anchor) @ normal

    event.terminal = True
    event.direction = 1.0

    sol = solve_ivp(field._rhs, (0.0, t_max), np.asarray(x0, dtype=float),
                    rtol=rtol, atol=atol, dense_output=True, events=event,
                    max_step=t_max / 20.0)
    hits = [t for t in sol.t_events[0] if t > t_min]
    if not hits:
        if sol.t_events[0].size and t_min > 0:
            # terminal event fired too early; restart from just past it
            t0 = sol.t_events[0][0]
            z0 = sol.sol(t0 + 1e-9)
            times, z = _return_to_section(field, z0, anchor, normal,
                                          t_max - t0, t_min=0.0, rtol=rtol, atol=atol)
            return t0 + 1e-9 + times, z
        raise NoCycleError("no section crossing within the allotted time")
    t_hit = hits[0]
    return t_hit, sol.sol(t_hit)


def find_limit_cycle(field: SmoothedField, guess=None, transient: float = 200.0,
                     tol: float = 1e-10, max_newton: int = 25,
                     n_samples: int = 256, rtol: float = 1e-10,
                     atol: float = 1e-10) -> LimitCycle:
    """Locate a stable periodic orbit by Newton shooting on a Poincare section.

    The guess is first relaxed onto the attractor; a section is placed at the
    point of maximal speed with the flow direction as normal.  Raises
    :class:`NoCycleError` when the attractor is a fixed point (no crossings,
    or vanishing speed) and :class:`ConvergenceError` when shooting stalls.
    """
    model = field.model
    d = model.d
    z0 = np.zeros(d) if guess is None else np.asarray(guess, dtype=float)

    sol = field.flow(z0, (0.0, transient), rtol=1e-8, atol=1e-8)
    tail_t = np.linspace(max(0.0, transient - 120.0), transient, 4001)
    tail = sol.sol(tail_t).T
    speeds = np.linalg.norm([field(p) for p in tail], axis=1)
    if np.max(speeds) < 1e-6 or np.ptp(tail[:, 0]) < 1e-6:
        raise NoCycleError("trajectory converged to a fixed point")
    imax = int(np.argmax(speeds))
    anchor = tail[imax]
    normal = field(anchor)
    normal = normal / np.linalg.norm(normal)

    # rough period from successive crossings in the tail
    sgn = (tail - anchor) @ normal
    cross = np.where((sgn[:-1] < 0) & (sgn[1:] >= 0))[0]
    if len(cross) < 2:
        raise NoCycleError("fewer than two section crossings on the attractor")
    T_rough = float(np.mean(np.diff(tail_t[cross])))

    E = _section_basis(normal)

    def return_map(s):
        x = anchor + E @ np.atleast_1d(s)
        t_hit, z_hit = _return_to_section(field, x, anchor, normal,
                                          3.0 * T_rough, t_min=0.4 * T_rough,
                                          rtol=rtol, atol=atol)
        return t_hit, z_hit

    s = np.zeros(d - 1)
    residual_history = []
    T_alpha = T_rough
    for it in range(max_newton):
        T_alpha, z_ret = return_map(s)
        res_vec = E.T @ (z_ret - anchor) - s
        res = float(np.linalg.norm(z_ret - (anchor + E @ s)))
        residual_history.append(res)
        if res <= tol:
            break
        h = 1e-7 * max(1.0, np.max(np.abs(s)))
        Jm = np.empty((d - 1, d - 1))
        for j in range(d - 1):
            e = np.zeros(d - 1)
            e[j] = h
            _, zp = return_map(s + e)
            _, zm = return_map(s - e)
            Jm[:, j] = E.T @ (zp - zm) / (2 * h)
        try:
            ds = np.linalg.solve(Jm - np.eye(d - 1), -res_vec)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular shooting Jacobian", residual_history) from exc
        s = s + ds
    else:
        raise ConvergenceError(
            f"shooting did not reach tolerance {tol}", residual_history
        )

    x_star = anchor + E @ s

    # resample the orbit and the principal matrix solution at uniform phases
    times = np.arange(n_samples) * (T_alpha / n_samples)
    solv = field.flow_with_variational(x_star, (0.0, T_alpha), rtol=rtol, atol=atol)
    ys = solv.sol(times)
    samples = ys[:d].T
    principal = ys[d:].T.reshape(n_samples, d, d)
    velocities = np.array([field(p) for p in samples])
    monodromy = solv.sol(T_alpha)[d:].reshape(d, d)
    multipliers = np.linalg.eigvals(monodromy)

    order = np.argsort(np.abs(np.abs(multipliers) - 1.0))
    if abs(abs(multipliers[order[0]]) - 1.0) > 1e-4:
        raise ConvergenceError(
            f"monodromy has no unit multiplier: {multipliers}", residual_history
        )

    # left/right eigenvectors at multiplier 1: right is the cycle velocity
    v0 = velocities[0]
    wvals, wvecs = np.linalg.eig(monodromy.T)
    j1 = int(np.argmin(np.abs(wvals - 1.0)))
    w0 = np.real(wvecs[:, j1])
    w0 = w0 / (w0 @ v0)

    pc = np.empty((n_samples, d, d))
    ps = np.empty((n_samples, d, d))
    for j in range(n_samples):
        vj = velocities[j]
        wj = np.linalg.solve(principal[j].T, w0)
        wj = wj / (wj @ vj)
        pc[j] = np.outer(vj, wj)
        ps[j] = np.eye(d) - pc[j]

    return LimitCycle(
        period=float(T_alpha),
        times=times,
        samples=samples,
        velocities=velocities,
        principal=principal,
        monodromy=monodromy,
        multipliers=multipliers,
        pc=pc,
        ps=ps,
        section_anchor=anchor,
        section_normal=normal,
        shooting_residual=residual_history[-1],
        model_fingerprint=model.fingerprint(),
    )


def principal_matrix(field: SmoothedField, cycle: LimitCycle, u: float,
                     t: float, rtol: float = 1e-10, atol: float = 1e-10) -> np.ndarray:
    """Principal matrix solution over [u, u+t] of the linearization along the cycle."""
    z0 = cycle.state_at(u)
    if t == 0.0:
        return np.eye(cycle.dim)
    sol = field.flow_with_variational(z0, (0.0, t), rtol=rtol, atol=atol)
    d = cycle.dim
    return sol.y[d:, -1].reshape(d, d)


@dataclass
class IsochronMap:
    """Asymptotic phase in a tube around the limit cycle.

    On-cycle gradient and Hessian tables are stored at the cycle samples;
    off-cycle phases are computed either exactly (relax to the cycle, read
    the phase of the endpoint, subtract elapsed time) or through the
    second-order local expansion around the nearest cycle point.
    """

    cycle: LimitCycle
    tube_radius: float
    grad_table: np.ndarray
    hess_table: np.ndarray
    n_settle: int
    basin_radius: float = None  # type: ignore[assignment]
    _grad_spline: CubicSpline = dc_field(default=None, repr=False, compare=False)
    _hess_spline: CubicSpline = dc_field(default=None, repr=False, compare=False)
    field: SmoothedField = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        T = self.cycle.period
        tgrid = np.append(self.cycle.times, T)
        g = np.vstack([self.grad_table, self.grad_table[:1]])
        h = np.concatenate([self.hess_table, self.hess_table[:1]], axis=0)
        object.__setattr__(self, "_grad_spline", CubicSpline(tgrid, g, bc_type="periodic"))
        object.__setattr__(self, "_hess_spline",
                           CubicSpline(tgrid, h.reshape(len(tgrid), -1), bc_type="periodic"))
        if self.basin_radius is None:
            object.__setattr__(self, "basin_radius", 20.0 * self.tube_radius)

    def gradient_on_cycle(self, u):
        return self._grad_spline(np.mod(u, self.cycle.period))

    def hessian_on_cycle(self, u):
        d = self.cycle.dim
        return self._hess_spline(np.mod(u, self.cycle.period)).reshape(d, d)

    def _require_field(self):
        if self.field is None:
            raise ConfigurationError("this isochron map was loaded without a field; "
                                     "attach one to use exact phase evaluation")

    def phase(self, x, n_settle: int | None = None, max_periods: int = 10) -> float:
        """Exact asymptotic phase: relax, read endpoint phase, subtract time.

        Relaxation proceeds period by period until the trajectory has
        settled onto the cycle, which makes the evaluation valid far beyond
        the quadratic tube (anywhere in the basin except a neighborhood of
        the interior rest point, where :class:`OutOfBasinError` is raised
        after ``max_periods``).
        """
        self._require_field()
        x = np.asarray(x, dtype=float)
        u0, dist = self.cycle.nearest_phase(x)
        if dist > self.basin_radius:
            raise OutOfBasinError(f"state at distance {dist:.3g} from the cycle "
                                  f"(basin radius {self.basin_radius:.3g})")
        n0 = self.n_settle if n_settle is None else n_settle
        T = self.cycle.period
        settle_tol = 0.05 * self.tube_radius + 1e-7
        z = x
        elapsed = 0
        for _ in range(max_periods):
            take = min(n0, max_periods - elapsed)
            sol = self.field.flow(z, (0.0, take * T), rtol=1e-8, atol=1e-8)
            z = sol.y[:, -1]
            elapsed += take
            u_end, dist_end = self.cycle.nearest_phase(z)
            if dist_end <= settle_tol:
                return float(np.mod(u_end - elapsed * T, T))
        raise OutOfBasinError(
            f"trajectory failed to settle onto the cycle within {max_periods} periods")

    def phase_and_gradient(self, x, n_settle: int | None = None):
        """Phase plus the pulled-back gradient grad Theta(x) = V^T grad Theta(end)."""
        self._require_field()
        x = np.asarray(x, dtype=float)
        n = self.n_settle if n_settle is None else n_settle
        T = self.cycle.period
        d = self.cycle.dim
        sol = self.field.flow_with_variational(x, (0.0, n * T), rtol=1e-9, atol=1e-9)
        z_end = sol.y[:d, -1]
        V = sol.y[d:, -1].reshape(d, d)
        u_end, dist_end = self.cycle.nearest_phase(z_end)
        if dist_end > 0.05 * self.tube_radius + 1e-7:
            raise OutOfBasinError("trajectory failed to settle onto the cycle")
        g = V.T @ self.gradient_on_cycle(u_end)
        return float(np.mod(u_end - n * T, T)), g

    def evaluate(self, x, fd_step: float = 1e-4):
        """Phase, gradient, and Hessian of the phase map at a state.

        The Hessian comes from central differences of pulled-back gradients
        around x, matching the on-cycle construction.
        """
        ph, g = self.phase_and_gradient(x)
        d = self.cycle.dim
        x = np.asarray(x, dtype=float)
        H = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = fd_step
            _, gp = self.phase_and_gradient(x + e)
            _, gm = self.phase_and_gradient(x - e)
            H[:, k] = (gp - gm) / (2 * fd_step)
        return ph, g, 0.5 * (H + H.T)

    def phase_quadratic(self, x) -> float:
        """Second-order local phase around the nearest cycle point."""
        x = np.asarray(x, dtype=float)
        u0, dist = self.cycle.nearest_phase(x)
        if dist > self.tube_radius:
            raise OutOfBasinError(f"state at distance {dist:.3g} from the cycle "
                                  f"(tube radius {self.tube_radius:.3g})")
        dx = x - self.cycle.state_at(u0)
        g = self.gradient_on_cycle(u0)
        H = self.hessian_on_cycle(u0)
        return float(np.mod(u0 + g @ dx + 0.5 * dx @ H @ dx, self.cycle.period))

    def to_dict(self) -> dict:
        return {
            "tube_radius": self.tube_radius,
            "grad_table": self.grad_table.tolist(),
            "hess_table": self.hess_table.tolist(),
            "n_settle": self.n_settle,
        }

    @staticmethod
    def from_dict(data: dict, cycle: LimitCycle, field: SmoothedField | None = None) -> "IsochronMap":
        return IsochronMap(
            cycle=cycle,
            tube_radius=float(data["tube_radius"]),
            grad_table=np.asarray(data["grad_table"]),
            hess_table=np.asarray(data["hess_table"]),
            n_settle=int(data["n_settle"]),
            field=field,
        )


def _estimate_tube_radius(cycle: LimitCycle) -> float:
    """Half the closest approach between phase-distant parts of the orbit."""
    pts = cycle.samples
    T = cycle.period
    n = len(pts)
    sep = np.inf
    for j in range(n):
        du = np.abs(cycle.times - cycle.times[j])
        du = np.minimum(du, T - du)
        far = du > T / 8.0
        if np.any(far):
            dist = np.min(np.linalg.norm(pts[far] - pts[j], axis=1))
            sep = min(sep, dist)
    return 0.25 * sep if np.isfinite(sep) else 0.1


def _batched_settle(field: SmoothedField, starts: np.ndarray, horizon: float,
                    rtol: float = 1e-9, atol: float = 1e-9):
    """Flow several states with their variational matrices in one solve.

    Returns (end states (n, d), end variationals (n, d, d)).  The batch
    shares step-size control, which is fine here because the members stay
    within a finite-difference step of each other.
    """
    n, d = starts.shape
    block = d + d * d

    def rhs(t, y):
        Y = y.reshape(n, block)
        Z = Y[:, :d]
        V = Y[:, d:].reshape(n, d, d)
        G = field.eval_batch(Z)
        J = field.jacobian_batch(Z)
        dV = np.einsum("nij,njk->nik", J, V)
        return np.concatenate([G, dV.reshape(n, d * d)], axis=1).ravel()

    y0 = np.concatenate([starts, np.tile(np.eye(d).ravel(), (n, 1))], axis=1).ravel()
    sol = solve_ivp(rhs, (0.0, horizon), y0, rtol=rtol, atol=atol)
    Y = sol.y[:, -1].reshape(n, block)
    return Y[:, :d], Y[:, d:].reshape(n, d, d)


def build_isochron(field: SmoothedField, cycle: LimitCycle,
                   tube_radius: float | None = None,
                   fd_step: float = 1e-4,
                   settle_target: float = 1e-9,
                   hess_samples: int | None = None) -> IsochronMap:
    """Construct the on-cycle gradient/Hessian tables and the tube radius.

    The gradient on the cycle is the unit-normalized left Floquet vector of
    the monodromy; the Hessian comes from central differences of off-cycle
    gradients obtained by pulling the on-cycle gradient back through the
    variational flow (one batched settle per sample).
    """
    d = cycle.dim
    n = len(cycle.times)
    T = cycle.period

    # left eigenvector at multiplier 1 (recompute; cheap and self-contained)
    wvals, wvecs = np.linalg.eig(cycle.monodromy.T)
    j1 = int(np.argmin(np.abs(wvals - 1.0)))
    w0 = np.real(wvecs[:, j1])
    w0 = w0 / (w0 @ cycle.velocities[0])

    grad = np.empty((n, d))
    for j in range(n):
        wj = np.linalg.solve(cycle.principal[j].T, w0)
        grad[j] = wj / (wj @ cycle.velocities[j])

    radius = _estimate_tube_radius(cycle) if tube_radius is None else float(tube_radius)

    lam2 = cycle.stable_multiplier_modulus()
    if lam2 <= 0 or lam2 >= 1:
        n_settle = 6
    else:
        # periods needed to contract an fd_step perturbation below target
        n_settle = int(np.clip(np.ceil(np.log(settle_target / fd_step)
                                       / np.log(lam2)), 1, 12))

    iso = IsochronMap(cycle=cycle, tube_radius=radius, grad_table=grad,
                      hess_table=np.zeros((n, d, d)), n_settle=n_settle,
                      field=field)

    n_h = n if hess_samples is None else min(int(hess_samples), n)
    stride = max(1, n // n_h)
    idx = np.arange(0, n, stride)
    hess_t = cycle.times[idx]
    hess = np.empty((len(idx), d, d))
    offsets = np.concatenate([fd_step * np.eye(d), -fd_step * np.eye(d)], axis=0)
    for row, j in enumerate(idx):
        starts = cycle.samples[j] + offsets
        ends, vees = _batched_settle(field, starts, n_settle * T)
        grads = np.empty((2 * d, d))
        for q in range(2 * d):
            u_end, dist_end = cycle.nearest_phase(ends[q])
            if dist_end > 0.05 * radius + 1e-7:
                raise OutOfBasinError("Hessian probe failed to settle onto the cycle")
            grads[q] = vees[q].T @ iso.gradient_on_cycle(u_end)
        cols = (grads[:d] - grads[d:]).T / (2 * fd_step)
        hess[row] = 0.5 * (cols + cols.T)

    tgrid = np.append(hess_t, T)
    closed = np.concatenate([hess, hess[:1]], axis=0)
    hspline = CubicSpline(tgrid, closed.reshape(len(tgrid), -1), bc_type="periodic")
    full = hspline(cycle.times).reshape(n, d, d)
    object.__setattr__(iso, "hess_table", full)
    iso.__post_init__()  # rebuild splines with the real Hessian table
    return iso


@dataclass
class PhaseOracle:
    """Cycle-averaged phase drift and diffusion of the slow mean dynamics.

    Values are in reduced time and reduced phase units (cycle period
    ``period``).  ``b_fd`` is the Ito drift (1/T) oint sum_k sigma_k^2
    d2Theta/dx_k^2; ``b_fd_printed`` doubles it (the alternative bookkeeping
    in circulation); ``a2_fd`` is (2/T) oint sum_k sigma_k^2 (dTheta/dx_k)^2,
    the variance growth per unit time.  ``per_rescaled_time(delta)``
    converts to wall-clock phase units per rescaled time for a given
    timescale separation.
    """

    b_fd: float
    b_fd_printed: float
    a2_fd: float
    period: float

    def __iter__(self):
        return iter((self.b_fd, self.a2_fd))

    def per_rescaled_time(self, delta: float) -> tuple[float, float]:
        return self.b_fd / delta, self.a2_fd / delta**2


def oracle_phase_coefficients(cycle: LimitCycle, isochron: IsochronMap,
                              model: DiffusionModel,
                              n_particles: int | None = None) -> PhaseOracle:
    """Evaluate the oracle integrals over the stored cycle samples.

    ``n_particles`` fixes the noise scale sqrt(2/N) of the slow SDE the
    oracle describes; it cancels from the per-rescaled-time coefficients and
    is accepted only for interface completeness.
    """
    if isochron.hess_table is None or not np.any(isochron.hess_table):
        raise ConfigurationError("isochron Hessian table unavailable")
    sig2 = model.sig2
    g = isochron.grad_table
    H = isochron.hess_table
    drift_density = np.einsum("k,jkk->j", sig2, H)
    diff_density = np.einsum("k,jk->j", sig2, g**2)
    b_ito = float(np.mean(drift_density))
    a2 = float(2.0 * np.mean(diff_density))
    return PhaseOracle(b_fd=b_ito, b_fd_printed=2.0 * b_ito, a2_fd=a2,
                       period=cycle.period)
