"""Drift fields, interaction/noise matrices, and the validated model container.

The drift is a bounded vector field; the built-in FitzHugh-Nagumo kind is
multiplied by a smooth radial cutoff so that the field and its derivatives
are bounded on all of R^d.  Interaction and noise are diagonal matrices with
strictly positive entries.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, DomainError

__all__ = [
    "DiagonalMatrix",
    "VectorFieldSpec",
    "DiffusionModel",
    "cutoff_profile",
    "cutoff_profile_derivative",
    "eval_field",
    "eval_jacobian",
    "default_model",
    "FIELD_KINDS",
]

FIELD_KINDS = ("fitzhugh-nagumo-cutoff", "constant", "linear-test", "custom-table")

_BOUND_PADDING = 1.1  # safety factor on sampled derivative/field bounds


def _smooth_step(u: np.ndarray) -> np.ndarray:
    """C^inf transition: 0 for u <= 0, 1 for u >= 1, built from exp(-1/u)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    lo = u >= 1.0
    out[lo] = 1.0
    mid = (u > 0.0) & (u < 1.0)
    if np.any(mid):
        um = u[mid]
        a = np.exp(-1.0 / um)
        b = np.exp(-1.0 / (1.0 - um))
        out[mid] = a / (a + b)
    return out


def cutoff_profile(t):
    """Radial cutoff profile: 1 for t <= 1, 0 for t >= 2, smooth and non-increasing."""
    scalar = np.isscalar(t)
    val = _smooth_step(2.0 - np.asarray(t, dtype=float))
    return float(val) if scalar else val


def cutoff_profile_derivative(t):
    """d/dt of :func:`cutoff_profile`, via the closed form of the bump quotient."""
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(t)
    mid = (t > 1.0) & (t < 2.0)
    if np.any(mid):
        u = 2.0 - t[mid]
        a = np.exp(-1.0 / u)
        b = np.exp(-1.0 / (1.0 - u))
        da = a / u**2
        db = b / (1.0 - u) ** 2
        # d/du [a/(a+b)] = (da*b + a*db)/(a+b)^2 ; chain rule with u = 2-t
        out[mid] = -(da * b + a * db) / (a + b) ** 2
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class DiagonalMatrix:
    """Diagonal matrix with strictly positive entries."""

    entries: tuple

    def __post_init__(self):
        ent = tuple(float(e) for e in self.entries)
        object.__setattr__(self, "entries", ent)
        if len(ent) == 0:
            raise ConfigurationError("diagonal matrix needs at least one entry")
        if any((not np.isfinite(e)) or e <= 0.0 for e in ent):
            raise ConfigurationError(
                f"diagonal entries must be finite and strictly positive, got {ent}"
            )

    @property
    def dim(self) -> int:
        return len(self.entries)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.entries, dtype=float)

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.as_array())


@dataclass(frozen=True)
class VectorFieldSpec:
    """A registered drift field kind with its parameters.

    ``cutoff_radius`` R makes the field exact for |x| <= R and identically
    zero for |x| >= 2R; ``None`` disables the cutoff (only allowed for kinds
    that are already bounded, or in test setups that stay on a box).
    """

    kind: str
    params: dict
    cutoff_radius: float | None = 10.0

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ConfigurationError(
                f"unknown field kind {self.kind!r}; expected one of {FIELD_KINDS}",
                key_path="field.kind",
            )
        if self.cutoff_radius is not None and self.cutoff_radius <= 0:
            raise ConfigurationError("cutoff radius must be positive", key_path="field.cutoff_radius")
        object.__setattr__(self, "params", dict(self.params))
        if self.kind == "fitzhugh-nagumo-cutoff":
            for key in ("a", "b", "c"):
                if key not in self.params:
                    raise ConfigurationError(f"missing parameter {key!r}", key_path=f"field.params.{key}")
            if self.cutoff_radius is None:
                raise ConfigurationError(
                    "the FitzHugh-Nagumo kind requires a cutoff radius (unbounded otherwise)",
                    key_path="field.cutoff_radius",
                )
        elif self.kind == "constant":
            if "value" not in self.params:
                raise ConfigurationError("missing parameter 'value'", key_path="field.params.value")
        elif self.kind == "linear-test":
            if "matrix" not in self.params:
                raise ConfigurationError("missing parameter 'matrix'", key_path="field.params.matrix")
        elif self.kind == "custom-table":
            for key in ("axes", "values"):
                if key not in self.params:
                    raise ConfigurationError(f"missing parameter {key!r}", key_path=f"field.params.{key}")

    def dimension_hint(self) -> int | None:
        if self.kind == "fitzhugh-nagumo-cutoff":
            return 2
        if self.kind == "constant":
            return len(np.atleast_1d(self.params["value"]))
        if self.kind == "linear-test":
            return np.asarray(self.params["matrix"], dtype=float).shape[0]
        if self.kind == "custom-table":
            return len(self.params["axes"])
        return None


def _raw_field(spec: VectorFieldSpec, x: np.ndarray) -> np.ndarray:
    """Field value before the cutoff factor; x has shape (n, d)."""
    if spec.kind == "fitzhugh-nagumo-cutoff":
        a, b, c = (float(spec.params[k]) for k in ("a", "b", "c"))
        out = np.empty_like(x)
        out[:, 0] = x[:, 0] - x[:, 0] ** 3 / 3.0 - x[:, 1]
        out[:, 1] = (x[:, 0] + a - b * x[:, 1]) / c
        return out
    if spec.kind == "constant":
        v = np.asarray(spec.params["value"], dtype=float)
        return np.broadcast_to(v, x.shape).copy()
    if spec.kind == "linear-test":
        A = np.asarray(spec.params["matrix"], dtype=float)
        return x @ A.T
    if spec.kind == "custom-table":
        return _table_interpolator(spec)(x)
    raise ConfigurationError(f"unhandled field kind {spec.kind!r}")


def _raw_jacobian(spec: VectorFieldSpec, x: np.ndarray) -> np.ndarray:
    """Jacobian of the raw field; x has shape (n, d), result (n, d, d)."""
    n, d = x.shape
    if spec.kind == "fitzhugh-nagumo-cutoff":
        b, c = float(spec.params["b"]), float(spec.params["c"])
        J = np.zeros((n, 2, 2))
        J[:, 0, 0] = 1.0 - x[:, 0] ** 2
        J[:, 0, 1] = -1.0
        J[:, 1, 0] = 1.0 / c
        J[:, 1, 1] = -b / c
        return J
    if spec.kind == "constant":
        return np.zeros((n, d, d))
    if spec.kind == "linear-test":
        A = np.asarray(spec.params["matrix"], dtype=float)
        return np.broadcast_to(A, (n, d, d)).copy()
    if spec.kind == "custom-table":
        # table fields carry no analytic derivative; central differences
        h = 1e-6
        J = np.empty((n, d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            J[:, :, j] = (_raw_field(spec, x + e) - _raw_field(spec, x - e)) / (2 * h)
        return J
    raise ConfigurationError(f"unhandled field kind {spec.kind!r}")


_TABLE_CACHE: dict = {}


def _table_interpolator(spec: VectorFieldSpec) -> Callable:
    key = id(spec)
    interp = _TABLE_CACHE.get(key)
    if interp is None:
        from scipy.interpolate import RegularGridInterpolator

        axes = [np.asarray(ax, dtype=float) for ax in spec.params["axes"]]
        values = np.asarray(spec.params["values"], dtype=float)
        rgi = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=0.0)

        def interp(x):
            return rgi(x)

        _TABLE_CACHE[key] = interp
    return interp


@dataclass(frozen=True)
class DiffusionModel:
    """Validated container for the coupled-diffusion model.

    Immutable after construction; safe to share across threads.
    """

    d: int
    delta: float
    K: DiagonalMatrix
    sigma: DiagonalMatrix
    field: VectorFieldSpec
    bounds: dict = dc_field(default=None, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("dimension must be >= 1", key_path="model.dimension")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ConfigurationError("delta must be finite and >= 0", key_path="model.delta")
        if self.K.dim != self.d or self.sigma.dim != self.d:
            raise ConfigurationError(
                f"K and sigma must have dimension d={self.d}",
                key_path="model.k",
            )
        hint = self.field.dimension_hint()
        if hint is not None and hint != self.d:
            raise ConfigurationError(
                f"field kind {self.field.kind!r} has dimension {hint}, model has d={self.d}",
                key_path="model.dimension",
            )
        if self.bounds is None:
            object.__setattr__(self, "bounds", _estimate_bounds(self))

    # -- derived quantities -------------------------------------------------

    @property
    def k(self) -> np.ndarray:
        return self.K.as_array()

    @property
    def sig(self) -> np.ndarray:
        return self.sigma.as_array()

    @property
    def sig2(self) -> np.ndarray:
        return self.sig**2

    @property
    def gamma_ratio(self) -> np.ndarray:
        """Per-coordinate bifurcation parameter sigma_i^2 / k_i."""
        return self.sig2 / self.k

    @property
    def stationary_variance(self) -> np.ndarray:
        """Per-coordinate variance sigma_i^2/k_i of the pure relaxation dynamics."""
        return self.sig2 / self.k

    def field_bound(self) -> float:
        return self.bounds["field"]

    def fingerprint(self) -> str:
        payload = {
            "d": self.d,
            "delta": self.delta,
            "k": list(self.K.entries),
            "sigma": list(self.sigma.entries),
            "field": {
                "kind": self.field.kind,
                "params": {k: _jsonable(v) for k, v in sorted(self.field.params.items())},
                "cutoff_radius": self.field.cutoff_radius,
            },
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "dimension": self.d,
            "delta": self.delta,
            "k": list(self.K.entries),
            "sigma": list(self.sigma.entries),
            "field": {
                "kind": self.field.kind,
                "params": {k: _jsonable(v) for k, v in self.field.params.items()},
                "cutoff_radius": self.field.cutoff_radius,
            },
        }

    @staticmethod
    def from_dict(cfg: dict) -> "DiffusionModel":
        try:
            fld = cfg["field"]
            spec = VectorFieldSpec(
                kind=fld["kind"],
                params=fld.get("params", {}),
                cutoff_radius=fld.get("cutoff_radius", 10.0),
            )
            return DiffusionModel(
                d=int(cfg["dimension"]),
                delta=float(cfg["delta"]),
                K=DiagonalMatrix(tuple(cfg["k"])),
                sigma=DiagonalMatrix(tuple(cfg["sigma"])),
                field=spec,
            )
        except KeyError as exc:
            raise ConfigurationError(f"missing model key {exc}", key_path=f"model.{exc.args[0]}") from exc


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _as_points(x, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != d:
        raise DomainError(f"point has dimension {pts.shape[1]}, model has d={d}")
    if not np.all(np.isfinite(pts)):
        raise DomainError("non-finite input point")
    return pts, single


def eval_field(model: DiffusionModel, x) -> np.ndarray:
    """Evaluate the (cutoff) drift field at one point or a batch of points."""
    pts, single = _as_points(x, model.d)
    out = _raw_field(model.field, pts)
    R = model.field.cutoff_radius
    if R is not None:
        r = np.linalg.norm(pts, axis=1) / R
        out = out * cutoff_profile(r)[:, None]
    return out[0] if single else out


def eval_jacobian(model: DiffusionModel, x) -> np.ndarray:
    """Analytic Jacobian of the cutoff field (product rule on field * profile)."""
    pts, single = _as_points(x, model.d)
    J = _raw_jacobian(model.field, pts)
    R = model.field.cutoff_radius
    if R is not None:
        r = np.linalg.norm(pts, axis=1)
        t = r / R
        psi = cutoff_profile(t)
        dpsi = cutoff_profile_derivative(t)
        F = _raw_field(model.field, pts)
        J = J * psi[:, None, None]
        nz = r > 0
        if np.any(nz):
            grad = np.zeros_like(pts)
            grad[nz] = dpsi[nz, None] * pts[nz] / (R * r[nz, None])
            J = J + F[:, :, None] * grad[:, None, :]
    return J[0] if single else J


def _estimate_bounds(model: DiffusionModel, n_field: int = 4096, n_jac: int = 512) -> dict:
    """Sampled sup-norms of the field and its first two derivative tensors.

    Sampling covers the ball of radius 2R (or a fixed box when no cutoff);
    the cutoff guarantees zero outside, so the sampled maximum padded by 10%
    is a certified bound for cutoff kinds and a box-bound otherwise.
    """
    if model.field.kind == "constant":
        v = float(np.linalg.norm(np.asarray(model.field.params["value"], dtype=float)))
        return {"field": v, "jacobian": 0.0, "hessian": 0.0, "certified": True}
    R = model.field.cutoff_radius
    half = 2.0 * R if R is not None else 10.0
    sampler = qmc.Sobol(d=model.d, scramble=False, seed=0)
    pts = (sampler.random(n_field) - 0.5) * 2.0 * half
    fb = float(np.max(np.linalg.norm(eval_field(model, pts), axis=1)))
    sub = pts[: n_jac]
    J = eval_jacobian(model, sub)
    jb = float(np.max(np.linalg.norm(J.reshape(len(sub), -1), axis=1)))
    # second derivative tensor by differencing the Jacobian
    h = 1e-4
    hb = 0.0
    probe = sub[:128]
    for j in range(model.d):
        e = np.zeros(model.d)
        e[j] = h
        dJ = (eval_jacobian(model, probe + e) - eval_jacobian(model, probe - e)) / (2 * h)
        hb = max(hb, float(np.max(np.abs(dJ))))
    return {
        "field": _BOUND_PADDING * fb,
        "jacobian": _BOUND_PADDING * jb,
        "hessian": _BOUND_PADDING * hb,
        "certified": R is not None,
    }


def default_model(delta: float = 0.05) -> DiffusionModel:
    """The workhorse model: cutoff FitzHugh-Nagumo, sigma_1^2/k_1 = 0.2."""
    return DiffusionModel(
        d=2,
        delta=delta,
        K=DiagonalMatrix((1.0, 1.0)),
        sigma=DiagonalMatrix((np.sqrt(0.2), np.sqrt(0.2))),
        field=VectorFieldSpec(
            kind="fitzhugh-nagumo-cutoff",
            params={"a": 1.0 / 3.0, "b": 1.0, "c": 10.0},
            cutoff_radius=10.0,
        ),
    )
