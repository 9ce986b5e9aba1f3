"""Simulation of the N-particle system in recentered coordinates.

The state is carried as (Y, m): per-particle deviations from the empirical
mean, plus the mean itself.  One Euler-Maruyama step applies the recentered
drift/noise and then folds the (tiny) recentering residual back into m, so
that mean_i Y_i stays at machine zero and X_i = Y_i + m is preserved exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from ._kernels import (
    FIELD_CONSTANT,
    FIELD_FHN,
    FIELD_LINEAR,
    coupling_chunk,
    em_chunk,
    em_record_m,
)
from .errors import ConfigurationError, IntegrationError
from .model import DiffusionModel, eval_field

__all__ = [
    "ParticleEnsemble",
    "RunSummary",
    "CoupledPair",
    "step",
    "run",
    "run_replicas",
    "couple_to_mckean_vlasov",
    "kernel_field_code",
]


def kernel_field_code(model: DiffusionModel) -> tuple[int, np.ndarray]:
    """Map a field spec onto the (code, packed parameters) the kernels expect."""
    spec = model.field
    R = -1.0 if spec.cutoff_radius is None else float(spec.cutoff_radius)
    if spec.kind == "constant":
        v = np.asarray(spec.params["value"], dtype=float)
        return FIELD_CONSTANT, np.append(v, R)
    if spec.kind == "linear-test":
        A = np.asarray(spec.params["matrix"], dtype=float)
        return FIELD_LINEAR, np.append(A.ravel(), R)
    if spec.kind == "fitzhugh-nagumo-cutoff":
        p = spec.params
        return FIELD_FHN, np.array([p["a"], p["b"], p["c"], R], dtype=float)
    raise ConfigurationError(
        f"field kind {spec.kind!r} has no compiled kernel; use the table-free kinds for simulation"
    )


@dataclass
class ParticleEnsemble:
    """N recentered particles plus the empirical mean.

    ``seed``/``replica`` key the counter-based noise streams; ``istep`` is
    the global step counter that indexes them.
    """

    N: int
    d: int
    Y: np.ndarray
    m: np.ndarray
    t: float
    dt: float
    seed: int
    replica: int = 0
    istep: int = 0

    @classmethod
    def initialize(cls, model: DiffusionModel, N: int, dt: float, seed: int,
                   replica: int = 0, m0=None) -> "ParticleEnsemble":
        """Draw Y_i i.i.d. from N(0, sigma^2 K^-1) and recenter exactly.

        After recentering the population covariance is (1 - 1/N) sigma^2 K^-1,
        the stationary dispersion of the recentered dynamics at delta = 0.
        """
        if N < 1:
            raise ConfigurationError("need at least one particle", key_path="experiment.n")
        if dt <= 0:
            raise ConfigurationError("dt must be positive", key_path="numerics.dt")
        d = model.d
        sd = np.sqrt(model.stationary_variance)
        z = rng.initial_gaussian(seed, replica, N, d)
        Y = z * sd
        Y -= Y.mean(axis=0)
        m = np.zeros(d) if m0 is None else np.asarray(m0, dtype=float).copy()
        return cls(N=N, d=d, Y=Y, m=m, t=0.0, dt=float(dt), seed=int(seed),
                   replica=int(replica), istep=0)

    @property
    def positions(self) -> np.ndarray:
        """Original coordinates X_i = Y_i + m."""
        return self.Y + self.m

    def recentering_residual(self) -> float:
        return float(np.max(np.abs(self.Y.mean(axis=0))))

    def copy(self) -> "ParticleEnsemble":
        return replace(self, Y=self.Y.copy(), m=self.m.copy())


def _advance(ens: ParticleEnsemble, model: DiffusionModel, nsteps: int) -> None:
    code, fp = kernel_field_code(model)
    k0, k1 = rng.stream_keys(ens.seed, ens.replica, rng.STREAM_MAIN)
    bad = em_chunk(ens.Y, ens.m, code, fp, model.k, model.sig, model.delta,
                   ens.dt, np.uint64(k0), np.uint64(k1), ens.istep, nsteps)
    if bad >= 0:
        raise IntegrationError("particle state became non-finite", step_index=int(bad))
    ens.istep += nsteps
    ens.t = ens.istep * ens.dt


def step(ensemble: ParticleEnsemble, model: DiffusionModel) -> ParticleEnsemble:
    """One Euler-Maruyama step of the recentered system (returns a new ensemble)."""
    out = ensemble.copy()
    _advance(out, model, 1)
    return out


@dataclass
class RunSummary:
    times: np.ndarray
    m_trace: np.ndarray
    observations: dict
    final: ParticleEnsemble

    def to_csv(self, path) -> None:
        d = self.m_trace.shape[1]
        cols = ["t"] + [f"m_{c + 1}" for c in range(d)]
        scalar_keys = [k for k, v in self.observations.items()
                       if np.ndim(v) == 1 and len(v) == len(self.times)]
        cols += scalar_keys
        data = np.column_stack([self.times, self.m_trace]
                               + [np.asarray(self.observations[k]) for k in scalar_keys])
        header = ",".join(cols)
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def _steps_for(horizon: float, dt: float) -> int:
    nsteps = int(round(horizon / dt))
    if abs(nsteps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ConfigurationError(
            f"horizon {horizon} is not a multiple of dt {dt}", key_path="experiment.horizon"
        )
    return nsteps


def run(ensemble: ParticleEnsemble, model: DiffusionModel, horizon: float,
        observers=(), observer_stride: int = 1) -> RunSummary:
    """Advance by ``horizon`` invoking observers every ``observer_stride`` steps.

    Observers are callables ``f(ensemble) -> scalar or array``; their outputs
    are stacked in the summary under the observer's ``__name__``.  The m-trace
    at observation times is always recorded.  Deterministic for a fixed seed.
    """
    nsteps = _steps_for(horizon, ensemble.dt)
    ens = ensemble.copy()
    if observer_stride < 1:
        raise ConfigurationError("observer stride must be >= 1")
    times = [ens.t]
    mtr = [ens.m.copy()]
    obs_out: dict = {getattr(f, "__name__", f"obs{i}"): [f(ens)] for i, f in enumerate(observers)}
    done = 0
    while done < nsteps:
        chunk = min(observer_stride, nsteps - done)
        _advance(ens, model, chunk)
        done += chunk
        times.append(ens.t)
        mtr.append(ens.m.copy())
        for i, f in enumerate(observers):
            obs_out[getattr(f, "__name__", f"obs{i}")].append(f(ens))
    observations = {k: np.asarray(v) for k, v in obs_out.items()}
    return RunSummary(times=np.asarray(times), m_trace=np.asarray(mtr),
                      observations=observations, final=ens)


def run_replicas(model: DiffusionModel, N: int, replicas, horizon: float, dt: float,
                 seed: int, m0=None, record_stride: int = 100,
                 threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Mean-trace sweep over independent replicas.

    Returns (times, m_traces) with m_traces of shape (R, K+1, d).  Replicas
    are keyed by their replica id, so results do not depend on ``threads``.
    ``replicas`` is an int (ids 0..R-1) or an explicit iterable of ids.
    """
    nsteps = _steps_for(horizon, dt)
    if nsteps % record_stride != 0:
        raise ConfigurationError("horizon/dt must be a multiple of the record stride")
    rep_ids = list(range(replicas)) if isinstance(replicas, int) else list(replicas)
    code, fp = kernel_field_code(model)
    nrec = nsteps // record_stride
    out = np.empty((len(rep_ids), nrec + 1, model.d))

    def one(idx_rep):
        idx, rep = idx_rep
        ens = ParticleEnsemble.initialize(model, N, dt, seed, replica=rep, m0=m0)
        k0, k1 = rng.stream_keys(seed, rep, rng.STREAM_MAIN)
        bad = em_record_m(ens.Y, ens.m, code, fp, model.k, model.sig, model.delta,
                          dt, np.uint64(k0), np.uint64(k1), nsteps, record_stride,
                          out[idx])
        if bad >= 0:
            raise IntegrationError(f"replica {rep} became non-finite", step_index=int(bad))

    items = list(enumerate(rep_ids))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(one, items))
    else:
        for it in items:
            one(it)
    times = np.arange(nrec + 1) * (record_stride * dt)
    return times, out


@dataclass
class CoupledPair:
    """Coupled ensemble / McKean-Vlasov reference sharing noise streams."""

    N: int
    d: int
    X: np.ndarray
    Xbar: np.ndarray
    proxy: np.ndarray
    t: float
    dt: float
    seed: int
    replica: int = 0
    istep: int = 0

    @classmethod
    def initialize(cls, model: DiffusionModel, N: int, dt: float, seed: int,
                   replica: int = 0, m0=None, proxy_factor: int = 10) -> "CoupledPair":
        d = model.d
        m0 = np.zeros(d) if m0 is None else np.asarray(m0, dtype=float)
        sd = np.sqrt(model.stationary_variance)
        z = rng.initial_gaussian(seed, replica, N, d)
        X = m0 + z * sd
        M = proxy_factor * N
        zp = rng.initial_gaussian(seed, replica, M, d, stream=rng.STREAM_PROXY_INIT)
        proxy = m0 + zp * sd
        return cls(N=N, d=d, X=X, Xbar=X.copy(), proxy=proxy, t=0.0,
                   dt=float(dt), seed=int(seed), replica=int(replica))


def couple_to_mckean_vlasov(pair: CoupledPair, model: DiffusionModel,
                            horizon: float, record_stride: int = 10):
    """Run the coupling and return (times, running sup of mean_i |X_i - Xbar_i|).

    Both sides consume identical per-particle increments; the reference
    copies interact with the self-consistent proxy mean instead of the
    ensemble's empirical mean.
    """
    nsteps = _steps_for(horizon, pair.dt)
    code, fp = kernel_field_code(model)
    k0, k1 = rng.stream_keys(pair.seed, pair.replica, rng.STREAM_MAIN)
    p0, p1 = rng.stream_keys(pair.seed, pair.replica, rng.STREAM_PROXY)
    err = np.empty(nsteps)
    coupling_chunk(pair.X, pair.Xbar, pair.proxy, code, fp, model.k, model.sig,
                   model.delta, pair.dt, np.uint64(k0), np.uint64(k1),
                   np.uint64(p0), np.uint64(p1), pair.istep, nsteps, err)
    if not np.all(np.isfinite(err)):
        raise IntegrationError("coupling error became non-finite",
                               step_index=int(np.argmax(~np.isfinite(err))))
    pair.istep += nsteps
    pair.t = pair.istep * pair.dt
    sup_err = np.maximum.accumulate(err)
    idx = np.arange(record_stride - 1, nsteps, record_stride)
    times = (idx + 1) * pair.dt
    return times, sup_err[idx]


def direct_step_x(model: DiffusionModel, X: np.ndarray, dt: float,
                  xi: np.ndarray) -> np.ndarray:
    """Reference Euler-Maruyama step of the original (non-recentered) system.

    Used to verify that the recentered update reconstructs X_i = Y_i + m.
    """
    mean = X.mean(axis=0)
    drift = model.delta * eval_field(model, X) - (X - mean) * model.k
    return X + dt * drift + np.sqrt(2 * dt) * model.sig * xi
