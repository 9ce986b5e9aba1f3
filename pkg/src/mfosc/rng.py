"""Counter-based noise streams for reproducible parallel simulation.

Every Gaussian increment is a pure function of (key, stream, step, particle,
component-block), computed with Philox-4x32-10 and mapped to a normal via the
AS241 inverse CDF.  Trajectories are therefore bitwise reproducible for a
fixed seed regardless of thread count or execution order, and any portion of
a stream can be replayed independently (used by the noise-structure tests).

Stream ids partition the counter space: MAIN drives the coupled particles
(and is replayed verbatim by the McKean-Vlasov reference copies), PROXY
drives the self-consistent mean-law ensemble, INIT/PROXY_INIT draw initial
conditions, AUX is reserved for everything else.
"""

from __future__ import annotations

import numpy as np
import numba as nb
from numba import float64, uint64

__all__ = [
    "STREAM_MAIN",
    "STREAM_PROXY",
    "STREAM_INIT",
    "STREAM_PROXY_INIT",
    "STREAM_AUX",
    "stream_keys",
    "normal_pair",
    "fill_normals",
    "normal_block",
    "initial_gaussian",
]

STREAM_MAIN = 0
STREAM_PROXY = 2
STREAM_INIT = 3
STREAM_PROXY_INIT = 4
STREAM_AUX = 7

_M0 = uint64(0xD2511F53)
_M1 = uint64(0xCD9E8D57)
_W0 = uint64(0x9E3779B9)
_W1 = uint64(0xBB67AE85)
_MASK = uint64(0xFFFFFFFF)
_INV53 = 1.0 / 9007199254740992.0

# Rational minimax coefficients for the inverse normal CDF (AS241, PPND16).
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


@nb.njit(float64(float64), inline="always", cache=True, fastmath=True)
def _ndtri(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = ((((((_A[7] * r + _A[6]) * r + _A[5]) * r + _A[4]) * r + _A[3]) * r + _A[2]) * r + _A[1]) * r + _A[0]
        den = ((((((_B[7] * r + _B[6]) * r + _B[5]) * r + _B[4]) * r + _B[3]) * r + _B[2]) * r + _B[1]) * r + _B[0]
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = ((((((_C[7] * r + _C[6]) * r + _C[5]) * r + _C[4]) * r + _C[3]) * r + _C[2]) * r + _C[1]) * r + _C[0]
        den = ((((((_D[7] * r + _D[6]) * r + _D[5]) * r + _D[4]) * r + _D[3]) * r + _D[2]) * r + _D[1]) * r + _D[0]
        val = num / den
    else:
        r = r - 5.0
        num = ((((((_E[7] * r + _E[6]) * r + _E[5]) * r + _E[4]) * r + _E[3]) * r + _E[2]) * r + _E[1]) * r + _E[0]
        den = ((((((_F[7] * r + _F[6]) * r + _F[5]) * r + _F[4]) * r + _F[3]) * r + _F[2]) * r + _F[1]) * r + _F[0]
        val = num / den
    return -val if q < 0.0 else val


@nb.njit(nb.types.UniTuple(float64, 2)(uint64, uint64, uint64, uint64, uint64),
         inline="always", cache=True)
def normal_pair(step, particle, block, key0, key1):
    """Two standard normals for (step, particle, component block).

    Counter = (step_lo, step_hi, particle, block), key = (key0, key1); one
    Philox-4x32-10 call yields 128 bits consumed as two 53-bit uniforms.
    """
    c0 = step & _MASK
    c1 = step >> uint64(32)
    c2 = particle & _MASK
    c3 = block & _MASK
    k0 = key0 & _MASK
    k1 = key1 & _MASK
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = ((p1 >> uint64(32)) ^ c1 ^ k0) & _MASK
        n1 = p1 & _MASK
        n2 = ((p0 >> uint64(32)) ^ c3 ^ k1) & _MASK
        n3 = p0 & _MASK
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    a = (c0 << uint64(32)) | c1
    b = (c2 << uint64(32)) | c3
    u0 = (float64(a >> uint64(11)) + 0.5) * _INV53
    u1 = (float64(b >> uint64(11)) + 0.5) * _INV53
    return _ndtri(u0), _ndtri(u1)


def stream_keys(seed: int, replica: int, stream: int) -> tuple[int, int]:
    """Derive the 2x32-bit Philox key for one (seed, replica, stream) triple."""
    ss = np.random.SeedSequence([int(seed), int(replica), int(stream)])
    k = ss.generate_state(2, dtype=np.uint32)
    return int(k[0]), int(k[1])


@nb.njit(cache=True)
def fill_normals(out, step0, key0, key1):
    """Fill out[s, i, c] with the increments of steps step0+s; out is (S, N, d)."""
    S, N, d = out.shape
    nblocks = (d + 1) // 2
    for s in range(S):
        step = uint64(step0 + s)
        for i in range(N):
            for blk in range(nblocks):
                z0, z1 = normal_pair(step, uint64(i), uint64(blk), uint64(key0), uint64(key1))
                c = 2 * blk
                out[s, i, c] = z0
                if c + 1 < d:
                    out[s, i, c + 1] = z1
    return out


def normal_block(seed: int, replica: int, stream: int, step0: int, nsteps: int,
                 nparticles: int, d: int) -> np.ndarray:
    """Replay a block of increments as a (nsteps, nparticles, d) array."""
    k0, k1 = stream_keys(seed, replica, stream)
    out = np.empty((nsteps, nparticles, d))
    fill_normals(out, step0, k0, k1)
    return out


def initial_gaussian(seed: int, replica: int, n: int, d: int,
                     stream: int = STREAM_INIT) -> np.ndarray:
    """Standard-normal draws for initial conditions, one row per particle.

    Row ``n-1`` backed by particle index n-1; callers wanting the auxiliary
    stream ask for one extra row.
    """
    return normal_block(seed, replica, stream, 0, 1, n, d)[0]
