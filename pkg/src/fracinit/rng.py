"""Counter-based random streams for reproducible parallel simulation.

Philox-4x64-10 (bit-compatible with numpy's Philox; validated against it in
the tests) hashed on a counter block

    c = (block_index, trial, layer | kind << 32, 0),   key = (seed, SALT)

so every (seed, trial, layer, draw-kind) owns an independent stream and
results cannot depend on how trials are chunked or scheduled.  Uniforms
consume exactly one 64-bit word each and normals one uniform each (inverse
CDF), so draw positions are pure counter arithmetic.

The numba engine is what the simulator uses; the numpy twin exists as a
reference for testing (bitwise equal on the uniform stream; the normal
stream agrees to inverse-CDF rounding since scipy's ndtri uses a different
rational approximation).
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

M0 = np.uint64(0xD2E7470EE14C6C93)
M1 = np.uint64(0xCA5A826395121157)
B0 = np.uint64(0x9E3779B97F4A7C15)
B1 = np.uint64(0xBB67AE8584CAA73B)
MASK32 = np.uint64(0xFFFFFFFF)
SALT = np.uint64(0x66726163696E6974)  # stream domain separator

KIND_WEIGHT = 0
KIND_MASK = 1
KIND_NOISE = 2
KIND_SLOPE = 3

INV53 = 1.0 / 9007199254740992.0  # 2^-53


@njit(uint64(uint64, uint64), inline="always", cache=True)
def _mulhi(a, b):
    aL = a & MASK32
    aH = a >> np.uint64(32)
    bL = b & MASK32
    bH = b >> np.uint64(32)
    t = aL * bL
    t = aH * bL + (t >> np.uint64(32))
    w1 = t & MASK32
    w2 = t >> np.uint64(32)
    t = aL * bH + w1
    return aH * bH + w2 + (t >> np.uint64(32))


@njit(cache=True, inline="always")
def philox4(c0, c1, c2, c3, k0, k1):
    """One 256-bit Philox-4x64-10 block."""
    for _ in range(10):
        hi0 = _mulhi(M0, c0)
        lo0 = M0 * c0
        hi1 = _mulhi(M1, c2)
        lo1 = M1 * c2
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = k0 + B0
        k1 = k1 + B1
    return c0, c1, c2, c3


@njit(uint64(uint64, uint64), inline="always", cache=True)
def _pack_layer_kind(layer, kind):
    return (kind << np.uint64(32)) | layer


@njit(inline="always", cache=True)
def _u01(x):
    # (0, 1): top 53 bits, offset half a ulp so the inverse CDF never sees 0 or 1
    return (np.float64(x >> np.uint64(11)) + 0.5) * INV53


@njit(cache=True, inline="always")
def norm_ppf(p):
    """Inverse standard-normal CDF (Wichura's AS 241, double precision)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r + 6.7265770927008700853e4) * r
                   + 4.5921953931549871457e4) * r + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r + 3.9307895800092710610e4) * r
                   + 2.1213794301586595867e4) * r + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r
                   + 1.27045825245236838258e0) * r + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r
                   + 1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r
                   + 2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r
                   + 7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@njit(cache=True)
def fill_uniforms(buf, n, seed, trial, layer, kind):
    """buf[:n] <- i.i.d. Uniform(0,1) from the (seed, trial, layer, kind) stream."""
    c1 = np.uint64(trial)
    c2 = _pack_layer_kind(np.uint64(layer), np.uint64(kind))
    b = np.uint64(0)
    i = 0
    while i < n:
        r0, r1, r2, r3 = philox4(b, c1, c2, np.uint64(0), np.uint64(seed), SALT)
        buf[i] = _u01(r0)
        if i + 1 < n:
            buf[i + 1] = _u01(r1)
        if i + 2 < n:
            buf[i + 2] = _u01(r2)
        if i + 3 < n:
            buf[i + 3] = _u01(r3)
        i += 4
        b += np.uint64(1)


@njit(cache=True)
def fill_normals(buf, n, seed, trial, layer, kind):
    """buf[:n] <- i.i.d. N(0,1); one uniform per normal, inverse-CDF transform."""
    c1 = np.uint64(trial)
    c2 = _pack_layer_kind(np.uint64(layer), np.uint64(kind))
    b = np.uint64(0)
    i = 0
    while i < n:
        r0, r1, r2, r3 = philox4(b, c1, c2, np.uint64(0), np.uint64(seed), SALT)
        buf[i] = norm_ppf(_u01(r0))
        if i + 1 < n:
            buf[i + 1] = norm_ppf(_u01(r1))
        if i + 2 < n:
            buf[i + 2] = norm_ppf(_u01(r2))
        if i + 3 < n:
            buf[i + 3] = norm_ppf(_u01(r3))
        i += 4
        b += np.uint64(1)


# --- numpy reference engine (bitwise-identical, used by tests) -------------

def _philox4_numpy(c0, c1, c2, c3, k0, k1):
    with np.errstate(over="ignore"):
        for _ in range(10):
            aL, aH = M0 & MASK32, M0 >> np.uint64(32)
            bL, bH = c0 & MASK32, c0 >> np.uint64(32)
            t = aL * bL
            t = aH * bL + (t >> np.uint64(32))
            t2 = aL * bH + (t & MASK32)
            hi0 = aH * bH + (t >> np.uint64(32)) + (t2 >> np.uint64(32))
            lo0 = M0 * c0
            aL, aH = M1 & MASK32, M1 >> np.uint64(32)
            bL, bH = c2 & MASK32, c2 >> np.uint64(32)
            t = aL * bL
            t = aH * bL + (t >> np.uint64(32))
            t2 = aL * bH + (t & MASK32)
            hi1 = aH * bH + (t >> np.uint64(32)) + (t2 >> np.uint64(32))
            lo1 = M1 * c2
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + B0
            k1 = k1 + B1
    return c0, c1, c2, c3


def uniforms_reference(n, seed, trial, layer, kind):
    """Vectorized numpy twin of fill_uniforms."""
    nblocks = (n + 3) // 4
    b = np.arange(nblocks, dtype=np.uint64)
    c1 = np.full(nblocks, trial, dtype=np.uint64)
    c2 = np.full(nblocks, (np.uint64(kind) << np.uint64(32)) | np.uint64(layer), dtype=np.uint64)
    c3 = np.zeros(nblocks, dtype=np.uint64)
    k0 = np.full(nblocks, seed, dtype=np.uint64)
    k1 = np.full(nblocks, SALT, dtype=np.uint64)
    r = _philox4_numpy(b, c1, c2, c3, k0, k1)
    words = np.stack(r, axis=1).reshape(-1)[:n]
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * INV53


def normals_reference(n, seed, trial, layer, kind):
    """Vectorized numpy twin of fill_normals (scipy inverse CDF)."""
    from scipy.special import ndtri

    return ndtri(uniforms_reference(n, seed, trial, layer, kind))
