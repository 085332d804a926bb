"""Compiled inner loops: counter-based uniforms, inverse normal CDF, PFR search.

Everything that produces a shared-randomness sample lives here so that the
encoder and decoder run literally the same machine code.  No fastmath: FMA
contraction or reassociation would break bit-exact replay.
"""

import math

import numpy as np
from numba import njit

_U = np.uint64
_C1 = _U(0xBF58476D1CE4E5B9)
_C2 = _U(0x94D049BB133111EB)
_GOLDEN = _U(0x9E3779B97F4A7C15)
_S30 = _U(30)
_S27 = _U(27)
_S31 = _U(31)
_S11 = _U(11)
_TWO_M53 = 1.0 / 9007199254740992.0

# Wichura (1988), algorithm AS 241 (PPND16), coefficients highest order last.
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


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _C1
    z = (z ^ (z >> _S27)) * _C2
    return z ^ (z >> _S31)


@njit(nogil=True, cache=True)
def stream_key(key, stream):
    """Per-stream subkey; depends on the first two key words only."""
    return _mix(_mix(stream ^ key[0]) + key[1])


@njit(cache=True)
def _word(skey, key, counter):
    return _mix(_mix(skey ^ (counter * _GOLDEN + key[2])) ^ key[3])


@njit(cache=True)
def _uniform(skey, key, counter):
    # top 53 bits, centred in their cell: the result lies strictly inside (0, 1)
    return ((_word(skey, key, counter) >> _S11) + 0.5) * _TWO_M53


@njit(cache=True)
def _horner(c, r):
    return ((((((c[7] * r + c[6]) * r + c[5]) * r + c[4]) * r + c[3]) * r + c[2]) * r + c[1]) * r + c[0]


@njit(nogil=True, cache=True)
def ndtri(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner(_A, r) / _horner(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _horner(_C, r) / _horner(_D, r)
    else:
        r -= 5.0
        val = _horner(_E, r) / _horner(_F, r)
    return -val if q < 0.0 else val


@njit(nogil=True, cache=True)
def ndtri_array(p, out):
    for i in range(p.shape[0]):
        out[i] = ndtri(p[i])


@njit(nogil=True, cache=True)
def uniforms(key, stream, start, count, out):
    skey = stream_key(key, stream)
    for i in range(count):
        out[i] = _uniform(skey, key, start + _U(i))


# The candidate expression `mean + std * ndtri(u)` is written out in each
# loop below (array-argument helpers cost a refcount round trip per call);
# keep the copies identical.


@njit(nogil=True, cache=True)
def gaussian_sample(key, stream, n, mean, std, out):
    """The n-th (1-based) candidate of N(mean, std^2) on `stream`."""
    skey = stream_key(key, stream)
    base = (n - _U(1)) * _U(mean.shape[0])
    for d in range(mean.shape[0]):
        out[d] = mean[d] + std[d] * ndtri(_uniform(skey, key, base + _U(d)))


@njit(nogil=True, cache=True)
def gaussian_batch(key, stream, n_first, count, mean, std, out):
    """Rows n_first .. n_first+count-1 of the candidate sequence."""
    skey = stream_key(key, stream)
    dim = _U(mean.shape[0])
    for i in range(count):
        base = (n_first - _U(1) + _U(i)) * dim
        for d in range(mean.shape[0]):
            out[i, d] = mean[d] + std[d] * ndtri(_uniform(skey, key, base + _U(d)))


@njit(nogil=True, cache=True)
def pfr_search(qm, qv, pm, pv, log_w_min, key, cand_stream, arr_stream, max_candidates, best_out):
    """Poisson functional representation search in log space.

    Returns (n_star, examined, log_s_star, finished).  `finished` is False
    only when `max_candidates` ran out before the stopping rule fired.
    """
    dim = qm.shape[0]
    pstd = np.sqrt(pv)
    const = 0.0
    for d in range(dim):
        const += 0.5 * (math.log(qv[d]) - math.log(pv[d]))
    ck = stream_key(key, cand_stream)
    ak = stream_key(key, arr_stream)
    z = np.empty(dim)
    t = 0.0
    log_t_low = -math.inf  # log of an earlier t; t only grows
    t_stop = math.inf      # the stopping rule, solved for t
    best = math.inf
    n_star = 0
    n = 0
    while n < max_candidates:
        n += 1
        base = _U(n - 1) * _U(dim)
        for d in range(dim):
            z[d] = pm[d] + pstd[d] * ndtri(_uniform(ck, key, base + _U(d)))
        t += -math.log(_uniform(ak, key, _U(n - 1)))
        lr = const
        for d in range(dim):
            a = z[d] - pm[d]
            b = z[d] - qm[d]
            lr += b * b / (2.0 * qv[d]) - a * a / (2.0 * pv[d])
        if lr + log_t_low <= best:
            log_t_low = math.log(t)
            score = log_t_low + lr
            if score <= best:
                best = score
                n_star = n
                t_stop = math.exp(best - log_w_min)
                for d in range(dim):
                    best_out[d] = z[d]
        if t >= t_stop:
            return n_star, n, best, True
    return n_star, n, best, False
