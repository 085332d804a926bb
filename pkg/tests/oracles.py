"""Independent reference implementations used only by the tests.

Each oracle takes a different route from the package code: numerical
integration instead of closed forms, dense-covariance Bayes instead of
the diagonal fast path, string-built bit patterns instead of the writer.
"""

import math

import numpy as np
from scipy import integrate, special, stats


def kl_1d_quad(mq, vq, mp, vp) -> float:
    """KL(q || p) in nats by quadrature."""
    q = stats.norm(mq, math.sqrt(vq))
    p = stats.norm(mp, math.sqrt(vp))
    lo, hi = mq - 40 * math.sqrt(vq), mq + 40 * math.sqrt(vq)
    val, _ = integrate.quad(lambda z: q.pdf(z) * (q.logpdf(z) - p.logpdf(z)), lo, hi, limit=400)
    return val


def ddpm_posterior_dense(x0, x_next, ab_t, alpha_next):
    """q(x_t | x_{t+1}, x0) by conditioning the joint Gaussian of (x_t, x_{t+1}) given x0."""
    # x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) e1; x_{t+1} = sqrt(alpha) x_t + sqrt(1-alpha) e2
    m_t = math.sqrt(ab_t) * x0
    m_n = math.sqrt(alpha_next) * m_t
    v_tt = 1 - ab_t
    v_tn = math.sqrt(alpha_next) * v_tt
    v_nn = alpha_next * v_tt + (1 - alpha_next)
    mean = m_t + v_tn / v_nn * (x_next - m_n)
    var = v_tt - v_tn * v_tn / v_nn
    return mean, var


def mixture_posterior_dense(means, weights, s2, log_tag_prior, x_t, ab, hint=None, hint_map=None, hint_var=0.0,
                            obs_idx=None):
    """E[x0 | x_t, y], Var[x0 | ...] for a mixture of N(mu_k, s2 I) by dense Gaussian algebra.

    hint_map is the (J x D) averaging matrix A with y = A x0 + noise(hint_var).
    obs_idx selects which cells x_t observes (default all); the returned
    moments cover those cells only.
    """
    D = means.shape[1]
    idx = np.arange(D) if obs_idx is None else np.asarray(obs_idx)
    sel = np.eye(D)[idx]
    obs_A = [math.sqrt(ab) * sel]
    obs_y = [x_t]
    obs_R = [(1 - ab) * np.eye(idx.size)]
    if hint is not None:
        obs_A.append(hint_map)
        obs_y.append(hint)
        obs_R.append(hint_var * np.eye(len(hint)) + 1e-300)
    A = np.vstack(obs_A)
    y = np.concatenate(obs_y)
    R = np.zeros((A.shape[0], A.shape[0]))
    o = 0
    for r in obs_R:
        n = r.shape[0]
        R[o:o + n, o:o + n] = r
        o += n
    P0 = s2 * np.eye(D)
    S = A @ P0 @ A.T + R
    G = P0 @ A.T @ np.linalg.inv(S)
    cov = P0 - G @ A @ P0
    logw, cmeans = [], []
    for k in range(means.shape[0]):
        mu = means[k]
        logw.append(np.log(weights[k]) + log_tag_prior[k]
                    + stats.multivariate_normal(A @ mu, S, allow_singular=True).logpdf(y))
        cmeans.append(mu + G @ (y - A @ mu))
    logw = np.array(logw)
    r = np.exp(logw - special.logsumexp(logw))
    cmeans = np.array(cmeans)
    mean = r @ cmeans
    var = np.diag(cov) + r @ (cmeans ** 2) - mean ** 2
    return mean[idx], var[idx], r


def bits_str(value: int, n: int) -> str:
    return format(value, f"0{n}b") if n else ""


def tag_bits_oracle(indices, N) -> str:
    nb = max(1, math.ceil(math.log2(N))) if N > 1 else 0
    return bits_str(len(indices), 8) + "".join(bits_str(i, nb) for i in indices)


def golomb_octave_oracle(n: int, hint: float) -> str:
    """Octave v = floor(log2 n) Golomb coded (unary quotient, truncated-binary rest), then v raw bits."""
    M = max(1, int(round(0.69 * (hint + 1))))
    v = n.bit_length() - 1
    q, r = divmod(v, M)
    out = "1" * q + "0"
    if M > 1:
        k = M.bit_length() - 1
        u = (1 << (k + 1)) - M
        out += bits_str(r, k) if r < u else bits_str(r + u, k + 1)
    return out + bits_str(n - (1 << v), v)


def merge_oracle(values, rects, masks, shape):
    out = np.zeros(shape)
    for i in range(shape[0]):
        for j in range(shape[1]):
            num = den = 0.0
            hits = []
            for v, (r, c, h, w), m in zip(values, rects, masks):
                if r <= i < r + h and c <= j < c + w:
                    num += m[i - r, j - c] * v[i - r, j - c]
                    den += m[i - r, j - c]
                    hits.append(v[i - r, j - c])
            out[i, j] = hits[0] if len(hits) == 1 else num / den
    return out
