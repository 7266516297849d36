"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. The active
implementation is chosen once at import time; set ``SPIKERPE_NO_NUMBA=1``
to force the numpy path (useful for debugging and for the benchmark).
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("SPIKERPE_NO_NUMBA", "").lower() not in (
    "1",
    "true",
    "yes",
)


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def xnor_counts_numpy(q, k):
    """Agreeing-bit counts for batched binary rows.

    q: [M, Lq, D], k: [M, Lk, D] with entries in {0, 1} -> int64 [M, Lq, Lk].
    Uses xnor(q, k) = 1 - q - k + 2 q k summed over channels.
    """
    qf = q.astype(np.float64)
    kf = k.astype(np.float64)
    d = q.shape[-1]
    s = d - qf.sum(-1)[:, :, None] - kf.sum(-1)[:, None, :] + 2.0 * (qf @ kf.transpose(0, 2, 1))
    return np.rint(s).astype(np.int64)


def dot_counts_numpy(q, k):
    s = q.astype(np.float64) @ k.astype(np.float64).transpose(0, 2, 1)
    return np.rint(s).astype(np.int64)


def hamming_table_numpy(codes):
    """Pairwise popcount(codes[i] ^ codes[j]) for a 1-D array of ints."""
    x = np.bitwise_xor.outer(codes, codes).astype(np.uint64)
    return np.bitwise_count(x).astype(np.int64) if hasattr(np, "bitwise_count") else _popcount_np(x)


def _popcount_np(x):
    out = np.zeros(x.shape, dtype=np.int64)
    x = x.copy()
    while np.any(x):
        out += (x & np.uint64(1)).astype(np.int64)
        x >>= np.uint64(1)
    return out


def lif_forward_numpy(current, tau, u_thr, u_reset):
    """Unrolled LIF over the leading time axis of ``current`` [T, N].

    Returns (spikes, h) where h is the pre-reset potential at each step.
    """
    n_t = current.shape[0]
    spikes = np.empty_like(current)
    h = np.empty_like(current)
    u = np.full(current.shape[1:], u_reset, dtype=current.dtype)
    for t in range(n_t):
        ht = u + (current[t] - (u - u_reset)) / tau
        st = (ht >= u_thr).astype(current.dtype)
        u = ht * (1.0 - st) + u_reset * st
        h[t] = ht
        spikes[t] = st
    return spikes, h


def lif_backward_numpy(grad_spikes, h, spikes, tau, u_thr, u_reset, alpha):
    """BPTT through the LIF recurrence with the arctangent surrogate."""
    n_t = grad_spikes.shape[0]
    grad_in = np.empty_like(grad_spikes)
    g_u = np.zeros(grad_spikes.shape[1:], dtype=grad_spikes.dtype)
    c = np.pi * alpha / 2.0
    for t in range(n_t - 1, -1, -1):
        x = h[t] - u_thr
        sg = alpha / (2.0 * (1.0 + (c * x) ** 2))
        g_h = grad_spikes[t] * sg + g_u * ((1.0 - spikes[t]) + (u_reset - h[t]) * sg)
        grad_in[t] = g_h / tau
        g_u = g_h * (1.0 - 1.0 / tau)
    return grad_in


def bn_forward_numpy(x, gamma, beta, eps):
    """Training-mode batch norm over axis 0 of x [N, C].

    Returns (out, xhat, mean, var, inv_std); var is the biased estimate.
    """
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mu) * inv_std
    return xhat * gamma + beta, xhat, mu, var, inv_std


def bn_backward_numpy(g, xhat, gamma, inv_std, training):
    """Returns (grad_x, grad_gamma, grad_beta) for x [N, C]."""
    dgamma = (g * xhat).sum(axis=0)
    dbeta = g.sum(axis=0)
    gx = g * gamma
    if training:
        n = g.shape[0]
        gx = inv_std * (gx - dbeta * gamma / n - xhat * (dgamma * gamma) / n)
    else:
        gx = gx * inv_std
    return gx, dgamma, dbeta


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def xnor_counts_numba(q, k):
        m, lq, d = q.shape
        lk = k.shape[1]
        out = np.empty((m, lq, lk), dtype=np.int64)
        for b in range(m):
            for i in range(lq):
                for j in range(lk):
                    acc = 0
                    for c in range(d):
                        acc += q[b, i, c] ^ k[b, j, c]
                    out[b, i, j] = d - acc
        return out

    @njit(cache=True)
    def dot_counts_numba(q, k):
        m, lq, d = q.shape
        lk = k.shape[1]
        out = np.empty((m, lq, lk), dtype=np.int64)
        for b in range(m):
            for i in range(lq):
                for j in range(lk):
                    acc = 0
                    for c in range(d):
                        acc += q[b, i, c] & k[b, j, c]
                    out[b, i, j] = acc
        return out

    @njit(cache=True)
    def hamming_table_numba(codes):
        n = codes.shape[0]
        out = np.empty((n, n), dtype=np.int64)
        for i in range(n):
            for j in range(n):
                x = codes[i] ^ codes[j]
                cnt = 0
                while x:
                    x &= x - 1
                    cnt += 1
                out[i, j] = cnt
        return out

    @njit(cache=True)
    def lif_forward_numba(current, tau, u_thr, u_reset):
        n_t, n = current.shape
        spikes = np.empty_like(current)
        h = np.empty_like(current)
        u = np.full(n, u_reset, dtype=current.dtype)
        inv_tau = current.dtype.type(1.0) / tau
        for t in range(n_t):
            for i in range(n):
                ht = u[i] + (current[t, i] - (u[i] - u_reset)) * inv_tau
                h[t, i] = ht
                if ht >= u_thr:
                    spikes[t, i] = 1.0
                    u[i] = u_reset
                else:
                    spikes[t, i] = 0.0
                    u[i] = ht
        return spikes, h

    @njit(cache=True)
    def lif_backward_numba(grad_spikes, h, spikes, tau, u_thr, u_reset, alpha):
        n_t, n = grad_spikes.shape
        grad_in = np.empty_like(grad_spikes)
        one = grad_spikes.dtype.type(1.0)
        c = grad_spikes.dtype.type(np.pi / 2.0) * alpha
        half_alpha = alpha / grad_spikes.dtype.type(2.0)
        inv_tau = one / tau
        decay = one - inv_tau
        g_u = np.zeros(n, dtype=grad_spikes.dtype)
        for t in range(n_t - 1, -1, -1):
            for i in range(n):
                x = h[t, i] - u_thr
                sg = half_alpha / (one + (c * x) * (c * x))
                g_h = grad_spikes[t, i] * sg + g_u[i] * ((one - spikes[t, i]) + (u_reset - h[t, i]) * sg)
                grad_in[t, i] = g_h * inv_tau
                g_u[i] = g_h * decay
        return grad_in

    @njit(cache=True)
    def bn_forward_numba(x, gamma, beta, eps):
        n, c = x.shape
        mu = np.zeros(c, dtype=x.dtype)
        var = np.zeros(c, dtype=x.dtype)
        for r in range(n):
            for j in range(c):
                mu[j] += x[r, j]
        mu /= n
        for r in range(n):
            for j in range(c):
                d = x[r, j] - mu[j]
                var[j] += d * d
        var /= n
        inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        xhat = np.empty_like(x)
        out = np.empty_like(x)
        for r in range(n):
            for j in range(c):
                v = (x[r, j] - mu[j]) * inv_std[j]
                xhat[r, j] = v
                out[r, j] = v * gamma[j] + beta[j]
        return out, xhat, mu, var, inv_std

    @njit(cache=True)
    def bn_backward_numba(g, xhat, gamma, inv_std, training):
        n, c = g.shape
        dgamma = np.zeros(c, dtype=g.dtype)
        dbeta = np.zeros(c, dtype=g.dtype)
        for r in range(n):
            for j in range(c):
                dgamma[j] += g[r, j] * xhat[r, j]
                dbeta[j] += g[r, j]
        gx = np.empty_like(g)
        for r in range(n):
            for j in range(c):
                if training:
                    gx[r, j] = inv_std[j] * gamma[j] * (g[r, j] - dbeta[j] / n - xhat[r, j] * dgamma[j] / n)
                else:
                    gx[r, j] = g[r, j] * gamma[j] * inv_std[j]
        return gx, dgamma, dbeta


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    _xnor = xnor_counts_numba
    _dot = dot_counts_numba
    _hamming = hamming_table_numba
    _lif_fwd = lif_forward_numba
    _lif_bwd = lif_backward_numba
    _bn_fwd = bn_forward_numba
    _bn_bwd = bn_backward_numba
else:
    _xnor = xnor_counts_numpy
    _dot = dot_counts_numpy
    _hamming = hamming_table_numpy
    _lif_fwd = lif_forward_numpy
    _lif_bwd = lif_backward_numpy
    _bn_fwd = bn_forward_numpy
    _bn_bwd = bn_backward_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"


def xnor_counts(q, k):
    return _xnor(np.ascontiguousarray(q, dtype=np.int8), np.ascontiguousarray(k, dtype=np.int8))


def dot_counts(q, k):
    return _dot(np.ascontiguousarray(q, dtype=np.int8), np.ascontiguousarray(k, dtype=np.int8))


def hamming_table(codes):
    return _hamming(np.ascontiguousarray(codes, dtype=np.int64))


def _float(x):
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x)


def lif_forward(current, tau, u_thr, u_reset):
    current = _float(current)
    f = current.dtype.type
    return _lif_fwd(current, f(tau), f(u_thr), f(u_reset))


def lif_backward(grad_spikes, h, spikes, tau, u_thr, u_reset, alpha):
    dt = h.dtype
    return _lif_bwd(
        np.ascontiguousarray(grad_spikes, dtype=dt),
        np.ascontiguousarray(h, dtype=dt),
        np.ascontiguousarray(spikes, dtype=dt),
        dt.type(tau),
        dt.type(u_thr),
        dt.type(u_reset),
        dt.type(alpha),
    )


def bn_forward(x, gamma, beta, eps):
    x = _float(x)
    return _bn_fwd(x, gamma.astype(x.dtype, copy=False), beta.astype(x.dtype, copy=False), float(eps))


def bn_backward(g, xhat, gamma, inv_std, training):
    dt = xhat.dtype
    return _bn_bwd(
        np.ascontiguousarray(g, dtype=dt), xhat, gamma.astype(dt, copy=False), inv_std.astype(dt, copy=False), bool(training)
    )
