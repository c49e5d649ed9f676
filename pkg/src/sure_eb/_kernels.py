"""Per-row kernels for covariate-dependent particle priors.

Row ``i`` of ``head`` holds ``[pi_tilde (K) | u_tilde (K-1) | s]``. The
work is split so that every exponential runs through numpy's vectorized
``exp``; the numba passes in between do the decode, the posterior moments
and the backward pass without calling any transcendental function.
"""

import numpy as np
from numba import njit

_FAST = {"nsz", "arcp", "contract", "reassoc"}


@njit(cache=True, fastmath=_FAST)
def _shift_logits(head, K, out):
    """Copy the weight and spacing logits into ``out`` with each block's row max removed."""
    n = head.shape[0]
    for i in range(n):
        mx = head[i, 0]
        for j in range(1, K):
            mx = max(mx, head[i, j])
        for j in range(K):
            out[i, j] = head[i, j] - mx
        mx = head[i, K]
        for k in range(K + 1, 2 * K - 1):
            mx = max(mx, head[i, k])
        for k in range(K, 2 * K - 1):
            out[i, k] = head[i, k] - mx
        out[i, 2 * K - 1] = head[i, 2 * K - 1]


@njit(cache=True, fastmath=_FAST)
def _decode_and_logits(head, e_pi, e_q, scale, zc, sigma2, K, pi, q, c, atoms, logits):
    """Normalize weights/spacings, place atoms, and write max-shifted posterior logits."""
    n = head.shape[0]
    for i in range(n):
        tot = 0.0
        for j in range(K):
            tot += e_pi[i, j]
        rt = 1.0 / tot
        for j in range(K):
            pi[i, j] = e_pi[i, j] * rt
        tot = 0.0
        for k in range(K - 1):
            tot += e_q[i, k]
        rt = 1.0 / tot
        c[i, 0] = 0.0
        for k in range(K - 1):
            q[i, k] = e_q[i, k] * rt
            c[i, k + 1] = c[i, k] + q[i, k]
        z = zc[i]
        h = 0.5 / sigma2[i]
        amax = -np.inf
        for j in range(K):
            a = (c[i, j] - 0.5) * scale[i]
            atoms[i, j] = a
            d = a - z
            # the log-softmax normalizer is constant along the row and cancels
            v = head[i, j] - h * d * d
            logits[i, j] = v
            if v > amax:
                amax = v
        for j in range(K):
            logits[i, j] -= amax


@njit(cache=True, fastmath=_FAST)
def _moments_and_backward(w, pi, q, c, atoms, scale, zc, sigma2, K, losses, g_head):
    n = w.shape[0]
    g_atoms = np.empty(K)
    g_q = np.empty(K - 1)
    for i in range(n):
        tot = 0.0
        for j in range(K):
            tot += w[i, j]
        rt = 1.0 / tot
        M = 0.0
        for j in range(K):
            w[i, j] *= rt
            M += w[i, j] * atoms[i, j]
        V = 0.0
        for j in range(K):
            dev = atoms[i, j] - M
            V += w[i, j] * dev * dev
        z = zc[i]
        inv = 1.0 / sigma2[i]
        r = M - z
        losses[i] = r * r + 2.0 * V - sigma2[i]
        # gradients w.r.t. logits, atoms, then back through the decode
        sg = 0.0
        for j in range(K):
            dev = atoms[i, j] - M
            ga = 2.0 * w[i, j] * (r * dev + dev * dev - V)
            g_atoms[j] = 2.0 * w[i, j] * r + 4.0 * w[i, j] * dev - ga * (atoms[i, j] - z) * inv
            g_head[i, j] = ga
            sg += ga
        gs = 0.0
        for j in range(K):
            g_head[i, j] -= pi[i, j] * sg
            gs += g_atoms[j] * (c[i, j] - 0.5)
        g_head[i, 2 * K - 1] = gs * scale[i]
        acc = 0.0
        for k in range(K - 2, -1, -1):
            acc += g_atoms[k + 1] * scale[i]
            g_q[k] = acc
        qg = 0.0
        for k in range(K - 1):
            qg += q[i, k] * g_q[k]
        for k in range(K - 1):
            g_head[i, K + k] = q[i, k] * (g_q[k] - qg)


class ThingWorkspace:
    """Scratch arrays for one ``(n, K)`` problem, reused across optimizer steps.

    Fresh multi-megabyte temporaries on every step cost more in page faults
    than the arithmetic itself.
    """

    def __init__(self, n: int, K: int):
        self.shape = (n, K)
        self.head = np.empty((n, 2 * K))
        self.e = np.empty((n, 2 * K))
        self.pi = np.empty((n, K))
        self.q = np.empty((n, K - 1))
        self.c = np.empty((n, K))
        self.atoms = np.empty((n, K))
        self.logits = np.empty((n, K))
        self.losses = np.empty(n)
        self.g_head = np.empty((n, 2 * K))


def thing_rows(head, zc, sigma2, K, work: ThingWorkspace):
    """Per-row SURE into ``work.losses`` and its gradient w.r.t. ``head`` into ``work.g_head``."""
    e = work.e
    _shift_logits(head, K, e)
    np.exp(e, out=e)
    e_pi, e_q, scale = e[:, :K], e[:, K : 2 * K - 1], e[:, 2 * K - 1]
    _decode_and_logits(head, e_pi, e_q, scale, zc, sigma2, K, work.pi, work.q, work.c, work.atoms, work.logits)
    w = np.exp(work.logits, out=work.logits)
    _moments_and_backward(w, work.pi, work.q, work.c, work.atoms, scale, zc, sigma2, K, work.losses, work.g_head)
    return work.losses, work.g_head
