"""Unconstrained parameterizations, a small ReLU network, SURE gradients and Adam.

Particle priors are decoded from unconstrained parameters as

    pi  = softmax(pi_tilde)
    u_j = (sum_{k<j} softmax(u_tilde)_k - 1/2) * exp(s) + m,

so atoms are ordered by construction and span ``[m - e^s/2, m + e^s/2]``.
The location ``m`` is held fixed during optimization.

Gradients of SURE are computed analytically. Per observation, SURE of a
posterior-mean denoiser equals ``(z - M)^2 + 2 V - sigma^2`` where ``M`` and
``V`` are the posterior mean and variance, and both are simple moments of
the posterior atom weights, which makes the chain rule short.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._kernels import ThingWorkspace, thing_rows
from .exceptions import DataError, NumericalError
from .mixture import Observations, ParticlePrior, as_observations

DEFAULT_K = 100
HIDDEN = (8, 8)


# ---------------------------------------------------------------- particles


@dataclass(frozen=True, eq=False)
class ParticleParams:
    pi_tilde: np.ndarray
    u_tilde: np.ndarray
    s: float
    m: float

    def __post_init__(self):
        object.__setattr__(self, "pi_tilde", np.asarray(self.pi_tilde, dtype=float).reshape(-1))
        object.__setattr__(self, "u_tilde", np.asarray(self.u_tilde, dtype=float).reshape(-1))
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "m", float(self.m))
        if self.u_tilde.size != self.pi_tilde.size - 1:
            raise DataError(f"u_tilde needs K-1={self.pi_tilde.size - 1} entries, got {self.u_tilde.size}")

    @property
    def K(self) -> int:
        return self.pi_tilde.size

    def to_vector(self) -> np.ndarray:
        """Trainable coordinates ``[pi_tilde | u_tilde | s]``; ``m`` is excluded."""
        return np.concatenate([self.pi_tilde, self.u_tilde, [self.s]])

    def with_vector(self, vec) -> "ParticleParams":
        K = self.K
        return ParticleParams(vec[:K], vec[K : 2 * K - 1], vec[2 * K - 1], self.m)


def _softmax(x):
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x):
    shifted = x - np.max(x, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _relative_positions(u_tilde):
    """Cumulative spacings ``c_j = sum_{k<j} softmax(u_tilde)_k``, ``c_1 = 0``."""
    q = _softmax(u_tilde)
    c = np.zeros(q.shape[:-1] + (q.shape[-1] + 1,))
    np.cumsum(q, axis=-1, out=c[..., 1:])
    return q, c


def decode_arrays(pi_tilde, u_tilde, s):
    """Batched decode into centred atoms ``u - m`` and log weights.

    Works on the trailing axis, so ``(K,)`` and ``(n, K)`` inputs are both fine.
    """
    pi_tilde = np.asarray(pi_tilde, dtype=float)
    if pi_tilde.shape[-1] < 2:
        raise DataError("particle parameterization needs K >= 2")
    q, c = _relative_positions(np.asarray(u_tilde, dtype=float))
    scale = np.exp(np.asarray(s, dtype=float))[..., None]
    atoms_c = (c - 0.5) * scale
    return atoms_c, _log_softmax(pi_tilde), q, c, scale


def decode_backward(g_atoms, g_logw, pi_tilde, q, c, scale):
    """Pull gradients w.r.t. (centred atoms, log weights) back to (pi_tilde, u_tilde, s)."""
    pi = _softmax(pi_tilde)
    g_pi = g_logw - pi * np.sum(g_logw, axis=-1, keepdims=True)
    g_s = np.sum(g_atoms * (c - 0.5), axis=-1) * scale[..., 0]
    g_c = g_atoms * scale
    # c_j depends on q_k for every k < j
    g_q = np.cumsum(g_c[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    g_u = q * (g_q - np.sum(q * g_q, axis=-1, keepdims=True))
    return g_pi, g_u, g_s


def decode_particles(p: ParticleParams) -> ParticlePrior:
    atoms_c, logw, *_ = decode_arrays(p.pi_tilde, p.u_tilde, p.s)
    return ParticlePrior(atoms_c + p.m, np.exp(logw))


def iqr95(z) -> float:
    """Width of the central 95% range, linear-interpolation quantiles."""
    lo, hi = np.quantile(np.asarray(z, dtype=float), [0.025, 0.975])
    return float(hi - lo)


def init_particles(data, K: int = DEFAULT_K) -> ParticleParams:
    """Equal weights on evenly spaced atoms spanning the 95% range of ``z``."""
    data = as_observations(data)
    if len(data) < 2:
        raise DataError("need at least two observations")
    if K < 2:
        raise DataError("need K >= 2")
    width = iqr95(data.z)
    if not width > 0:
        raise DataError("degenerate data: the 95% interquantile range of z is zero")
    return ParticleParams(np.ones(K), np.ones(K - 1), np.log(width), float(np.median(data.z)))


def _sure_shared(atoms_c, logw, zc, sigma2):
    """Mean SURE and its gradient for one prior shared by all observations.

    The ``(n, K)`` work is arranged as matrix products: the softmax logits
    are a rank-3 product and every gradient sum is ``w.T @ coefficients``.
    """
    n = zc.size
    h = 0.5 / sigma2
    # log pi_j - h (z - u_j)^2, minus the row constant h z^2
    lhs = np.column_stack([np.ones(n), h, 2.0 * h * zc])
    rhs = np.vstack([logw, -(atoms_c**2), atoms_c])
    a = lhs @ rhs
    a -= a.max(axis=1, keepdims=True)
    w = np.exp(a)
    w /= w.sum(axis=1, keepdims=True)

    M = w @ atoms_c
    E2 = w @ (atoms_c**2)
    V = np.maximum(E2 - M**2, 0.0)
    r = M - zc
    loss = float(np.mean(r**2 + 2.0 * V - sigma2))

    # dL_i/da_ij = 2 w_ij (u_j^2 + alpha_i u_j + beta_i)
    alpha = r - 2.0 * M
    beta = M**2 - r * M - V
    # dL_i/du_j (holding logits) + dL_i/da_ij * (z_i - u_j)/sigma_i^2, as a cubic in u_j
    inv = 1.0 / sigma2
    c3 = -2.0 * inv
    c2 = 2.0 * (zc - alpha) * inv
    c1 = 4.0 + 2.0 * (alpha * zc - beta) * inv
    c0 = 2.0 * r - 4.0 * M + 2.0 * beta * zc * inv
    coef = np.column_stack([np.ones(n), alpha, beta, c3, c2, c1, c0])
    S = (w.T @ coef) / n
    u = atoms_c
    g_logw = 2.0 * (u**2 * S[:, 0] + u * S[:, 1] + S[:, 2])
    g_atoms = u**3 * S[:, 3] + u**2 * S[:, 4] + u * S[:, 5] + S[:, 6]
    return loss, g_atoms, g_logw, M, V


def _sure_rows(atoms_c, logw, zc, sigma2):
    """Per-observation SURE and gradients when every row has its own prior."""
    inv = 1.0 / sigma2[:, None]
    diff = atoms_c - zc[:, None]
    a = logw - 0.5 * diff**2 * inv
    a -= a.max(axis=1, keepdims=True)
    w = np.exp(a)
    w /= w.sum(axis=1, keepdims=True)
    M = np.sum(w * atoms_c, axis=1)
    dev = atoms_c - M[:, None]
    V = np.sum(w * dev**2, axis=1)
    r = (M - zc)[:, None]
    losses = (M - zc) ** 2 + 2.0 * V - sigma2
    g_a = 2.0 * w * (r * dev + dev**2 - V[:, None])
    g_atoms = 2.0 * w * r + 4.0 * w * dev - g_a * diff * inv
    return losses, g_atoms, g_a, M, V


def sure_particles(p: ParticleParams, data) -> tuple[float, np.ndarray]:
    """SURE of the decoded prior and its gradient as a vector like ``to_vector``."""
    data = as_observations(data)
    with np.errstate(over="ignore", invalid="ignore"):
        atoms_c, logw, q, c, scale = decode_arrays(p.pi_tilde, p.u_tilde, p.s)
        loss, g_atoms, g_logw, _, _ = _sure_shared(atoms_c, logw, data.z - p.m, data.sigma2)
        g_pi, g_u, g_s = decode_backward(g_atoms, g_logw, p.pi_tilde, q, c, scale)
    grad = np.concatenate([g_pi, g_u, [g_s]])
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite SURE or gradient", snapshot=p)
    return loss, grad


def grad_sure_particles(p: ParticleParams, data) -> ParticleParams:
    """Gradient of SURE w.r.t. ``(pi_tilde, u_tilde, s)``; the ``m`` slot is zero."""
    _, grad = sure_particles(p, data)
    K = p.K
    return ParticleParams(grad[:K], grad[K : 2 * K - 1], grad[2 * K - 1], 0.0)


# ---------------------------------------------------------------- network


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights ``W[l]`` of shape (fan_in, fan_out) and biases ``b[l]``."""

    weights: tuple
    biases: tuple

    @property
    def sizes(self):
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_vector(self, vec) -> "MlpParams":
        Ws, bs, pos = [], [], 0
        for W, b in zip(self.weights, self.biases):
            Ws.append(vec[pos : pos + W.size].reshape(W.shape))
            pos += W.size
            bs.append(vec[pos : pos + b.size].copy())
            pos += b.size
        return MlpParams(tuple(Ws), tuple(bs))


def init_mlp(in_dim: int, out_dim: int, rng: np.random.Generator, hidden=HIDDEN) -> MlpParams:
    """Every layer drawn from ``Unif(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    sizes = (in_dim,) + tuple(hidden) + (out_dim,)
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        Ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(tuple(Ws), tuple(bs))


def _forward(params: MlpParams, x, out=None):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise DataError(f"network expects {params.weights[0].shape[0]} inputs, got {x.shape[-1]}")
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = np.matmul(h, W, out=out if l == last else None)
        h += b
        if l < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    return h, acts


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """ReLU hidden layers, linear output head. ``x`` is ``(d,)`` or ``(n, d)``."""
    return _forward(params, x)[0]


def mlp_backward(params: MlpParams, acts, g_out) -> np.ndarray:
    """Gradient of ``sum(g_out * output)`` w.r.t. the flattened parameters."""
    grads = []
    g = g_out
    for l in range(len(params.weights) - 1, -1, -1):
        h_in = acts[l]
        grads.append((g.sum(axis=0), h_in.T @ g))
        if l > 0:
            g = g @ params.weights[l].T
            g[acts[l] <= 0] = 0.0
    grads.reverse()
    return np.concatenate([a.ravel() for gb, gW in grads for a in (gW, gb)])


def sure_ls(params: MlpParams, data: Observations, x=None, offset: float = 0.0) -> tuple[float, np.ndarray]:
    """SURE of the conditional-Gaussian denoiser, head outputs ``(m(x) - offset, log A(x))``."""
    x = data.features() if x is None else x
    out, acts = _forward(params, x)
    m, A = out[:, 0] + offset, np.exp(out[:, 1])
    s2, z = data.sigma2, data.z
    t = s2 + A
    resid = z - m
    n = z.size
    loss = float(np.mean(s2 + s2**2 * resid**2 / t**2 - 2.0 * s2**2 / t))
    g_m = -2.0 * s2**2 * resid / t**2
    g_A = -2.0 * s2**2 * resid**2 / t**3 + 2.0 * s2**2 / t**2
    g_out = np.column_stack([g_m, g_A * A]) / n
    grad = mlp_backward(params, acts, g_out)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite SURE-LS loss or gradient", snapshot=params)
    return loss, grad


def split_thing_head(out, K: int):
    """Head layout ``[pi_tilde (K) | u_tilde (K-1) | s (1)]``."""
    return out[:, :K], out[:, K : 2 * K - 1], out[:, 2 * K - 1]


def thing_head_sure(out, zc, sigma2, K: int, fused: bool = True, work: Optional[ThingWorkspace] = None):
    """Per-row SURE and its gradient w.r.t. the head outputs ``out`` (n, 2K).

    With ``work`` the returned arrays are views into its buffers and are
    overwritten by the next call.
    """
    if fused:
        if work is None or work.shape != (out.shape[0], K):
            work = ThingWorkspace(out.shape[0], K)
        return thing_rows(np.ascontiguousarray(out), zc, sigma2, K, work)
    pt, ut, s = split_thing_head(out, K)
    atoms_c, logw, q, c, scale = decode_arrays(pt, ut, s)
    losses, g_atoms, g_logw, _, _ = _sure_rows(atoms_c, logw, zc, sigma2)
    g_pi, g_u, g_s = decode_backward(g_atoms, g_logw, pt, q, c, scale)
    return losses, np.concatenate([g_pi, g_u, g_s[:, None]], axis=1)


def sure_thing(params: MlpParams, data: Observations, m: float, K: int, x=None, fused: bool = True, work=None):
    """SURE when each observation's prior is decoded from the network output at its covariates."""
    x = data.features() if x is None else x
    out, acts = _forward(params, x, None if work is None else work.head)
    losses, g_out = thing_head_sure(out, data.z - m, data.sigma2, K, fused, work)
    g_out /= data.z.size
    loss = float(np.mean(losses))
    grad = mlp_backward(params, acts, g_out)
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite SURE-THING loss or gradient", snapshot=params)
    return loss, grad


def mse_regression(params: MlpParams, x, y) -> tuple[float, np.ndarray]:
    """Mean squared error of a scalar-output network and its gradient."""
    out, acts = _forward(params, x)
    resid = out[:, 0] - y
    loss = float(np.mean(resid**2))
    grad = mlp_backward(params, acts, (2.0 * resid / y.size)[:, None])
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite regression loss or gradient", snapshot=params)
    return loss, grad


# ---------------------------------------------------------------- Adam


@dataclass(frozen=True, eq=False)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> "AdamState":
        return cls(0, np.zeros(size), np.zeros(size), **hyper)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new arrays, inputs are untouched."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.shape or grads.shape != state.m.shape:
        raise DataError("parameter, gradient and moment shapes differ")
    if np.any(np.isnan(grads)):
        raise NumericalError("NaN gradient passed to Adam")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, replace(state, step=t, m=m, v=v)


@dataclass
class TrainTrace:
    params: np.ndarray
    losses: list = field(default_factory=list)
    iterations: int = 0


def adam_minimize(loss_and_grad, x0, iterations=2000, learning_rate=0.01, tol=1e-9, patience=50) -> TrainTrace:
    """Full-batch Adam with a plateau stop.

    Stops early once the best loss of the last ``patience`` iterations beats
    the best loss before them by less than ``tol``. The trace ends with the loss at the
    returned parameters.
    """
    x = np.array(x0, dtype=float)
    state = AdamState.zeros(x.size, learning_rate=learning_rate)
    losses = []
    best_before = np.inf  # best loss up to `patience` iterations ago
    for _ in range(iterations):
        loss, grad = loss_and_grad(x)
        losses.append(loss)
        if len(losses) > patience:
            best_before = min(best_before, losses[-1 - patience])
            if best_before - min(losses[-patience:]) < tol:
                break
        x, state = adam_step(state, x, grad)
    else:
        losses.append(loss_and_grad(x)[0])
    return TrainTrace(x, losses, state.step)
