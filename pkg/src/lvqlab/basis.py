"""Learnable lattice basis ``B = U diag(exp(theta)) V^T`` and its training maths.

``U`` and ``V`` come from skew-symmetric generators through the Cayley map
``Q = (I - S)(I + S)^-1``, so they are exact rotations and ``B`` is invertible
by construction with the analytic inverse ``V diag(exp(-theta)) U^T``.

:func:`forward_train` runs the noisy (training-time) quantization pipeline and
:func:`backward` returns hand-derived gradients of
``mse + lambda * mean(rate_bits)`` with respect to every basis and entropy
parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import check_finite
from .entropy import SIGMA_MIN, EntropyParams, log_bin_mass
from .exceptions import DimensionMismatch, NonFinite
from .lattice import LatticeBasis

_LN2 = math.log(2.0)


def n_skew(n: int) -> int:
    return n * (n - 1) // 2


def _dim_from_skew(count: int) -> int:
    n = int(round((1 + math.sqrt(1 + 8 * count)) / 2))
    if n_skew(n) != count:
        raise DimensionMismatch(f"{count} is not a triangular number n(n-1)/2")
    return n


def skew_matrix(coeffs, n: int | None = None) -> np.ndarray:
    """Skew-symmetric matrix whose strict upper triangle holds ``coeffs`` (row-major)."""
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    if n is None:
        n = _dim_from_skew(coeffs.size)
    elif coeffs.size != n_skew(n):
        raise DimensionMismatch(f"expected {n_skew(n)} skew coefficients, got {coeffs.size}")
    S = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    S[iu] = coeffs
    S.T[iu] = -coeffs
    return S


def _cayley(coeffs, n):
    S = skew_matrix(coeffs, n)
    eye = np.eye(n)
    inv = np.linalg.inv(eye + S)
    return (eye - S) @ inv, inv


def cayley_orthogonal(skew_coeffs, n: int | None = None) -> np.ndarray:
    """Rotation ``(I - S)(I + S)^-1`` built from skew-symmetric coefficients."""
    coeffs = np.asarray(skew_coeffs, dtype=np.float64).ravel()
    if n is None:
        n = _dim_from_skew(coeffs.size)
    return _cayley(coeffs, n)[0]


def _cayley_grad(G_Q, Q, inv_ipS):
    """Pull a gradient on ``Q`` back to the skew coefficients."""
    n = Q.shape[0]
    G_S = -inv_ipS.T @ G_Q @ (np.eye(n) + Q).T
    iu = np.triu_indices(n, 1)
    return G_S[iu] - G_S.T[iu]


@dataclass
class BasisParams:
    """Unconstrained parameters of the lattice basis."""

    skew_u: np.ndarray
    skew_v: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        self.skew_u = np.asarray(self.skew_u, dtype=np.float64).ravel()
        self.skew_v = np.asarray(self.skew_v, dtype=np.float64).ravel()
        self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64).ravel()
        n = self.log_sigma.size
        if self.skew_u.size != n_skew(n) or self.skew_v.size != n_skew(n):
            raise DimensionMismatch("skew generators do not match log_sigma length")

    @property
    def dim(self) -> int:
        return self.log_sigma.size

    @classmethod
    def identity(cls, n: int) -> "BasisParams":
        return cls(np.zeros(n_skew(n)), np.zeros(n_skew(n)), np.zeros(n))

    def copy(self) -> "BasisParams":
        return BasisParams(self.skew_u.copy(), self.skew_v.copy(), self.log_sigma.copy())


class _Factors(NamedTuple):
    U: np.ndarray
    V: np.ndarray
    inv_u: np.ndarray
    inv_v: np.ndarray
    sig: np.ndarray
    B: np.ndarray
    Binv: np.ndarray


def _factors(params: BasisParams) -> _Factors:
    n = params.dim
    U, inv_u = _cayley(params.skew_u, n)
    V, inv_v = _cayley(params.skew_v, n)
    sig = np.exp(params.log_sigma)
    B = (U * sig) @ V.T
    Binv = (V / sig) @ U.T
    return _Factors(U, V, inv_u, inv_v, sig, B, Binv)


def materialize(params: BasisParams) -> LatticeBasis:
    f = _factors(params)
    return LatticeBasis(f.B, f.Binv)


@dataclass
class TrainingBatch:
    """Feature vectors and the additive quantization-noise sample for one step.

    ``cell="cube"`` noise is uniform on ``[-1/2, 1/2)^n``.  ``cell="voronoi"``
    marks noise drawn uniformly from a lattice Voronoi cell (fixed-lattice
    training), which is not confined to the cube.
    """

    vectors: np.ndarray
    noise: np.ndarray
    cell: str = field(default="cube")

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.noise = np.atleast_2d(np.asarray(self.noise, dtype=np.float64))
        if self.vectors.shape != self.noise.shape:
            raise DimensionMismatch("vectors and noise must have the same shape")
        if self.cell == "cube" and (np.any(self.noise < -0.5) or np.any(self.noise >= 0.5)):
            raise ValueError("cube noise must lie in [-0.5, 0.5)")

    @classmethod
    def uniform(cls, vectors, rng) -> "TrainingBatch":
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        return cls(vectors, rng.random(vectors.shape) - 0.5)


@dataclass
class ParamGradients:
    d_skew_u: np.ndarray
    d_skew_v: np.ndarray
    d_log_sigma: np.ndarray
    d_sigma: np.ndarray  # entropy-model scales
    d_mu_g: np.ndarray
    d_q_s: float
    d_step_scale: float

    def check_finite(self):
        for name, value in vars(self).items():
            if not np.all(np.isfinite(value)):
                raise NonFinite(f"non-finite gradient in {name}")


class ForwardOutput(NamedTuple):
    reconstructions: np.ndarray
    rate_bits: np.ndarray  # per vector
    mse: float


class _Trace(NamedTuple):
    fac: _Factors
    step: float
    fc: np.ndarray
    ft: np.ndarray
    x: np.ndarray
    sig_steps: np.ndarray
    out: ForwardOutput


def _forward(params, entropy, batch, step_scale) -> _Trace:
    X = batch.vectors
    n = params.dim
    if X.shape[1] != n or entropy.dim != n:
        raise DimensionMismatch("batch, basis and entropy model dimensions disagree")
    fac = _factors(params)
    step = step_scale * entropy.q_s
    fc = X - entropy.mu_g
    ft = (fc @ fac.Binv.T) / step
    x = ft + batch.noise
    sig_steps = np.maximum(entropy.sigma, SIGMA_MIN) / step
    rate = -np.sum(log_bin_mass(x, sig_steps), axis=1) / _LN2
    recon = step * (x @ fac.B.T) + entropy.mu_g
    err = X - recon
    mse = float(np.sum(err * err) / err.size)
    check_finite("forward pass", ft, rate, recon)
    return _Trace(fac, step, fc, ft, x, sig_steps, ForwardOutput(recon, rate, mse))


def forward_train(params: BasisParams, entropy: EntropyParams, batch: TrainingBatch,
                  step_scale: float = 1.0) -> ForwardOutput:
    """Noisy-quantization forward pass: reconstructions, per-vector bits and MSE."""
    return _forward(params, entropy, batch, step_scale).out


def loss_value(params, entropy, batch, step_scale, lmbda) -> float:
    out = forward_train(params, entropy, batch, step_scale)
    return out.mse + lmbda * float(np.mean(out.rate_bits))


def backward(params: BasisParams, entropy: EntropyParams, batch: TrainingBatch,
             step_scale: float, lmbda: float) -> ParamGradients:
    """Gradients of ``mse + lmbda * mean(rate_bits)``; the noise is held fixed."""
    return loss_and_grad(params, entropy, batch, step_scale, lmbda)[1]


def loss_and_grad(params, entropy, batch, step_scale, lmbda):
    tr = _forward(params, entropy, batch, step_scale)
    fac, s, fc, ft, x = tr.fac, tr.step, tr.fc, tr.ft, tr.x
    X = batch.vectors
    m, n = X.shape
    recon = tr.out.reconstructions

    _, gx, gscale = log_bin_mass(x, tr.sig_steps, with_grad=True)
    c = -lmbda / (m * _LN2)
    d_x = c * gx
    d_sig_steps = c * gscale.sum(axis=0)

    # reconstruction = s * x B^T + mu
    d_rec = -2.0 * (X - recon) / (m * n)
    xBt = x @ fac.B.T
    d_x += s * (d_rec @ fac.B)
    g_B = s * (d_rec.T @ x)
    d_s = float(np.sum(d_rec * xBt))
    d_mu = d_rec.sum(axis=0)

    # ft = (X - mu) Binv^T / s
    d_fc = (d_x @ fac.Binv) / s
    d_mu -= d_fc.sum(axis=0)
    g_Binv = (d_x.T @ fc) / s
    d_s -= float(np.sum(d_x * ft)) / s

    # sig_steps = sigma / s
    sigma = np.maximum(entropy.sigma, SIGMA_MIN)
    d_sigma = d_sig_steps / s
    d_s -= float(np.dot(d_sig_steps, sigma)) / (s * s)

    # B = U S V^T and B^-1 = V S^-1 U^T
    U, V, sig = fac.U, fac.V, fac.sig
    g_U = (g_B @ V) * sig + (g_Binv.T @ V) / sig
    g_V = (g_B.T @ U) * sig + (g_Binv @ U) / sig
    d_theta = np.einsum("ij,ij->j", U, g_B @ V) * sig - np.einsum("ij,ij->j", V, g_Binv @ U) / sig

    grads = ParamGradients(
        d_skew_u=_cayley_grad(g_U, U, fac.inv_u),
        d_skew_v=_cayley_grad(g_V, V, fac.inv_v),
        d_log_sigma=d_theta,
        d_sigma=d_sigma,
        d_mu_g=d_mu,
        d_q_s=d_s * step_scale,
        d_step_scale=d_s * entropy.q_s,
    )
    grads.check_finite()
    loss = tr.out.mse + lmbda * float(np.mean(tr.out.rate_bits))
    return loss, grads, tr.out


# -- adaptive-moment optimizer ---------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def optimizer_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionMismatch("optimizer state, parameters and gradients disagree in shape")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)
