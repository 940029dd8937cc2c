"""Minibatch training of quantizer models on the rate-distortion loss."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import AdamState, BasisParams, TrainingBatch, loss_and_grad, n_skew, optimizer_step
from .entropy import EntropyParams
from .exceptions import BadSpec, NonFinite
from .lattice import LatticeKind, generator_matrix, quantize_e8
from .model import QuantizerKind, TrainedModel
from .rate_control import GainVector, log_gain_grad, sample_target

logger = logging.getLogger(__name__)

MAX_BAD_STEPS = 20


@dataclass
class TrainConfig:
    """Training hyper-parameters.

    ``lambdas`` holds one multiplier for single-rate training or several
    (strictly increasing) for a variable-rate model.
    """

    lambdas: tuple = (0.004,)
    iterations: int = 4000
    batch_size: int = 256
    learning_rate: float = 0.01
    seed: int = 0
    q_s_init: float | None = None
    decay_start: float = 0.6  # fraction of iterations before the learning rate decays
    final_lr_fraction: float = 0.05
    freeze_gains: bool | None = None  # default: frozen iff single target
    log_every: int = 100

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        if not self.lambdas:
            raise BadSpec("at least one lambda is required")
        if len(set(self.lambdas)) != len(self.lambdas):
            raise BadSpec("duplicate lambda values")
        if any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise BadSpec("lambdas must be strictly increasing")
        if self.iterations < 1:
            raise BadSpec("iterations must be >= 1")
        if self.batch_size < 1:
            raise BadSpec("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise BadSpec("learning_rate must be positive")

    @property
    def multirate(self) -> bool:
        return len(self.lambdas) > 1

    def lr_at(self, it: int) -> float:
        start = self.decay_start * self.iterations
        if it < start:
            return self.learning_rate
        frac = (it - start) / max(self.iterations - start, 1)
        return self.learning_rate * self.final_lr_fraction ** frac


def initial_step(lambdas, dim: int) -> float:
    """High-resolution optimum of ``step**2/12 + lambda * dim * log2(sigma/step)``."""
    lam = math.exp(np.mean(np.log(np.maximum(lambdas, 1e-12))))
    return math.sqrt(6.0 * lam * dim / math.log(2.0))


def voronoi_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform samples from the E8 Voronoi cell, one per 8-block of each row."""
    m, n = shape
    G = generator_matrix(LatticeKind.GOSSET_E8, 8)
    P = rng.random((m * n // 8, 8)) @ G.T
    return (P - quantize_e8(P)).reshape(m, n)


class _Layout:
    """Packs the trainable subset of a model into one flat vector."""

    def __init__(self, kind: QuantizerKind, n: int, M: int, train_gains: bool):
        self.fields = [("log_sig_ent", n), ("mu_g", n), ("log_q_s", 1)]
        if kind is QuantizerKind.SALVQ:
            k = n_skew(n)
            self.fields += [("skew_u", k), ("skew_v", k), ("log_sigma", n)]
        if train_gains:
            self.fields.append(("log_gains", M))
        self.size = sum(s for _, s in self.fields)

    def pack(self, values: dict) -> np.ndarray:
        return np.concatenate([np.atleast_1d(values[name]) for name, _ in self.fields])

    def unpack(self, vec: np.ndarray) -> dict:
        out, i = {}, 0
        for name, size in self.fields:
            out[name] = vec[i : i + size]
            i += size
        return out


def fit_quantizer(X, config: TrainConfig, kind="salvq") -> TrainedModel:
    """Train a quantizer of the given kind on the rows of ``X``."""
    kind = QuantizerKind.parse(kind)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise BadSpec("training data must be a non-empty 2-D array")
    if not np.all(np.isfinite(X)):
        raise NonFinite("training data contains NaN or Inf")
    N, n = X.shape
    if kind is QuantizerKind.FIXED_E8 and n % 8:
        raise BadSpec(f"FIXED_E8 needs a dimension divisible by 8, got {n}")

    lambdas = np.asarray(config.lambdas)
    M = lambdas.size
    train_gains = config.multirate if config.freeze_gains is None else not config.freeze_gains
    layout = _Layout(kind, n, M, train_gains)

    q0 = config.q_s_init if config.q_s_init is not None else initial_step(lambdas, n)
    basis = BasisParams.identity(n)
    gains = GainVector.unit(lambdas)
    state_vals = {
        "log_sig_ent": np.log(np.maximum(X.std(axis=0), 1e-6)),
        "mu_g": X.mean(axis=0),
        "log_q_s": np.array([math.log(q0)]),
        "skew_u": basis.skew_u, "skew_v": basis.skew_v, "log_sigma": basis.log_sigma,
        "log_gains": gains.log_gains,
    }
    theta = layout.pack(state_vals)
    adam = AdamState.zeros(layout.size)
    rng = np.random.default_rng(config.seed)
    history = []
    bad = 0
    smooth = None

    def build(vec):
        v = {**state_vals, **layout.unpack(vec)}
        bp = BasisParams(v["skew_u"], v["skew_v"], v["log_sigma"])
        ep = EntropyParams(np.exp(v["log_sig_ent"]), v["mu_g"], float(np.exp(v["log_q_s"][0])))
        return bp, ep, GainVector(v["log_gains"], lambdas)

    for it in range(config.iterations):
        idx = rng.integers(0, N, size=min(config.batch_size, N))
        target = sample_target(rng, M)
        Xb = X[idx]
        if kind is QuantizerKind.FIXED_E8:
            batch = TrainingBatch(Xb, voronoi_noise(rng, Xb.shape), cell="voronoi")
        else:
            batch = TrainingBatch.uniform(Xb, rng)
        bp, ep, gv = build(theta)
        try:
            loss, g, _ = loss_and_grad(bp, ep, batch, gv.gain(target), lambdas[target])
        except NonFinite as exc:
            bad += 1
            logger.warning("iteration %d: %s; step skipped", it, exc)
            if bad > MAX_BAD_STEPS:
                raise NonFinite(f"{bad} consecutive non-finite steps at iteration {it}") from exc
            continue
        bad = 0
        grads = {
            "log_sig_ent": g.d_sigma * ep.sigma,
            "mu_g": g.d_mu_g,
            "log_q_s": np.array([g.d_q_s * ep.q_s]),
            "skew_u": g.d_skew_u, "skew_v": g.d_skew_v, "log_sigma": g.d_log_sigma,
            "log_gains": log_gain_grad(g.d_step_scale, gv, target),
        }
        theta, adam = optimizer_step(adam, theta, layout.pack(grads), config.lr_at(it))
        history.append(loss)
        smooth = loss if smooth is None else 0.98 * smooth + 0.02 * loss
        if config.log_every and (it + 1) % config.log_every == 0:
            logger.info("iter %d  loss %.6f  (smoothed %.6f)  q_s %.4f", it + 1, loss, smooth, ep.q_s)

    bp, ep, gv = build(theta)
    if kind is not QuantizerKind.SALVQ:
        bp = BasisParams.identity(n)
    return TrainedModel(kind, bp, ep, gv, history=history)
