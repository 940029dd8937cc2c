"""scikit-learn style front end for the quantizers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .entropy import Bitstream, log_bin_mass
from .exceptions import DimensionMismatch
from .model import QuantizerKind, TrainedModel
from .training import TrainConfig, fit_quantizer


class LatticeQuantizer(TransformerMixin, BaseEstimator):
    """Rate-distortion trained lattice quantizer.

    Parameters
    ----------
    quantizer : {"salvq", "usq", "e8"}, default="salvq"
        ``"salvq"`` learns the lattice basis, ``"usq"`` keeps the identity
        basis (uniform scalar quantization) and ``"e8"`` uses a product E8
        lattice.
    lmbda : float, default=0.004
        Lagrange multiplier of the rate term. Ignored when ``lambdas`` is set.
    lambdas : sequence of float, optional
        Strictly increasing multipliers; trains one variable-rate model with
        one learned step gain per multiplier.
    n_iter, batch_size, learning_rate : training schedule.
    q_s_init : float, optional
        Initial base step. Defaults to the high-resolution optimum for the
        (geometric mean) multiplier.
    random_state : int, default=0

    Attributes
    ----------
    model_ : TrainedModel
    n_features_in_ : int

    Examples
    --------
    >>> import numpy as np
    >>> X = np.random.default_rng(0).normal(size=(2000, 4))
    >>> q = LatticeQuantizer(quantizer="usq", n_iter=200).fit(X)
    >>> codes = q.transform(X[:5])
    >>> q.inverse_transform(codes).shape
    (5, 4)
    """

    def __init__(self, quantizer="salvq", lmbda=0.004, lambdas=None, n_iter=4000, batch_size=256,
                 learning_rate=0.01, q_s_init=None, random_state=0):
        self.quantizer = quantizer
        self.lmbda = lmbda
        self.lambdas = lambdas
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.q_s_init = q_s_init
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        lambdas = (self.lmbda,) if self.lambdas is None else tuple(self.lambdas)
        return TrainConfig(lambdas=lambdas, iterations=self.n_iter, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=self.random_state,
                           q_s_init=self.q_s_init)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.model_ = fit_quantizer(X, self._config(), QuantizerKind.parse(self.quantizer))
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: TrainedModel) -> "LatticeQuantizer":
        """Wrap an already trained model (e.g. one loaded from disk)."""
        est = cls(quantizer=model.kind.name.lower().replace("fixed_", ""),
                  lambdas=tuple(model.gains.lambdas) if model.gains.size > 1 else None,
                  lmbda=float(model.gains.lambdas[0]))
        est.model_ = model
        est.n_features_in_ = model.dim
        return est

    def _validate(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def transform(self, X, target=0):
        """Integer lattice coordinates of the quantized vectors."""
        X = self._validate(X)
        latent = self.model_.quantize(X, target)
        if self.model_.kind is QuantizerKind.FIXED_E8:
            latent = latent @ self.model_.basis().inverse.T
        return np.rint(latent).astype(np.int64)

    def inverse_transform(self, U, target=0):
        check_is_fitted(self, "model_")
        U = check_array(U, dtype=np.float64)
        if self.model_.kind is QuantizerKind.FIXED_E8:
            U = U @ self.model_.basis().matrix.T
        return self.model_.reconstruct(U, target)

    def quantize(self, X, target=0):
        """Hard quantization: ``inverse_transform(transform(X))``."""
        X = self._validate(X)
        return self.model_.reconstruct(self.model_.quantize(X, target), target)

    def compress(self, X, target=0) -> bytes:
        return self.model_.compress(self._validate(X), target).to_bytes()

    def decompress(self, data: bytes):
        check_is_fitted(self, "model_")
        return self.model_.decompress(Bitstream.from_bytes(data))

    def rate_distortion(self, X, target=0):
        """``(bits_per_vector, mse)`` with the rate from the model's ideal code length."""
        X = self._validate(X)
        m = self.model_
        latent = m.quantize(X, target)
        recon = m.reconstruct(latent, target)
        scales = m.entropy.sigma / m.step(target)
        bits = -np.sum(log_bin_mass(latent, scales)) / np.log(2.0) / X.shape[0]
        return float(bits), float(np.mean((X - recon) ** 2))

    def score(self, X, y=None, target=0):
        """Negative rate-distortion cost ``-(mse + lambda * bits_per_vector)``."""
        bits, mse = self.rate_distortion(X, target)
        return -(mse + float(self.model_.gains.lambdas[target]) * bits)
