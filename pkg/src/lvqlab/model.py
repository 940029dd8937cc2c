"""Trained quantizer models: hard quantization, symbol coding and the model file.

Three quantizer kinds share one parameter layout:

``USQ``
    Identity basis; per-coordinate rounding with step ``g * q_s``.
``SALVQ``
    Learned basis ``B``; Babai rounding ``B rint(B^-1 f_c / step)``.
``FIXED_E8``
    Product E8 lattice scaled by the step.  Quantization is exact (coset
    decoder) in the standard E8 coordinates ``D8 u (D8 + 1/2)``, which have unit
    covolume like the integer grid.  A lattice point is coded as: twice its
    first coordinate, the remaining coordinates shifted by the coset, and the
    last coordinate halved after removing its forced parity.  The coordinates
    share the integrated-Gaussian model with the other kinds.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from ._validation import as_matrix
from .basis import BasisParams, materialize, n_skew
from .entropy import (
    SIGMA_MIN,
    Bitstream,
    EntropyParams,
    RangeDecoder,
    RangeEncoder,
    TableCache,
)
from .exceptions import BadSpec, DimensionMismatch, FormatError, RoundTripMismatch
from .lattice import LatticeBasis, LatticeKind, generator_matrix, make_basis, quantize_e8
from .rate_control import GainVector, scale_step


class QuantizerKind(enum.IntEnum):
    USQ = 0
    FIXED_E8 = 1
    SALVQ = 2

    @classmethod
    def parse(cls, value) -> "QuantizerKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, int):
            return cls(value)
        aliases = {"usq": cls.USQ, "e8": cls.FIXED_E8, "fixed_e8": cls.FIXED_E8, "salvq": cls.SALVQ}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise BadSpec(f"unknown quantizer {value!r}; expected usq, e8 or salvq") from None


@dataclass
class TrainedModel:
    kind: QuantizerKind
    basis_params: BasisParams
    entropy: EntropyParams
    gains: GainVector
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.kind = QuantizerKind.parse(self.kind)
        n = self.entropy.dim
        if self.basis_params.dim != n:
            raise DimensionMismatch("basis and entropy model dimensions disagree")
        if self.kind is QuantizerKind.FIXED_E8 and n % 8:
            raise BadSpec(f"FIXED_E8 needs a dimension divisible by 8, got {n}")

    @property
    def dim(self) -> int:
        return self.entropy.dim

    def step(self, target: int = 0) -> float:
        return scale_step(self.entropy.q_s, self.gains, target)

    def basis(self) -> LatticeBasis:
        """Lattice generator in feature units of one step."""
        if self.kind is QuantizerKind.SALVQ:
            return materialize(self.basis_params)
        if self.kind is QuantizerKind.FIXED_E8:
            G = generator_matrix(LatticeKind.GOSSET_E8, 8)
            return make_basis(block_diag(*([G] * (self.dim // 8))))
        return make_basis(np.eye(self.dim))

    # -- hard quantization --------------------------------------------------------

    def quantize(self, X, target: int = 0) -> np.ndarray:
        """Quantized latent in step units (``f_t`` hat).

        Integer for USQ/SALVQ; for FIXED_E8 the E8 points in standard
        coordinates (integers or half-integers).
        """
        X = as_matrix(X, self.dim)
        fc = (X - self.entropy.mu_g) / self.step(target)
        if self.kind is QuantizerKind.FIXED_E8:
            return quantize_e8(fc.reshape(-1, 8)).reshape(fc.shape)
        if self.kind is QuantizerKind.SALVQ:
            fac = materialize(self.basis_params)
            return np.rint(fc @ fac.inverse.T)
        return np.rint(fc)

    def reconstruct(self, latent, target: int = 0) -> np.ndarray:
        latent = as_matrix(latent, self.dim)
        step = self.step(target)
        if self.kind is QuantizerKind.SALVQ:
            return step * (latent @ materialize(self.basis_params).matrix.T) + self.entropy.mu_g
        return step * latent + self.entropy.mu_g

    # -- coding ---------------------------------------------------------------------

    def _scales(self, step_scale: float) -> np.ndarray:
        return np.maximum(self.entropy.sigma / (step_scale * self.entropy.q_s), SIGMA_MIN)

    def compress(self, X, target: int = 0) -> Bitstream:
        latent = self.quantize(X, target)
        gain = self.gains.gain(target)
        payload = _encode_latent(latent, self.kind, self._scales(gain))
        return Bitstream(
            self.dim, latent.size, gain, self.entropy.q_s, self.entropy.sigma.copy(),
            self.entropy.mu_g.copy(), self.basis().matrix.copy(), payload,
        )

    def decompress(self, stream: Bitstream) -> np.ndarray:
        self.check_stream(stream)
        latent = _decode_latent(stream.payload, self.kind, self._scales(stream.step_scale),
                                stream.count, self.dim)
        step = stream.step_scale * self.entropy.q_s
        if self.kind is QuantizerKind.SALVQ:
            return step * (latent @ materialize(self.basis_params).matrix.T) + self.entropy.mu_g
        return step * latent + self.entropy.mu_g

    def check_stream(self, stream: Bitstream):
        if stream.dim != self.dim or stream.count % max(self.dim, 1):
            raise FormatError("bitstream dimension does not match the model")
        if (stream.q_s != self.entropy.q_s
                or not np.array_equal(stream.sigma, self.entropy.sigma)
                or not np.array_equal(stream.mu_g, self.entropy.mu_g)):
            raise FormatError("bitstream was produced by a different model")

    def roundtrip(self, X, target: int = 0):
        """Compress and decompress; returns ``(stream, reconstruction)``.

        Raises :class:`RoundTripMismatch` unless the decoded reconstruction equals
        the encoder-side one bit for bit.
        """
        stream = self.compress(X, target)
        encoder_side = self.reconstruct(self.quantize(X, target), target)
        decoded = self.decompress(Bitstream.from_bytes(stream.to_bytes()))
        if decoded.shape != encoder_side.shape or not np.array_equal(decoded, encoder_side):
            raise RoundTripMismatch("decoded reconstruction differs from the encoder's")
        return stream, decoded


# -- latent <-> symbols ---------------------------------------------------------------


def _encode_latent(latent: np.ndarray, kind: QuantizerKind, scales: np.ndarray) -> bytes:
    n = scales.size
    tables = TableCache()
    enc = RangeEncoder()
    if kind is not QuantizerKind.FIXED_E8:
        per_dim = [tables(0.0, s) for s in scales]
        for row in latent.astype(np.int64).tolist():
            for k, table in zip(row, per_dim):
                enc.encode(k, table)
        return enc.finish()
    twice = np.rint(2.0 * latent).astype(np.int64).tolist()
    for row in twice:
        for b in range(0, n, 8):
            _encode_e8_block(enc, tables, row[b : b + 8], scales[b : b + 8])
    return enc.finish()


def _encode_e8_block(enc, tables, twice, s):
    # twice = 2 z: all even (D8 coset) or all odd (shifted coset)
    c = twice[0] & 1
    enc.encode(twice[0], tables(0.0, 2.0 * s[0]))
    total = (twice[0] - c) // 2
    for i in range(1, 7):
        k = (twice[i] - c) // 2
        enc.encode(k, tables(-0.5 * c, s[i]))
        total += k
    par = total & 1
    enc.encode((twice[7] - c - 2 * par) // 4, tables((-0.5 * c - par) / 2.0, s[7] / 2.0))


def _decode_latent(payload: bytes, kind: QuantizerKind, scales: np.ndarray, count: int,
                   n: int) -> np.ndarray:
    tables = TableCache()
    dec = RangeDecoder(payload)
    rows = count // n
    if kind is not QuantizerKind.FIXED_E8:
        per_dim = [tables(0.0, s) for s in scales]
        out = [dec.decode(per_dim[i % n]) for i in range(count)]
        dec.finish()
        return np.asarray(out, dtype=np.float64).reshape(rows, n)
    twice = []
    for _ in range(rows):
        for b in range(0, n, 8):
            twice.extend(_decode_e8_block(dec, tables, scales[b : b + 8]))
    dec.finish()
    return np.asarray(twice, dtype=np.float64).reshape(rows, n) / 2.0


def _decode_e8_block(dec, tables, s):
    first = dec.decode(tables(0.0, 2.0 * s[0]))
    c = first & 1
    out = [first]
    total = (first - c) // 2
    for i in range(1, 7):
        k = dec.decode(tables(-0.5 * c, s[i]))
        out.append(2 * k + c)
        total += k
    par = total & 1
    k = dec.decode(tables((-0.5 * c - par) / 2.0, s[7] / 2.0))
    out.append(4 * k + 2 * par + c)
    return out


# -- model file --------------------------------------------------------------------

MODEL_MAGIC = b"SLVM"
MODEL_VERSION = 1
_MODEL_HEAD = struct.Struct("<4sHHHH")


def model_to_bytes(model: TrainedModel) -> bytes:
    n = model.dim
    M = model.gains.size
    head = _MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, int(model.kind), n, M)
    bp, ep = model.basis_params, model.entropy
    body = np.concatenate([
        bp.skew_u, bp.skew_v, bp.log_sigma, ep.sigma, ep.mu_g, [ep.q_s],
        model.gains.log_gains, model.gains.lambdas,
    ]).astype("<f8")
    return head + body.tobytes()


def model_from_bytes(data: bytes) -> TrainedModel:
    if len(data) < _MODEL_HEAD.size or data[:4] != MODEL_MAGIC:
        raise FormatError("not an SLVM model file")
    _, version, kind, n, M = _MODEL_HEAD.unpack_from(data)
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported SLVM version {version}")
    k = n_skew(n)
    sizes = [k, k, n, n, n, 1, M, M]
    total = sum(sizes)
    if len(data) != _MODEL_HEAD.size + 8 * total:
        raise FormatError("SLVM file has the wrong length")
    body = np.frombuffer(data, dtype="<f8", offset=_MODEL_HEAD.size).astype(np.float64)
    parts = np.split(body, np.cumsum(sizes)[:-1])
    su, sv, ls, sigma, mu, qs, lg, lams = parts
    try:
        kind = QuantizerKind(kind)
    except ValueError:
        raise FormatError(f"unknown quantizer kind {kind}") from None
    return TrainedModel(kind, BasisParams(su, sv, ls), EntropyParams(sigma, mu, float(qs[0])),
                        GainVector(lg, lams))


def save_model(model: TrainedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
