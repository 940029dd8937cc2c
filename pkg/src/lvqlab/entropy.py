"""Integrated-Gaussian probability model and a deterministic range coder.

The model gives each integer bin ``k`` (in units of the quantization step) the
mass of a Gaussian with mean ``c`` and scale ``s`` over ``[k - 1/2, k + 1/2)``,
i.e. a Gaussian convolved with a unit-width uniform and sampled on the grid.

The coder turns those masses into 16-bit integer frequency tables and drives a
64-bit carry-propagating range coder.  Only integers touch the coder state, so
payloads are bit-identical wherever the tables are.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtr

from .exceptions import AlphabetOverflow, CorruptStream, DimensionMismatch, EmptyInput, FormatError

SIGMA_MIN = 1e-6
FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS
P_MIN = 1.0 / FREQ_TOTAL
MIN_HALF_WIDTH = 32
MAX_HALF_WIDTH = 1 << 14

_LN2 = math.log(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class EntropyParams:
    """Per-dimension Gaussian scales, global mean and base quantization step."""

    sigma: np.ndarray
    mu_g: np.ndarray
    q_s: float = 1.0

    def __post_init__(self):
        self.sigma = np.maximum(np.asarray(self.sigma, dtype=np.float64).ravel(), SIGMA_MIN)
        self.mu_g = np.asarray(self.mu_g, dtype=np.float64).ravel()
        self.q_s = float(self.q_s)
        if self.sigma.shape != self.mu_g.shape:
            raise DimensionMismatch("sigma and mu_g must have the same length")
        if not self.q_s > 0:
            raise ValueError("q_s must be positive")

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @classmethod
    def default(cls, dim: int, q_s: float = 1.0) -> "EntropyParams":
        return cls(np.ones(dim), np.zeros(dim), q_s)

    def copy(self) -> "EntropyParams":
        return EntropyParams(self.sigma.copy(), self.mu_g.copy(), self.q_s)


# -- continuous model -----------------------------------------------------------


def log_bin_mass(x, scale, with_grad=False):
    """Natural log of the zero-mean bin mass ``Phi((x+1/2)/s) - Phi((x-1/2)/s)``.

    Evaluated on the lower tail (the mass is even in ``x``) with ``log_ndtr``
    so far-tail bins stay finite.  With ``with_grad`` also returns the partial
    derivatives with respect to ``x`` and ``scale``.
    """
    x = np.asarray(x, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    t = -np.abs(x)
    a = (t + 0.5) / scale
    b = (t - 0.5) / scale
    la = log_ndtr(a)
    lb = log_ndtr(b)
    with np.errstate(divide="ignore"):
        logp = la + np.log(-np.expm1(lb - la))
    if not with_grad:
        return logp
    # phi(a)/p and phi(b)/p in log space
    ra = np.exp(-0.5 * a * a - _HALF_LOG_2PI - logp)
    rb = np.exp(-0.5 * b * b - _HALF_LOG_2PI - logp)
    d_x = -np.sign(x) * (ra - rb) / scale
    d_scale = -(a * ra - b * rb) / scale
    return logp, d_x, d_scale


def bin_mass(k, mu, sigma, step):
    """Integrated-Gaussian mass of bin ``k`` for a value with mean ``mu`` and scale ``sigma``."""
    sigma = np.maximum(np.asarray(sigma, dtype=np.float64), SIGMA_MIN)
    x = (np.asarray(k, dtype=np.float64) * step - mu) / step
    return np.exp(log_bin_mass(x, sigma / step))


def pmf_discrete(k, mu, sigma, step):
    """Probability of integer bin ``k``; alias of :func:`bin_mass`.

    This is the exact model mass.  The mass the coder actually uses (floored at
    ``2**-16`` and renormalized to 16-bit integers) is :func:`coder_pmf`.
    """
    return bin_mass(k, mu, sigma, step)


def rate_relaxed(noisy_coords, sigma_steps):
    """Bits of the relaxed rate, summed over the last axis.

    ``noisy_coords`` are continuous coordinates in step units and
    ``sigma_steps`` the model scales in the same units.
    """
    x = np.asarray(noisy_coords, dtype=np.float64)
    s = np.maximum(np.asarray(sigma_steps, dtype=np.float64), SIGMA_MIN)
    if s.shape[-1] != x.shape[-1]:
        raise DimensionMismatch("noisy_coords and sigma_steps disagree in length")
    return -np.sum(log_bin_mass(x, s), axis=-1) / _LN2


def estimate_entropy(symbols) -> float:
    """Empirical Shannon entropy (bits/symbol) of a symbol sequence."""
    symbols = list(np.asarray(symbols).ravel().tolist())
    if not symbols:
        raise EmptyInput("cannot estimate the entropy of an empty sequence")
    n = len(symbols)
    h = 0.0
    for c in Counter(symbols).values():
        p = c / n
        h -= p * math.log2(p)
    return h + 0.0


# -- frequency tables --------------------------------------------------------------


@dataclass(frozen=True)
class FreqTable:
    """Integer CDF over ``[escape, lo, lo+1, ..., lo+2A]`` summing to ``FREQ_TOTAL``."""

    lo: int
    size: int  # number of in-window symbols
    cum: tuple  # len size + 2, cum[0] == 0, cum[-1] == FREQ_TOTAL

    def index(self, k: int) -> int:
        j = k - self.lo
        return j + 1 if 0 <= j < self.size else 0

    def symbol(self, j: int) -> int:
        return self.lo + j - 1


def build_table(center: float, scale: float) -> FreqTable:
    scale = max(float(scale), SIGMA_MIN)
    center = float(center)
    half = min(max(MIN_HALF_WIDTH, math.ceil(12.0 * scale)), MAX_HALF_WIDTH)
    kc = math.floor(center + 0.5)
    lo = kc - half
    size = 2 * half + 1
    edges = (np.arange(size + 1, dtype=np.float64) - half - 0.5 + (kc - center)) / scale
    # mass between consecutive edges, evaluated on whichever tail is accurate
    cdf_lo = ndtr(edges)
    sf = ndtr(-edges)
    mass = np.where(edges[1:] <= 0, cdf_lo[1:] - cdf_lo[:-1], sf[:-1] - sf[1:])
    mass = np.maximum(mass, 0.0)
    escape = max(cdf_lo[0] + sf[-1], 0.0)
    probs = np.concatenate(([escape], mass))
    budget = FREQ_TOTAL - probs.size
    freq = np.floor(probs / probs.sum() * budget).astype(np.int64) + 1
    freq[np.argmax(probs)] += FREQ_TOTAL - int(freq.sum())
    cum = np.concatenate(([0], np.cumsum(freq)))
    return FreqTable(lo, size, tuple(int(c) for c in cum))


class TableCache:
    """Memoizes frequency tables by (center, scale)."""

    def __init__(self):
        self._tables = {}

    def __call__(self, center: float, scale: float) -> FreqTable:
        key = (float(center), float(scale))
        table = self._tables.get(key)
        if table is None:
            table = self._tables[key] = build_table(*key)
        return table


def coder_pmf(k, mu, sigma, step) -> float:
    """Probability the range coder assigns to bin ``k`` (0 if ``k`` needs an escape)."""
    table = build_table(mu / step, max(sigma, SIGMA_MIN) / step)
    j = table.index(int(k))
    if j == 0:
        return 0.0
    return (table.cum[j + 1] - table.cum[j]) / FREQ_TOTAL


# -- range coder -----------------------------------------------------------------

_BITS = 64
_MASK = (1 << _BITS) - 1
_TOP = 1 << (_BITS - 8)
_SHIFT = _BITS - 8
_WINDOW = _BITS // 8
_ESCAPE_CHUNKS = 4


class RangeEncoder:
    """64-bit range encoder with byte-wise carry propagation."""

    def __init__(self):
        self.low = 0
        self.range = _MASK
        self._cache = 0
        self._cache_size = 1
        self._out = bytearray()
        self._used = False

    def _shift_low(self):
        low = self.low
        if low < (0xFF << _SHIFT) or low > _MASK:
            carry = low >> _BITS
            temp = self._cache
            out = self._out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self._cache_size -= 1
                if self._cache_size == 0:
                    break
            self._cache = (low >> _SHIFT) & 0xFF
        self._cache_size += 1
        self.low = (low << 8) & _MASK

    def encode_freq(self, start: int, size: int):
        self._used = True
        r = self.range >> FREQ_BITS
        self.low += start * r
        self.range = size * r
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode(self, k: int, table: FreqTable):
        j = table.index(k)
        cum = table.cum
        self.encode_freq(cum[j], cum[j + 1] - cum[j])
        if j == 0:
            if not -(1 << 63) <= k < (1 << 63):
                raise AlphabetOverflow(f"symbol {k} does not fit the 64-bit escape")
            v = k & _MASK
            for i in range(_ESCAPE_CHUNKS - 1, -1, -1):
                self.encode_freq((v >> (FREQ_BITS * i)) & (FREQ_TOTAL - 1), 1)

    def finish(self) -> bytes:
        """Flush and return the payload (empty if nothing was encoded)."""
        if not self._used:
            return b""
        # smallest multiple of 2**56 inside [low, low + range)
        self.low = -(-self.low // _TOP) * _TOP
        self._shift_low()
        self._shift_low()
        out = bytes(self._out)
        if out[0] != 0:
            raise AssertionError("range coder produced a non-zero lead byte")
        return out[1:]


class RangeDecoder:
    def __init__(self, payload: bytes):
        self._buf = payload
        self._pos = 0
        self.range = _MASK
        self.code = 0
        if payload:
            for _ in range(_WINDOW):
                self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        pos = self._pos
        self._pos += 1
        if pos < len(self._buf):
            return self._buf[pos]
        if pos >= len(self._buf) + _WINDOW - 1:
            raise CorruptStream("range decoder ran past the end of the payload")
        return 0

    def _decode_freq(self, cum) -> int:
        r = self.range >> FREQ_BITS
        value = self.code // r
        if value >= FREQ_TOTAL:
            raise CorruptStream("range decoder desynchronized")
        j = bisect_right(cum, value) - 1
        self.code -= cum[j] * r
        self.range = (cum[j + 1] - cum[j]) * r
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK
            self.range <<= 8
        return j

    def _decode_raw(self) -> int:
        r = self.range >> FREQ_BITS
        value = self.code // r
        if value >= FREQ_TOTAL:
            raise CorruptStream("range decoder desynchronized")
        self.code -= value * r
        self.range = r
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK
            self.range <<= 8
        return value

    def decode(self, table: FreqTable) -> int:
        if not self._buf:
            raise CorruptStream("empty payload")
        j = self._decode_freq(table.cum)
        if j:
            return table.symbol(j)
        v = 0
        for _ in range(_ESCAPE_CHUNKS):
            v = (v << FREQ_BITS) | self._decode_raw()
        return v - (1 << 64) if v >> 63 else v

    def finish(self):
        """Check that the payload was consumed exactly."""
        if self._buf and self._pos != len(self._buf) + _WINDOW - 1:
            raise CorruptStream(
                f"payload length {len(self._buf)} inconsistent with decoded content"
            )


# -- bitstream container ----------------------------------------------------------

BITSTREAM_MAGIC = b"SLVQ"
BITSTREAM_VERSION = 1
_HEAD = struct.Struct("<4sHHQdd")


@dataclass
class Bitstream:
    """Header (model metadata) plus range-coder payload."""

    dim: int
    count: int  # number of coded integer symbols
    step_scale: float
    q_s: float
    sigma: np.ndarray
    mu_g: np.ndarray
    basis: np.ndarray
    payload: bytes = field(default=b"", repr=False)

    def to_bytes(self) -> bytes:
        n = self.dim
        head = _HEAD.pack(BITSTREAM_MAGIC, BITSTREAM_VERSION, n, self.count, self.step_scale, self.q_s)
        body = np.concatenate(
            [np.ravel(self.sigma), np.ravel(self.mu_g), np.asarray(self.basis).reshape(n * n)]
        ).astype("<f8")
        return head + body.tobytes() + bytes(self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < _HEAD.size or data[:4] != BITSTREAM_MAGIC:
            raise FormatError("not an SLVQ bitstream")
        magic, version, n, count, step_scale, q_s = _HEAD.unpack_from(data)
        if version != BITSTREAM_VERSION:
            raise FormatError(f"unsupported SLVQ version {version}")
        nfloat = 2 * n + n * n
        end = _HEAD.size + 8 * nfloat
        if len(data) < end:
            raise FormatError("truncated SLVQ header")
        body = np.frombuffer(data, dtype="<f8", count=nfloat, offset=_HEAD.size).astype(np.float64)
        return cls(
            n, count, step_scale, q_s, body[:n].copy(), body[n : 2 * n].copy(),
            body[2 * n :].reshape(n, n).copy(), bytes(data[end:]),
        )

    @property
    def payload_bits(self) -> int:
        return 8 * len(self.payload)


# -- factorized symbol coding -------------------------------------------------------


def _symbol_scales(params: EntropyParams, step_scale: float) -> np.ndarray:
    return np.maximum(params.sigma / (step_scale * params.q_s), SIGMA_MIN)


def encode(symbols, params: EntropyParams, step_scale: float = 1.0, basis=None) -> Bitstream:
    """Range-code integer symbols; symbol ``i`` uses dimension ``i % dim``'s model."""
    arr = np.asarray(symbols)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.rint(arr)):
            raise ValueError("symbols must be integers")
    flat = [int(v) for v in arr.ravel().tolist()]
    n = params.dim
    scales = _symbol_scales(params, step_scale)
    tables = TableCache()
    per_dim = [tables(0.0, scales[i]) for i in range(n)]
    enc = RangeEncoder()
    for i, k in enumerate(flat):
        enc.encode(k, per_dim[i % n])
    return Bitstream(
        n, len(flat), float(step_scale), params.q_s, params.sigma.copy(), params.mu_g.copy(),
        np.eye(n) if basis is None else np.asarray(basis, dtype=np.float64), enc.finish(),
    )


def decode(stream: Bitstream, params: EntropyParams, step_scale: float, count: int) -> np.ndarray:
    n = params.dim
    scales = _symbol_scales(params, step_scale)
    tables = TableCache()
    per_dim = [tables(0.0, scales[i]) for i in range(n)]
    dec = RangeDecoder(stream.payload)
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        out[i] = dec.decode(per_dim[i % n])
    dec.finish()
    return out
