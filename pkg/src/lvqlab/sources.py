"""Vector sources: synthetic AR(1) Gaussian vectors and ``LVQV`` vector files."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BadSpec, FormatError

TRAIN_FRACTION = 0.9
PEAK_STD_MULTIPLE = 4.0

VECTOR_MAGIC = b"LVQV"
VECTOR_VERSION = 1
_VEC_HEAD = struct.Struct("<4sHHQ")


@dataclass
class VectorSource:
    """A fixed set of feature vectors, split 90/10 by index into train/eval.

    ``kind`` is ``"ar1"`` (synthetic, generated on first access) or ``"file"``.
    """

    kind: str
    dim: int = 8
    rho: float = 0.0
    variance: float = 1.0
    count: int = 0
    seed: int = 0
    path: str | None = None
    _vectors: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def vectors(self) -> np.ndarray:
        if self._vectors is None:
            if self.kind == "ar1":
                self._vectors = _ar1_samples(self.dim, self.rho, self.variance, self.count, self.seed)
            else:
                self._vectors = read_vectors(self.path)
                self.count, self.dim = self._vectors.shape
        return self._vectors

    @property
    def n_train(self) -> int:
        return int(math.floor(TRAIN_FRACTION * self.vectors.shape[0]))

    def split(self, which: str = "train") -> np.ndarray:
        X = self.vectors
        if which == "train":
            return X[: self.n_train]
        if which == "eval":
            return X[self.n_train :]
        if which == "all":
            return X
        raise BadSpec(f"unknown split {which!r}")

    @property
    def peak(self) -> float:
        """PSNR peak: four source standard deviations."""
        if self.kind == "ar1":
            return PEAK_STD_MULTIPLE * math.sqrt(self.variance)
        return PEAK_STD_MULTIPLE * float(np.sqrt(np.mean(np.var(self.vectors, axis=0))))

    def describe(self) -> str:
        if self.kind == "ar1":
            return (f"ar1:n={self.dim},rho={self.rho:g},var={self.variance:g},"
                    f"count={self.count},seed={self.seed}")
        return f"file:{self.path}"


def ar1_covariance(dim: int, rho: float, variance: float) -> np.ndarray:
    idx = np.arange(dim)
    return variance * rho ** np.abs(idx[:, None] - idx[None, :])


def _ar1_samples(dim, rho, variance, count, seed) -> np.ndarray:
    L = np.linalg.cholesky(ar1_covariance(dim, rho, variance))
    rng = np.random.default_rng(seed)
    return rng.standard_normal((count, dim)) @ L.T


def gen_source(kind: str = "ar1", *, dim: int = 8, rho: float = 0.0, variance: float = 1.0,
               count: int = 100_000, seed: int = 0, path: str | None = None) -> VectorSource:
    if kind == "file":
        if not path:
            raise BadSpec("file source needs a path")
        return VectorSource("file", path=path)
    if kind != "ar1":
        raise BadSpec(f"unknown source kind {kind!r}")
    if dim < 1:
        raise BadSpec("dimension must be positive")
    if not abs(rho) < 1:
        raise BadSpec("AR(1) correlation must satisfy |rho| < 1")
    if not variance > 0:
        raise BadSpec("variance must be positive")
    if count < 1:
        raise BadSpec("count must be positive")
    return VectorSource("ar1", int(dim), float(rho), float(variance), int(count), int(seed))


def parse_source(text: str, seed: int = 0) -> VectorSource:
    """Parse ``ar1:n=8,rho=0.9,var=1,count=100000`` or ``file:PATH``."""
    kind, _, rest = text.partition(":")
    if kind == "file":
        return gen_source("file", path=rest)
    if kind != "ar1":
        raise BadSpec(f"unknown source {text!r}")
    names = {"n": ("dim", int), "dim": ("dim", int), "rho": ("rho", float),
             "var": ("variance", float), "variance": ("variance", float),
             "count": ("count", int), "seed": ("seed", int)}
    kwargs = {"seed": seed}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq or key.strip() not in names:
            raise BadSpec(f"bad source field {item!r}")
        name, conv = names[key.strip()]
        try:
            kwargs[name] = conv(value)
        except ValueError:
            raise BadSpec(f"bad value in source field {item!r}") from None
    return gen_source("ar1", **kwargs)


# -- LVQV vector files --------------------------------------------------------


def write_vectors(path, X) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise BadSpec("vectors must be a 2-D array")
    with open(path, "wb") as fh:
        fh.write(_VEC_HEAD.pack(VECTOR_MAGIC, VECTOR_VERSION, X.shape[1], X.shape[0]))
        fh.write(X.astype("<f4").tobytes())


def read_vectors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _VEC_HEAD.size or data[:4] != VECTOR_MAGIC:
        raise FormatError(f"{path} is not an LVQV vector file")
    _, version, dim, count = _VEC_HEAD.unpack_from(data)
    if version != VECTOR_VERSION:
        raise FormatError(f"unsupported LVQV version {version}")
    if len(data) != _VEC_HEAD.size + 4 * dim * count:
        raise FormatError(f"{path} has the wrong length for {count}x{dim} vectors")
    return np.frombuffer(data, dtype="<f4", offset=_VEC_HEAD.size).astype(np.float64).reshape(count, dim)
