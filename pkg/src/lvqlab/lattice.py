"""Lattice bases, nearest-point quantizers and Voronoi-cell geometry.

Convention: basis vectors are the *columns* of the basis matrix, so a lattice
point with integer coordinates ``u`` sits at ``z = B @ u``.  All rounding uses
round-half-even (``numpy.rint``).

Every quantizer has a batched form operating on arrays of shape ``(m, n)``
(``quantize_*``) and a single-vector form returning a :class:`LatticePoint`
(``nearest_point_*``).
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from ._validation import as_matrix, as_vector
from .exceptions import DimensionMismatch, NonFinite, SearchTooLarge, SingularBasis

EPS_DET = 1e-9
MAX_BRUTE_FORCE_CANDIDATES = 10**7


@dataclass(frozen=True, eq=False)
class LatticeBasis:
    """Invertible basis matrix with its inverse cached at construction."""

    matrix: np.ndarray
    inverse: np.ndarray

    def __post_init__(self):
        for a in (self.matrix, self.inverse):
            a.setflags(write=False)
        resid = np.abs(self.matrix @ self.inverse - np.eye(self.dim)).max()
        if resid > 1e-8:
            raise SingularBasis(f"basis inverse is inaccurate (residual {resid:.2e})")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))


@dataclass(frozen=True, eq=False)
class LatticePoint:
    coords: np.ndarray  # integer coordinates u in the basis
    embedding: np.ndarray  # z = B u


def make_basis(matrix) -> LatticeBasis:
    """Build a :class:`LatticeBasis`, rejecting non-finite or near-singular input."""
    B = np.array(matrix, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] == 0:
        raise DimensionMismatch(f"basis must be a non-empty square matrix, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise NonFinite("basis matrix contains NaN or Inf")
    det = np.linalg.det(B)
    if not abs(det) > EPS_DET:
        raise SingularBasis(f"|det B| = {abs(det):.3e} <= {EPS_DET}")
    return LatticeBasis(B, np.linalg.inv(B))


def cell_volume(basis: LatticeBasis) -> float:
    return abs(basis.det)


class LatticeKind(enum.Enum):
    INTEGER_Zn = "zn"
    CHECKERBOARD_Dn = "dn"
    GOSSET_E8 = "e8"
    HEXAGONAL_A2 = "a2"


@dataclass(frozen=True)
class NamedLattice:
    """A classical lattice with a fast exact nearest-point quantizer."""

    kind: LatticeKind
    dim: int

    def __post_init__(self):
        kind = LatticeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is LatticeKind.GOSSET_E8 and self.dim != 8:
            raise DimensionMismatch("E8 lives in dimension 8")
        if kind is LatticeKind.HEXAGONAL_A2 and self.dim != 2:
            raise DimensionMismatch("A2 lives in dimension 2")
        if kind is LatticeKind.CHECKERBOARD_Dn and self.dim < 2:
            raise DimensionMismatch("Dn requires n >= 2")
        if self.dim < 1:
            raise DimensionMismatch("dimension must be positive")

    @classmethod
    def from_name(cls, name: str, dim: int | None = None) -> "NamedLattice":
        kind = LatticeKind(name.lower())
        if dim is None:
            dim = {LatticeKind.GOSSET_E8: 8, LatticeKind.HEXAGONAL_A2: 2}.get(kind)
            if dim is None:
                raise DimensionMismatch(f"{name} needs an explicit dimension")
        return cls(kind, int(dim))

    def basis(self) -> LatticeBasis:
        return make_basis(generator_matrix(self.kind, self.dim))

    def quantize(self, Y) -> np.ndarray:
        """Exact nearest lattice points (embeddings) for the rows of ``Y``."""
        return _QUANTIZERS[self.kind](as_matrix(Y, self.dim))


def generator_matrix(kind, dim: int) -> np.ndarray:
    """Column generator matrix for a named lattice."""
    kind = LatticeKind(kind)
    if kind is LatticeKind.INTEGER_Zn:
        return np.eye(dim)
    if kind is LatticeKind.CHECKERBOARD_Dn:
        # columns 2e_1, e_2 - e_1, ..., e_n - e_{n-1}
        G = np.eye(dim)
        G[0, 0] = 2.0
        for j in range(1, dim):
            G[j - 1, j] = -1.0
        return G
    if kind is LatticeKind.GOSSET_E8:
        # Fundamental-weight basis: the rows of B^-1 are the simple roots, so
        # Babai coordinates are within 1 of the nearest point's coordinates.
        roots = np.zeros((8, 8))
        roots[:, 0] = 0.5 * np.array([1, -1, -1, -1, -1, -1, -1, 1])
        roots[0, 1] = roots[1, 1] = 1.0
        for j in range(2, 8):
            roots[j - 2, j] = -1.0
            roots[j - 1, j] = 1.0
        return np.rint(2.0 * np.linalg.inv(roots).T) / 2.0
    return np.array([[1.0, 0.5], [0.0, math.sqrt(3.0) / 2.0]])


# -- batched exact quantizers -------------------------------------------------


def quantize_zn(Y) -> np.ndarray:
    return np.rint(np.asarray(Y, dtype=np.float64))


def quantize_dn(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[-1] < 2:
        raise DimensionMismatch("Dn requires n >= 2")
    Y2 = Y.reshape(-1, Y.shape[-1])
    f = np.rint(Y2)
    odd = (f.sum(axis=1) % 2) != 0
    if np.any(odd):
        rows = np.nonzero(odd)[0]
        diff = Y2[rows] - f[rows]
        k = np.argmax(np.abs(diff), axis=1)
        d = diff[np.arange(rows.size), k]
        # move to the second-nearest integer; an exact integer moves up
        f[rows, k] += np.where(d >= 0, 1.0, -1.0)
    return f.reshape(Y.shape)


def quantize_e8(Y) -> np.ndarray:
    """Nearest points of E8 = D8 u (D8 + 1/2); ties go to the D8 coset."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[-1] != 8:
        raise DimensionMismatch("E8 quantizer needs 8-dimensional input")
    c0 = quantize_dn(Y)
    c1 = quantize_dn(Y - 0.5) + 0.5
    d0 = np.sum((Y - c0) ** 2, axis=-1)
    d1 = np.sum((Y - c1) ** 2, axis=-1)
    return np.where((d1 < d0)[..., None], c1, c0)


_A2_BASIS = None


def _a2_basis() -> LatticeBasis:
    global _A2_BASIS
    if _A2_BASIS is None:
        _A2_BASIS = make_basis(generator_matrix(LatticeKind.HEXAGONAL_A2, 2))
    return _A2_BASIS


_NEIGHBOURS_2D = np.array(list(itertools.product((-1, 0, 1), repeat=2)), dtype=np.float64)


def quantize_a2(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[-1] != 2:
        raise DimensionMismatch("A2 quantizer needs 2-dimensional input")
    basis = _a2_basis()
    Y2 = Y.reshape(-1, 2)
    u0 = np.rint(Y2 @ basis.inverse.T)
    cand = u0[:, None, :] + _NEIGHBOURS_2D[None, :, :]  # lexicographic order
    emb = cand @ basis.matrix.T
    dist = np.sum((Y2[:, None, :] - emb) ** 2, axis=-1)
    best = np.argmin(dist, axis=1)
    return emb[np.arange(Y2.shape[0]), best].reshape(Y.shape)


_QUANTIZERS = {
    LatticeKind.INTEGER_Zn: quantize_zn,
    LatticeKind.CHECKERBOARD_Dn: quantize_dn,
    LatticeKind.GOSSET_E8: quantize_e8,
    LatticeKind.HEXAGONAL_A2: quantize_a2,
}


def babai_coords(basis: LatticeBasis, Y) -> np.ndarray:
    """Integer Babai-rounding coordinates ``rint(B^-1 y)`` for each row of ``Y``."""
    Y = as_matrix(Y, basis.dim)
    return np.rint(Y @ basis.inverse.T)


def quantize_babai(basis: LatticeBasis, Y) -> np.ndarray:
    return babai_coords(basis, Y) @ basis.matrix.T


# -- single-vector API ----------------------------------------------------------


def _point(basis: LatticeBasis, z: np.ndarray) -> LatticePoint:
    u = np.rint(basis.inverse @ z).astype(np.int64)
    return LatticePoint(u, basis.matrix @ u)


def babai_round(basis: LatticeBasis, y) -> LatticePoint:
    y = as_vector(y, basis.dim)
    u = np.rint(basis.inverse @ y)
    return LatticePoint(u.astype(np.int64), basis.matrix @ u)


def nearest_point_zn(y) -> LatticePoint:
    y = as_vector(y)
    u = np.rint(y)
    return LatticePoint(u.astype(np.int64), u)


def nearest_point_dn(y) -> LatticePoint:
    y = as_vector(y)
    if y.shape[0] < 2:
        raise DimensionMismatch("Dn requires n >= 2")
    z = quantize_dn(y)
    return _point(NamedLattice(LatticeKind.CHECKERBOARD_Dn, y.shape[0]).basis(), z)


_E8_BASIS = None


def nearest_point_e8(y) -> LatticePoint:
    global _E8_BASIS
    y = as_vector(y, 8)
    if _E8_BASIS is None:
        _E8_BASIS = make_basis(generator_matrix(LatticeKind.GOSSET_E8, 8))
    return _point(_E8_BASIS, quantize_e8(y))


def nearest_point_a2(y) -> LatticePoint:
    y = as_vector(y, 2)
    return _point(_a2_basis(), quantize_a2(y))


# -- brute-force oracle ----------------------------------------------------------


def brute_force_coords(basis: LatticeBasis, Y, coord_radius: int) -> np.ndarray:
    """Exhaustive nearest-point search in the box ``rint(B^-1 y) +- coord_radius``.

    Returns integer coordinates (float array) for each row of ``Y``.  Ties are
    broken toward the lexicographically smallest coordinate vector.  Box
    candidates whose offset from the Babai point is longer than twice the Babai
    error are skipped; they can never beat the Babai point itself, so this
    pruning does not change the result.
    """
    n = basis.dim
    r = int(coord_radius)
    if r < 0:
        raise ValueError("coord_radius must be non-negative")
    if (2 * r + 1) ** n > MAX_BRUTE_FORCE_CANDIDATES:
        raise SearchTooLarge(f"{(2 * r + 1) ** n} candidates exceed {MAX_BRUTE_FORCE_CANDIDATES}")
    Y = as_matrix(Y, n)
    B = basis.matrix

    offsets = np.array(list(itertools.product(range(-r, r + 1), repeat=n)), dtype=np.float64)
    emb = offsets @ B.T
    norms = np.sqrt(np.sum(emb**2, axis=1))
    order = np.argsort(norms, kind="stable")
    offsets, emb, norms = offsets[order], emb[order], norms[order]
    lex_rank = order  # position in itertools.product order is lexicographic
    emb_sq = norms**2

    U0 = np.rint(Y @ basis.inverse.T)
    R0 = Y - U0 @ B.T
    r0_sq = np.sum(R0**2, axis=1)
    out = np.empty_like(U0)

    by_err = np.argsort(r0_sq)
    chunk = 128
    for start in range(0, Y.shape[0], chunk):
        idx = by_err[start : start + chunk]
        bound = 2.0 * math.sqrt(r0_sq[idx].max()) + 1e-9
        k = int(np.searchsorted(norms, bound, side="right"))
        # squared distance minus the per-row constant |r0|^2
        D = R0[idx] @ emb[:k].T
        D *= -2.0
        D += emb_sq[None, :k]
        best = np.argmin(D, axis=1)
        dmin = D[np.arange(idx.size), best][:, None]
        tol = 1e-9 * (1.0 + r0_sq[idx, None])
        near = D <= dmin + tol
        tied = np.nonzero(near.sum(axis=1) > 1)[0]
        for t in tied:
            cand = np.nonzero(near[t])[0]
            best[t] = cand[np.argmin(lex_rank[cand])]
        out[idx] = U0[idx] + offsets[best]
    return out


def brute_force_nearest(basis: LatticeBasis, y, coord_radius: int) -> LatticePoint:
    y = as_vector(y, basis.dim)
    u = brute_force_coords(basis, y[None, :], coord_radius)[0]
    return LatticePoint(u.astype(np.int64), basis.matrix @ u)


# -- normalized second moment --------------------------------------------------


class NSMEstimate(NamedTuple):
    value: float
    stderr: float
    samples: int


def nsm_estimate(
    lattice: Union[LatticeBasis, NamedLattice], samples: int, seed: int, chunk: int = 1 << 17
) -> NSMEstimate:
    """Monte Carlo normalized second moment with its standard error.

    Points are drawn uniformly from one fundamental parallelepiped ``B w``,
    ``w ~ U[0,1)^n``.  A :class:`NamedLattice` uses its exact quantizer, so the
    estimate is the Voronoi-cell NSM; a plain :class:`LatticeBasis` uses
    Babai rounding and therefore measures the Babai (parallelepiped) cell.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if isinstance(lattice, NamedLattice):
        basis = lattice.basis()
        quantize = lattice.quantize
    else:
        basis = lattice
        quantize = lambda X: quantize_babai(basis, X)  # noqa: E731
    n = basis.dim
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)

    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        X = rng.random((m, n)) @ basis.matrix.T
        err = np.sum((X - quantize(X)) ** 2, axis=1)
        total += float(err.sum())
        total_sq += float(np.dot(err, err))
        done += m
    norm = n * cell_volume(basis) ** (2.0 / n)
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    return NSMEstimate(mean / norm, math.sqrt(var / samples) / norm, samples)


def nsm_monte_carlo(lattice: Union[LatticeBasis, NamedLattice], samples: int, seed: int) -> float:
    return nsm_estimate(lattice, samples, seed).value
