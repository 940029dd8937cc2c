"""End-to-end rate-distortion experiments: train, evaluate, sweep, BD-rate."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import BadSpec, FormatError, InsufficientOverlap, TooFewPoints
from .model import QuantizerKind, TrainedModel
from .sources import VectorSource
from .training import TrainConfig, fit_quantizer

logger = logging.getLogger(__name__)

CSV_HEADER = ("lambda", "target", "bits_per_vector", "mse", "psnr_db")
MIN_BD_POINTS = 4
MIN_OVERLAP_DB = 0.5


@dataclass(frozen=True)
class RDPoint:
    bits_per_vector: float
    mse: float
    psnr_db: float
    lmbda: float = float("nan")
    target: int = 0


class RDCurve(list):
    """RD points kept sorted by ascending rate."""

    def __init__(self, points=()):
        super().__init__(sorted(points, key=lambda p: p.bits_per_vector))

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.bits_per_vector for p in self])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr_db for p in self])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for p in self:
            w.writerow([repr(float(p.lmbda)), p.target, repr(float(p.bits_per_vector)),
                        repr(float(p.mse)), repr(float(p.psnr_db))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RDCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(c.strip() for c in rows[0]) != CSV_HEADER:
            raise FormatError(f"RD curve CSV must start with header {','.join(CSV_HEADER)}")
        points = []
        for row in rows[1:]:
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise FormatError(f"malformed RD curve row {row!r}")
            try:
                lam, target, bits, mse, psnr = float(row[0]), int(row[1]), *map(float, row[2:])
            except ValueError:
                raise FormatError(f"malformed RD curve row {row!r}") from None
            points.append(RDPoint(bits, mse, psnr, lam, target))
        return cls(points)


def psnr(mse: float, peak: float) -> float:
    return 10.0 * math.log10(peak * peak / mse) if mse > 0 else float("inf")


def train(source: VectorSource, config: TrainConfig, quantizer_kind="salvq") -> TrainedModel:
    """Fit a model on the training split of ``source``."""
    kind = QuantizerKind.parse(quantizer_kind)
    if kind is QuantizerKind.FIXED_E8 and source.dim % 8:
        raise BadSpec(f"FIXED_E8 needs a dimension divisible by 8, got {source.dim}")
    logger.info("training %s on %s, lambdas=%s", kind.name, source.describe(), config.lambdas)
    return fit_quantizer(source.split("train"), config, kind)


def evaluate(model: TrainedModel, source: VectorSource, target: int = 0,
             split: str = "eval") -> RDPoint:
    """Hard-quantize, range-code and decode one split; rate is measured payload bits."""
    X = source.split(split)
    stream, recon = model.roundtrip(X, target)
    mse = float(np.mean((X - recon) ** 2))
    bits = stream.payload_bits / X.shape[0]
    return RDPoint(bits, mse, psnr(mse, source.peak), float(model.gains.lambdas[target]), target)


def evaluate_targets(model: TrainedModel, source: VectorSource, split: str = "eval") -> RDCurve:
    return RDCurve(evaluate(model, source, t, split) for t in range(model.gains.size))


def _sweep_one(args):
    source, config, kind, split = args
    model = train(source, config, kind)
    return evaluate(model, source, 0, split)


def sweep(source: VectorSource, lambdas, quantizer_kind="salvq", config: TrainConfig | None = None,
          split: str = "train", jobs: int = 1) -> RDCurve:
    """Train one single-rate model per lambda and evaluate each."""
    lambdas = [float(v) for v in lambdas]
    if len(set(lambdas)) != len(lambdas):
        raise BadSpec("duplicate lambda values in sweep")
    base = config or TrainConfig()
    tasks = [(source, replace(base, lambdas=(lam,)), quantizer_kind, split) for lam in lambdas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_sweep_one, tasks))
    else:
        points = [_sweep_one(t) for t in tasks]
    return RDCurve(points)


def bd_rate(anchor, test) -> float:
    """Bjontegaard delta rate (percent) of ``test`` relative to ``anchor``.

    Cubic least-squares fits of log10(rate) against PSNR are integrated over the
    common PSNR range.  Negative means ``test`` needs fewer bits.
    """
    anchor, test = RDCurve(anchor), RDCurve(test)
    if len(anchor) < MIN_BD_POINTS or len(test) < MIN_BD_POINTS:
        raise TooFewPoints(f"BD-rate needs at least {MIN_BD_POINTS} points per curve")
    lo = max(anchor.psnrs.min(), test.psnrs.min())
    hi = min(anchor.psnrs.max(), test.psnrs.max())
    if hi - lo < MIN_OVERLAP_DB:
        raise InsufficientOverlap(f"PSNR ranges overlap by {hi - lo:.3f} dB < {MIN_OVERLAP_DB} dB")
    avg = []
    for curve in (anchor, test):
        poly = np.polyint(np.polyfit(curve.psnrs, np.log10(curve.rates), 3))
        avg.append((np.polyval(poly, hi) - np.polyval(poly, lo)) / (hi - lo))
    return 100.0 * (10.0 ** (avg[1] - avg[0]) - 1.0)
