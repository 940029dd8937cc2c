"""Scene-adaptive lattice vector quantization toolkit."""

from .basis import BasisParams, cayley_orthogonal, loss_and_grad, materialize
from .entropy import Bitstream, EntropyParams, decode, encode, pmf_discrete
from .estimator import LatticeQuantizer
from .exceptions import LVQError
from .lattice import LatticeBasis, LatticeKind, NamedLattice, babai_round, make_basis, nsm_estimate
from .model import QuantizerKind, TrainedModel, load_model, save_model
from .pipeline import RDCurve, RDPoint, bd_rate, evaluate, sweep, train
from .rate_control import GainVector
from .sources import VectorSource, gen_source, parse_source
from .training import TrainConfig, fit_quantizer

__version__ = "0.1.0"

__all__ = [
    "BasisParams", "Bitstream", "EntropyParams", "GainVector", "LVQError", "LatticeBasis",
    "LatticeKind", "LatticeQuantizer", "NamedLattice", "QuantizerKind", "RDCurve", "RDPoint",
    "TrainConfig", "TrainedModel", "VectorSource", "babai_round", "bd_rate", "cayley_orthogonal",
    "decode", "encode", "evaluate", "fit_quantizer", "gen_source", "load_model", "loss_and_grad",
    "make_basis", "materialize", "nsm_estimate", "parse_source", "pmf_discrete", "save_model",
    "sweep", "train",
]
