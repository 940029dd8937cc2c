"""Command-line interface.

Machine-readable CSV goes to stdout; the resolved configuration and all
diagnostics go to stderr.  Option values resolve as: command-line flag, then
``--config`` file (``key=value`` lines), then the ``LVQLAB_SEED`` environment
variable (seed only), then built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .entropy import Bitstream
from .exceptions import (
    BadSpec,
    CorruptStream,
    FormatError,
    IndexOutOfRange,
    LVQError,
    NonFinite,
    RoundTripMismatch,
)
from .lattice import NamedLattice, nsm_estimate
from .model import QuantizerKind, load_model, save_model
from .pipeline import RDCurve, bd_rate, evaluate, sweep, train
from .sources import parse_source, read_vectors, write_vectors
from .training import TrainConfig

log = logging.getLogger("lvqlab")

DEFAULTS = {
    "quantizer": "salvq",
    "lambda": None,
    "lambdas": None,
    "iters": 4000,
    "lr": 0.01,
    "batch_size": 256,
    "seed": 0,
    "target": None,
    "split": "eval",
    "jobs": 1,
    "samples": 1_000_000,
}
_TYPES = {"iters": int, "lr": float, "batch_size": int, "seed": int, "jobs": int,
          "samples": int, "target": int, "lambda": float}


class UsageError(Exception):
    pass


def _read_config(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, keys):
    """Fill unset options of ``args`` from config file, environment and defaults."""
    cfg = _read_config(args.config) if getattr(args, "config", None) else {}
    env_seed = os.environ.get("LVQLAB_SEED")
    for key in keys:
        if getattr(args, key, None) is not None:
            continue
        if key in cfg:
            value = cfg[key]
        elif key == "seed" and env_seed is not None:
            value = env_seed
        else:
            value = DEFAULTS.get(key)
        if value is not None and key in _TYPES:
            try:
                value = _TYPES[key](value)
            except ValueError:
                raise UsageError(f"bad value for {key}: {value!r}") from None
        setattr(args, key, value)
    shown = " ".join(f"{k}={getattr(args, k)}" for k in sorted(vars(args)) if k != "func")
    print(f"# lvqlab {args.command} {shown}", file=sys.stderr)


def _lambdas(args):
    if args.lambdas:
        text = args.lambdas if isinstance(args.lambdas, str) else ",".join(map(str, args.lambdas))
        try:
            return tuple(float(v) for v in text.split(",") if v.strip())
        except ValueError:
            raise UsageError(f"bad --lambdas value {text!r}") from None
    if args.__dict__.get("lambda") is not None:
        return (float(args.__dict__["lambda"]),)
    raise UsageError("one of --lambda or --lambdas is required")


def _train_config(args, lambdas):
    return TrainConfig(lambdas=lambdas, iterations=args.iters, batch_size=args.batch_size,
                       learning_rate=args.lr, seed=args.seed)


# -- subcommands ---------------------------------------------------------------------


def cmd_train(args):
    _resolve(args, ["quantizer", "lambda", "lambdas", "iters", "lr", "batch_size", "seed"])
    kind = QuantizerKind.parse(args.quantizer)
    source = parse_source(args.source, seed=args.seed)
    if kind is QuantizerKind.FIXED_E8 and source.dim % 8:
        raise UsageError(f"--quantizer e8 needs a dimension divisible by 8 (got n={source.dim})")
    model = train(source, _train_config(args, _lambdas(args)), kind)
    save_model(model, args.out)
    log.info("wrote %s", args.out)


def cmd_gen(args):
    _resolve(args, ["seed"])
    source = parse_source(args.source, seed=args.seed)
    write_vectors(args.out, source.vectors)
    log.info("wrote %d x %d vectors to %s", *source.vectors.shape, args.out)


def cmd_compress(args):
    _resolve(args, ["target"])
    model = load_model(args.model)
    target = 0 if args.target is None else args.target
    if not 0 <= target < model.gains.size:
        raise UsageError(f"--target {target} outside [0, {model.gains.size})")
    X = read_vectors(args.input)
    if X.shape[1] != model.dim:
        raise UsageError(f"vector dimension {X.shape[1]} does not match model dimension {model.dim}")
    stream, _ = model.roundtrip(X, target)
    data = stream.to_bytes()
    with open(args.out, "wb") as fh:
        fh.write(data)
    log.info("%d vectors -> %d bytes (%d payload)", X.shape[0], len(data), len(stream.payload))


def cmd_decompress(args):
    _resolve(args, [])
    model = load_model(args.model)
    with open(args.input, "rb") as fh:
        stream = Bitstream.from_bytes(fh.read())
    recon = model.decompress(stream)
    write_vectors(args.out, recon)
    log.info("decoded %d vectors", recon.shape[0])


def cmd_eval(args):
    _resolve(args, ["target", "split", "seed"])
    model = load_model(args.model)
    source = parse_source(args.source, seed=args.seed)
    targets = range(model.gains.size) if args.target is None else [args.target]
    points = []
    for t in targets:
        if not 0 <= t < model.gains.size:
            raise UsageError(f"--target {t} outside [0, {model.gains.size})")
        points.append(evaluate(model, source, t, args.split))
    sys.stdout.write(RDCurve(points).to_csv())


def cmd_sweep(args):
    _resolve(args, ["quantizer", "lambdas", "iters", "lr", "batch_size", "seed", "jobs"])
    args.split = args.split or "train"
    source = parse_source(args.source, seed=args.seed)
    if QuantizerKind.parse(args.quantizer) is QuantizerKind.FIXED_E8 and source.dim % 8:
        raise UsageError(f"--quantizer e8 needs a dimension divisible by 8 (got n={source.dim})")
    lambdas = _lambdas(args)
    if len(set(lambdas)) != len(lambdas):
        raise UsageError("duplicate lambda values")
    config = _train_config(args, (lambdas[0],))
    curve = sweep(source, sorted(lambdas), args.quantizer, config, split=args.split, jobs=args.jobs)
    sys.stdout.write(curve.to_csv())


def cmd_bdrate(args):
    _resolve(args, [])
    curves = []
    for path in (args.anchor, args.test):
        with open(path) as fh:
            curves.append(RDCurve.from_csv(fh.read()))
    value = bd_rate(*curves) + 0.0
    sys.stdout.write(f"bd_rate\n{value:.2f}%\n")


def cmd_nsm(args):
    _resolve(args, ["seed"])
    lattice = NamedLattice.from_name(args.lattice, args.dim)
    est = nsm_estimate(lattice, args.samples, args.seed)
    sys.stdout.write("lattice,dim,samples,nsm,stderr\n")
    sys.stdout.write(f"{lattice.kind.value},{lattice.dim},{est.samples},{est.value:.6f},{est.stderr:.6f}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lvqlab", description="Lattice vector quantization lab")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key=value file with option defaults")
        return p

    def training_flags(p):
        p.add_argument("--quantizer", choices=["usq", "e8", "salvq"])
        p.add_argument("--iters", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--seed", type=int)

    p = add("train", cmd_train, "train a model and write an SLVM file")
    p.add_argument("--source", required=True, help="ar1:n=8,rho=0.9,var=1,count=100000 | file:PATH")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--lambda", type=float, dest="lambda")
    group.add_argument("--lambdas", help="comma-separated, trains a variable-rate model")
    training_flags(p)
    p.add_argument("--out", required=True)

    p = add("gen", cmd_gen, "write source vectors to an LVQV file")
    p.add_argument("--source", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("compress", cmd_compress, "compress an LVQV file to an SLVQ bitstream")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--target", type=int)
    p.add_argument("--out", required=True)

    p = add("decompress", cmd_decompress, "decode an SLVQ bitstream to an LVQV file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "evaluate a model; CSV on stdout")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", type=int)
    p.add_argument("--split", choices=["train", "eval", "all"])
    p.add_argument("--seed", type=int)

    p = add("sweep", cmd_sweep, "train and evaluate one model per lambda; CSV on stdout")
    p.add_argument("--source", required=True)
    p.add_argument("--lambdas")
    training_flags(p)
    p.add_argument("--split", choices=["train", "eval", "all"])
    p.add_argument("--jobs", type=int)

    p = add("bdrate", cmd_bdrate, "BD-rate of TEST against ANCHOR curve CSVs")
    p.add_argument("anchor")
    p.add_argument("test")

    p = add("nsm", cmd_nsm, "Monte Carlo normalized second moment")
    p.add_argument("lattice", choices=["zn", "dn", "e8", "a2"])
    p.add_argument("dim", type=int, nargs="?")
    p.add_argument("samples", type=int, nargs="?", default=DEFAULTS["samples"])
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (UsageError, BadSpec, FormatError, IndexOutOfRange) as exc:
        parser.print_usage(sys.stderr)
        print(f"lvqlab: error: {exc}", file=sys.stderr)
        return 2
    except (NonFinite, CorruptStream, RoundTripMismatch) as exc:
        print(f"lvqlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except LVQError as exc:
        print(f"lvqlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"lvqlab: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
