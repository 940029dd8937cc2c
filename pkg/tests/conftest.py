import numpy as np
import pytest

from lvqlab.pipeline import evaluate, sweep, train
from lvqlab.sources import gen_source
from lvqlab.training import TrainConfig

# Desk-scale R-D setup shared by the pipeline and acceptance tests.
SWEEP_LAMBDAS = (0.002, 0.004, 0.008, 0.015, 0.025)
MULTI_LAMBDAS = (0.002, 0.004, 0.006, 0.008)
SWEEP_ITERS = 3000
MULTI_ITERS = 6000
SOURCE_COUNT = 20000

ACCEPTANCE_RESULTS = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ar1_source():
    return gen_source("ar1", dim=8, rho=0.9, variance=1.0, count=SOURCE_COUNT, seed=7)


@pytest.fixture(scope="session")
def iid_source():
    return gen_source("ar1", dim=8, rho=0.0, variance=1.0, count=SOURCE_COUNT, seed=8)


def _sweep(source, kind, iters=SWEEP_ITERS, lambdas=SWEEP_LAMBDAS):
    config = TrainConfig(lambdas=(lambdas[0],), iterations=iters, seed=1)
    return sweep(source, lambdas, kind, config, split="train")


@pytest.fixture(scope="session")
def ar1_curves(ar1_source):
    return {kind: _sweep(ar1_source, kind) for kind in ("usq", "e8", "salvq")}


@pytest.fixture(scope="session")
def iid_curves(iid_source):
    return {kind: _sweep(iid_source, kind, iters=2000) for kind in ("usq", "e8")}


@pytest.fixture(scope="session")
def multirate(ar1_source):
    """One M=4 variable-rate SALVQ model and its four single-rate counterparts."""
    config = TrainConfig(lambdas=MULTI_LAMBDAS, iterations=MULTI_ITERS, seed=1)
    model = train(ar1_source, config, "salvq")
    single = _sweep(ar1_source, "salvq", lambdas=MULTI_LAMBDAS)
    points = [evaluate(model, ar1_source, t, "train") for t in range(len(MULTI_LAMBDAS))]
    return model, points, single
