import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lvqlab import LatticeQuantizer
from lvqlab.exceptions import BadSpec, DimensionMismatch


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    L = np.linalg.cholesky(0.9 ** np.abs(np.subtract.outer(np.arange(8), np.arange(8))))
    return rng.standard_normal((3000, 8)) @ L.T


def test_get_params_and_clone():
    q = LatticeQuantizer(quantizer="e8", lmbda=0.01, n_iter=10)
    params = q.get_params()
    assert params["quantizer"] == "e8" and params["lmbda"] == 0.01 and params["n_iter"] == 10
    c = clone(q)
    assert c.get_params() == params and not hasattr(c, "model_")


@pytest.mark.parametrize("kind", ["usq", "e8", "salvq"])
def test_transform_inverse_consistency(data, kind):
    q = LatticeQuantizer(quantizer=kind, n_iter=200).fit(data)
    codes = q.transform(data[:50])
    assert codes.dtype == np.int64
    np.testing.assert_allclose(q.inverse_transform(codes), q.quantize(data[:50]), atol=1e-12)
    np.testing.assert_array_equal(q.decompress(q.compress(data[:50])), q.quantize(data[:50]))


def test_fit_transform(data):
    a = LatticeQuantizer(quantizer="usq", n_iter=100).fit_transform(data[:500])
    b = LatticeQuantizer(quantizer="usq", n_iter=100).fit(data[:500]).transform(data[:500])
    np.testing.assert_array_equal(a, b)


def test_score_is_negative_cost(data):
    q = LatticeQuantizer(quantizer="salvq", lmbda=0.004, n_iter=200).fit(data)
    bits, mse = q.rate_distortion(data)
    assert q.score(data) == pytest.approx(-(mse + 0.004 * bits))


def test_multirate_targets(data):
    q = LatticeQuantizer(lambdas=(0.002, 0.008), n_iter=300).fit(data)
    fine = np.mean((data - q.quantize(data, 0)) ** 2)
    coarse = np.mean((data - q.quantize(data, 1)) ** 2)
    assert fine < coarse


def test_errors(data):
    with pytest.raises(NotFittedError):
        LatticeQuantizer().transform(data)
    q = LatticeQuantizer(quantizer="usq", n_iter=10).fit(data)
    with pytest.raises(DimensionMismatch):
        q.transform(data[:, :4])
    with pytest.raises(BadSpec):
        LatticeQuantizer(quantizer="leech").fit(data)
    with pytest.raises(ValueError):
        LatticeQuantizer(quantizer="usq").fit(np.full((5, 2), np.nan))
