"""Compiled backend against the NumPy reference implementation."""

import numpy as np
import pytest

from cholgauss import _kernels_np, kernels
from cholgauss.covparam import pair_order

pytestmark = pytest.mark.skipif(
    kernels.BACKEND != "compiled",
    reason="compiled kernels unavailable; fallback already exercised everywhere",
)


def _random_inputs(rng, n, k, max_lag=None):
    pi, pj = pair_order(k, max_lag)
    diag = np.exp(rng.normal(0, 0.5, (n, k)))
    off = rng.normal(0, 0.7, (n, len(pi)))
    resid = rng.normal(0, 1.2, (n, k))
    return diag, off, pi, pj, resid


@pytest.mark.parametrize("k,max_lag", [(1, None), (2, None), (5, None), (8, 3)])
def test_basic_parity(rng, k, max_lag):
    diag, off, pi, pj, resid = _random_inputs(rng, 40, k, max_lag)
    got = kernels.basic_derivs(diag, off, pi, pj, resid)
    want = _kernels_np.basic_derivs(diag, off, pi, pj, resid)
    for g, w in zip(got, want):
        assert np.allclose(g, w, atol=1e-13, rtol=1e-13)
    assert np.allclose(
        kernels.basic_loglik(diag, off, pi, pj, resid),
        _kernels_np.basic_loglik(diag, off, pi, pj, resid),
        atol=1e-13,
    )


@pytest.mark.parametrize("k,max_lag", [(1, None), (3, None), (6, None), (10, 5)])
def test_modified_parity(rng, k, max_lag):
    diag, off, pi, pj, resid = _random_inputs(rng, 40, k, max_lag)
    got = kernels.modified_derivs(diag, off, pi, pj, resid)
    want = _kernels_np.modified_derivs(diag, off, pi, pj, resid)
    for g, w in zip(got, want):
        assert np.allclose(g, w, atol=1e-13, rtol=1e-13)
    assert np.allclose(
        kernels.modified_loglik(diag, off, pi, pj, resid),
        _kernels_np.modified_loglik(diag, off, pi, pj, resid),
        atol=1e-13,
    )


def test_readonly_inputs_accepted(rng):
    diag, off, pi, pj, resid = _random_inputs(rng, 5, 3)
    for arr in (diag, off, resid):
        arr.flags.writeable = False
    kernels.basic_derivs(diag, off, pi, pj, resid)
    kernels.modified_loglik(diag, off, pi, pj, resid)
