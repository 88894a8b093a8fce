import numpy as np
import pytest

from cholgauss.covparam import pair_order


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_cholesky_instance(rng, k, family):
    """Random predictor values plus a response drawn from the model."""
    pi, pj = pair_order(k)
    eta_mu = rng.normal(0.0, 1.0, k)
    eta_diag = rng.normal(0.0, 0.5, k)
    eta_off = rng.normal(0.0, 0.5, len(pi))
    if family == "basic":
        lam_diag = np.exp(eta_diag)
        lam_off = eta_off
    else:
        psi = np.exp(eta_diag)
        lam_diag = psi**-0.5
        lam_off = -eta_off * lam_diag[pj]
    linv = np.diag(lam_diag)
    linv[pj, pi] = lam_off
    root = np.linalg.inv(linv)
    y = eta_mu + root @ rng.standard_normal(k)
    return eta_mu, eta_diag, eta_off, y


def fd_gradient(fn, x, h=1e-5):
    """Five-point central differences with one Richardson level."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for c in range(x.size):
        hc = max(h, 1e-7 * abs(x.flat[c]))
        e = np.zeros_like(x)
        e.flat[c] = 1.0
        fp1 = fn(x + hc * e)
        fm1 = fn(x - hc * e)
        fp2 = fn(x + 2 * hc * e)
        fm2 = fn(x - 2 * hc * e)
        grad.flat[c] = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * hc)
    return grad
