import numpy as np
import pytest
from conftest import fd_gradient, random_cholesky_instance

from cholgauss.covparam import (
    InverseCholFactor,
    basic_to_modified,
    pair_order,
    sigma_from_basic,
)
from cholgauss.likelihood import (
    LINKS,
    NumericalError,
    PredictorBundle,
    derivs_basic,
    derivs_modified,
    family_derivs,
    family_loglik,
    grad_reference,
    loglik_basic,
    loglik_generic,
    loglik_modified,
    loglik_reference,
    total_loglik,
)

LOG_2PI = np.log(2.0 * np.pi)


# -- links -------------------------------------------------------------------


def test_link_round_trips():
    grid = np.linspace(-5, 5, 41)
    for name, link in LINKS.items():
        if name == "rho":
            theta = np.array([-0.99, 0.0, 0.99])
        elif name == "log":
            theta = np.exp(grid)
        else:
            theta = grid
        assert np.allclose(link.forward(link.inverse(grid)), grid, atol=1e-12)
        assert np.allclose(link.inverse(link.forward(theta)), theta, atol=1e-12)


def test_rho_link_derivative():
    link = LINKS["rho"]
    eta = np.array([-1.3, 0.0, 0.4, 2.0])
    h = 1e-6
    fd = (link.inverse(eta + h) - link.inverse(eta - h)) / (2 * h)
    assert np.allclose(link.dtheta_deta(eta), fd, atol=1e-9)


# -- log-likelihoods ----------------------------------------------------------


def test_loglik_basic_standard_normal():
    b = PredictorBundle("basic", 1, np.zeros(1), np.zeros(1), np.zeros(0))
    assert loglik_basic(b, np.zeros(1)) == pytest.approx(-0.5 * LOG_2PI)


def test_loglik_basic_zero_residual():
    eta_d = np.array([0.3, -0.7])
    b = PredictorBundle("basic", 2, np.array([1.0, 2.0]), eta_d, np.array([0.4]))
    val = loglik_basic(b, np.array([1.0, 2.0]))
    assert val == pytest.approx(-LOG_2PI + eta_d.sum())


def test_loglik_modified_standard_normal():
    b = PredictorBundle("modified", 1, np.array([3.0]), np.zeros(1), np.zeros(0))
    assert loglik_modified(b, np.array([3.0])) == pytest.approx(-0.5 * LOG_2PI)


def test_loglik_modified_hand_value():
    # second innovation is exactly zero; quadratic term is 1/2 from the first
    b = PredictorBundle(
        "modified", 2, np.zeros(2), np.zeros(2), np.array([0.5])
    )
    y = np.array([1.0, 0.5])
    assert loglik_modified(b, y) == pytest.approx(-LOG_2PI - 0.5)


def test_loglik_generic_hand_values():
    from cholgauss.covparam import CovarianceMatrix

    assert loglik_generic(
        np.zeros(1), CovarianceMatrix(np.eye(1)), np.zeros(1)
    ) == pytest.approx(-0.5 * LOG_2PI)
    assert loglik_generic(
        np.zeros(2), CovarianceMatrix(np.eye(2)), np.array([1.0, 1.0])
    ) == pytest.approx(-LOG_2PI - 1.0)


def test_loglik_generic_singular():
    from cholgauss.covparam import CovarianceMatrix

    sig = CovarianceMatrix(np.eye(2))
    object.__setattr__(sig, "entries", np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(NumericalError):
        loglik_generic(np.zeros(2), sig, np.zeros(2))


def test_density_normalizes_at_k1():
    # quadrature check that exp(loglik) integrates to one
    from cholgauss.covparam import CovarianceMatrix

    sig = CovarianceMatrix(np.array([[2.3]]))
    grid = np.linspace(-12, 12, 4001)
    vals = np.array([np.exp(loglik_generic(np.array([0.4]), sig, np.array([g]))) for g in grid])
    assert np.trapezoid(vals, grid) == pytest.approx(1.0, abs=1e-8)


def test_equivalence_basic_modified_generic(rng):
    for _ in range(200):
        k = int(rng.integers(1, 7))
        eta_mu, eta_d, eta_o, y = random_cholesky_instance(rng, k, "basic")
        bb = PredictorBundle("basic", k, eta_mu, eta_d, eta_o)
        fac = InverseCholFactor(np.exp(eta_d), eta_o)
        params = basic_to_modified(fac)
        mb = PredictorBundle("modified", k, eta_mu, np.log(params.psi), params.phi)
        l1 = loglik_basic(bb, y)
        l2 = loglik_modified(mb, y)
        l3 = loglik_generic(eta_mu, sigma_from_basic(fac), y)
        assert abs(l1 - l3) < 1e-10
        assert abs(l2 - l3) < 1e-10


def test_batch_equals_per_observation_sum(rng):
    k = 4
    n = 2000
    pi, pj = pair_order(k)
    eta_mu = rng.normal(0, 1, (n, k))
    eta_d = rng.normal(0, 0.5, (n, k))
    eta_o = rng.normal(0, 0.5, (n, len(pi)))
    y = rng.normal(0, 1.5, (n, k))
    batch = loglik_modified(PredictorBundle("modified", k, eta_mu, eta_d, eta_o), y)
    single = [
        loglik_modified(PredictorBundle("modified", k, eta_mu[i], eta_d[i], eta_o[i]), y[i])
        for i in range(n)
    ]
    assert abs(total_loglik(batch) - sum(single)) < 1e-9


# -- analytic derivatives -----------------------------------------------------


def _block_fd(llfn, family, k, eta_mu, eta_d, eta_o, y, block):
    parts = {"mu": eta_mu, "diag": eta_d, "off": eta_o}

    def fn(x):
        local = dict(parts)
        local[block] = x
        b = PredictorBundle(family, k, local["mu"], local["diag"], local["off"])
        return llfn(b, y)

    return fd_gradient(fn, parts[block])


@pytest.mark.parametrize("family", ["basic", "modified"])
def test_gradients_match_finite_differences(rng, family):
    llfn = loglik_basic if family == "basic" else loglik_modified
    dfn = derivs_basic if family == "basic" else derivs_modified
    for k in (1, 2, 3, 5, 10):
        for _ in range(8):
            eta_mu, eta_d, eta_o, y = random_cholesky_instance(rng, k, family)
            d = dfn(PredictorBundle(family, k, eta_mu, eta_d, eta_o), y)
            for block in ("mu", "diag", "off"):
                fd = _block_fd(llfn, family, k, eta_mu, eta_d, eta_o, y, block)
                err = np.abs(d.first[block] - fd) / np.maximum(1.0, np.abs(fd))
                assert err.size == 0 or err.max() < 1e-6


@pytest.mark.parametrize("family", ["basic", "modified"])
def test_second_derivatives_match_gradient_differences(rng, family):
    dfn = derivs_basic if family == "basic" else derivs_modified
    for k in (1, 3, 5):
        eta_mu, eta_d, eta_o, y = random_cholesky_instance(rng, k, family)
        d = dfn(PredictorBundle(family, k, eta_mu, eta_d, eta_o), y)
        parts = {"mu": eta_mu, "diag": eta_d, "off": eta_o}
        for block in ("mu", "diag", "off"):
            base = parts[block]
            for c in range(base.size):
                h = 1e-6

                def grad_c(v):
                    local = dict(parts)
                    x = base.copy()
                    x[c] = v
                    local[block] = x
                    b = PredictorBundle(family, k, local["mu"], local["diag"], local["off"])
                    return dfn(b, y).first[block][c]

                fd = (grad_c(base[c] + h) - grad_c(base[c] - h)) / (2 * h)
                err = abs(d.second[block][c] - fd) / max(1.0, abs(fd))
                assert err < 1e-5


def test_trivial_derivative_values():
    # zero residual: mean gradients 0, diagonal gradients 1, off gradients 0
    k = 3
    pi, pj = pair_order(k)
    eta_mu = np.array([1.0, -2.0, 0.5])
    b = PredictorBundle("basic", k, eta_mu, np.array([0.2, -0.1, 0.4]), np.zeros(len(pi)))
    d = derivs_basic(b, eta_mu.copy())
    assert np.allclose(d.first["mu"], 0.0)
    assert np.allclose(d.first["diag"], 1.0)
    assert np.allclose(d.first["off"], 0.0)
    # modified family at zero residual: diagonal gradients -1/2
    bm = PredictorBundle("modified", k, eta_mu, np.array([0.2, -0.1, 0.4]), np.zeros(len(pi)))
    dm = derivs_modified(bm, eta_mu.copy())
    assert np.allclose(dm.first["diag"], -0.5)
    assert np.allclose(dm.first["off"], 0.0)


def test_off_second_derivative_formula():
    # for the basic family it is minus the squared residual of the first index
    b = PredictorBundle("basic", 2, np.zeros(2), np.zeros(2), np.array([0.7]))
    d = derivs_basic(b, np.array([2.0, 0.3]))
    assert d.second["off"][0] == pytest.approx(-4.0)


def test_modified_second_derivatives_nonpositive(rng):
    for _ in range(200):
        k = int(rng.integers(1, 7))
        eta_mu, eta_d, eta_o, y = random_cholesky_instance(rng, k, "modified")
        d = derivs_modified(PredictorBundle("modified", k, eta_mu, eta_d, eta_o), y)
        for block in ("mu", "diag", "off"):
            assert np.all(d.second[block] <= 1e-15)


def test_basic_diag_second_derivative_can_be_positive():
    # documented corner: the diagonal coordinate is not concave pointwise
    b = PredictorBundle("basic", 2, np.zeros(2), np.zeros(2), np.array([-3.0]))
    d = derivs_basic(b, np.array([1.0, 1.0]))
    assert d.second["diag"][1] == pytest.approx(1.0)
    # finite differences of the actual log-density confirm the sign
    h = 1e-5

    def ll(e22):
        bb = PredictorBundle("basic", 2, np.zeros(2), np.array([0.0, e22]), np.array([-3.0]))
        return loglik_basic(bb, np.array([1.0, 1.0]))

    fd2 = (ll(h) - 2 * ll(0.0) + ll(-h)) / h**2
    assert fd2 == pytest.approx(1.0, abs=1e-5)


# -- reference families --------------------------------------------------------


def test_reference_loglik_matches_generic(rng):
    from cholgauss.covparam import sigma_from_ar1, sigma_from_const_corr

    mu = rng.normal(0, 1, 3)
    eta_d = rng.normal(0, 0.3, 3)
    y = rng.normal(0, 1, 3)
    b = PredictorBundle("ar1", 3, mu, eta_d, np.array([0.6]))
    rho = LINKS["rho"].inverse(0.6)
    assert loglik_reference(b, y) == pytest.approx(
        loglik_generic(mu, sigma_from_ar1(np.exp(eta_d), rho), y), abs=1e-10
    )
    eta_r = rng.normal(0, 0.2, 3)
    b2 = PredictorBundle("const_corr", 3, mu, eta_d, eta_r)
    corr = np.eye(3)
    vals = LINKS["rho"].inverse(eta_r)
    corr[[0, 0, 1], [1, 2, 2]] = vals
    corr[[1, 2, 2], [0, 0, 1]] = vals
    assert loglik_reference(b2, y) == pytest.approx(
        loglik_generic(mu, sigma_from_const_corr(np.exp(eta_d), corr), y), abs=1e-10
    )


def test_reference_gradients_at_independence(rng):
    # rho = 0, unit scales, y = mu: scale gradients follow the univariate form
    mu = rng.normal(0, 1, 3)
    b = PredictorBundle("ar1", 3, mu, np.zeros(3), np.zeros(1))
    d = grad_reference("ar1", b, mu.copy())
    assert np.allclose(d.first["mu"], 0.0, atol=1e-9)
    # univariate: d/d eta_sigma of loglik at y = mu is -1 (from -log sigma term)
    assert np.allclose(d.first["diag"], -1.0, atol=1e-6)
    assert np.allclose(d.first["off"], 0.0, atol=1e-6)


def test_const_corr_bivariate_analytic_score(rng):
    # hand-derived bivariate Gaussian score as the oracle
    mu = np.array([0.5, -0.2])
    eta_d = np.array([0.1, -0.3])
    eta_r = np.array([0.4])
    y = np.array([1.0, 0.7])
    b = PredictorBundle("const_corr", 2, mu, eta_d, eta_r)
    d = grad_reference("const_corr", b, y)
    s1, s2 = np.exp(eta_d)
    rho = float(LINKS["rho"].inverse(eta_r))[0] if False else float(LINKS["rho"].inverse(eta_r[0]))
    z1, z2 = (y[0] - mu[0]) / s1, (y[1] - mu[1]) / s2
    one = 1.0 - rho * rho
    # d loglik / d log(sigma_1) for a bivariate Gaussian
    dl_ds1 = -1.0 + (z1 * z1 - rho * z1 * z2) / one
    dl_ds2 = -1.0 + (z2 * z2 - rho * z1 * z2) / one
    assert d.first["diag"][0] == pytest.approx(dl_ds1, abs=1e-6)
    assert d.first["diag"][1] == pytest.approx(dl_ds2, abs=1e-6)
    # d loglik / d rho, chained through the rho link
    dl_drho = rho / one - rho * (z1 * z1 + z2 * z2) / one**2 + z1 * z2 * (1 + rho * rho) / one**2
    drho_deta = float(LINKS["rho"].dtheta_deta(eta_r[0]))
    assert d.first["off"][0] == pytest.approx(dl_drho * drho_deta, abs=1e-6)


def test_family_dispatch(rng):
    eta_mu, eta_d, eta_o, y = random_cholesky_instance(rng, 3, "basic")
    b = PredictorBundle("basic", 3, eta_mu, eta_d, eta_o)
    assert family_loglik(b, y) == pytest.approx(loglik_basic(b, y))
    d = family_derivs(b, y)
    assert set(d.first) == {"mu", "diag", "off"}
