import numpy as np
import pytest

from cholgauss.covparam import (
    ADMask,
    CovarianceMatrix,
    InvalidParameterError,
    InverseCholFactor,
    ModifiedCholParams,
    apply_ad_mask,
    basic_to_modified,
    correlation_from_sigma,
    modified_to_basic,
    pair_index,
    pair_order,
    sigma_from_ar1,
    sigma_from_basic,
    sigma_from_const_corr,
    sigma_from_modified,
)


def test_pair_order_canonical():
    pi, pj = pair_order(4)
    assert list(zip(pi, pj)) == [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]
    for idx, (i, j) in enumerate(zip(pi, pj)):
        assert pair_index(i, j) == idx


def test_identity_factor_gives_identity_sigma():
    fac = InverseCholFactor(np.ones(2))
    sig = sigma_from_basic(fac)
    assert np.allclose(sig.entries, np.eye(2))


def test_sigma_from_basic_matches_dense_inverse_oracle():
    # explicit dense inverse-then-multiply as the independent oracle
    fac = InverseCholFactor(np.ones(3), {(1, 2): -0.5})
    sig = sigma_from_basic(fac)
    linv = np.array([[1.0, 0, 0], [-0.5, 1.0, 0], [0, 0, 1.0]])
    root = np.linalg.inv(linv)
    assert np.allclose(sig.entries, root @ root.T, atol=1e-12)


def test_scalar_case():
    fac = InverseCholFactor(np.array([np.exp(1.0)]))
    sig = sigma_from_basic(fac)
    assert np.allclose(sig.entries, [[np.exp(-2.0)]])


def test_nonpositive_diagonal_rejected():
    with pytest.raises(InvalidParameterError):
        InverseCholFactor(np.array([1.0, -0.1]))
    with pytest.raises(InvalidParameterError):
        ModifiedCholParams(np.array([1.0, 0.0]))


def test_sigma_from_modified_autoregressive_construction(rng):
    params = ModifiedCholParams(np.array([1.0, 1.0]), {(1, 2): 0.5})
    sig = sigma_from_modified(params)
    assert np.allclose(sig.entries, [[1.0, 0.5], [0.5, 1.25]], atol=1e-12)
    # Monte-Carlo oracle for the same construction
    n = 200_000
    y1 = rng.standard_normal(n)
    y2 = 0.5 * y1 + rng.standard_normal(n)
    emp = np.cov(np.vstack([y1, y2]))
    assert np.allclose(emp, sig.entries, atol=0.02)


def test_sigma_from_modified_diagonal_case():
    params = ModifiedCholParams(np.array([2.0, 3.0, 4.0]))
    sig = sigma_from_modified(params)
    assert np.allclose(sig.entries, np.diag([2.0, 3.0, 4.0]))


def test_paper_value_at_x0():
    assert abs(np.exp(-2.0) - 0.1353352832366127) < 1e-15


def test_modified_to_basic_values():
    params = ModifiedCholParams(np.array([1.0, 4.0]), {(1, 2): 1.0})
    fac = modified_to_basic(params)
    assert np.allclose(fac.lam_diag, [1.0, 0.5])
    assert np.allclose(fac.offdiag, [-0.5])
    assert np.allclose(
        sigma_from_basic(fac).entries, sigma_from_modified(params).entries, atol=1e-12
    )


def test_basic_to_modified_inverse_values():
    fac = InverseCholFactor(np.array([1.0, 0.5]), {(1, 2): -0.5})
    params = basic_to_modified(fac)
    assert np.allclose(params.psi, [1.0, 4.0])
    assert np.allclose(params.phi, [1.0])


def test_round_trips(rng):
    for _ in range(30):
        k = int(rng.integers(1, 7))
        diag = np.exp(rng.normal(0, 0.6, k))
        off = rng.normal(0, 0.8, k * (k - 1) // 2)
        fac = InverseCholFactor(diag, off)
        back = modified_to_basic(basic_to_modified(fac))
        assert np.allclose(back.lam_diag, fac.lam_diag, atol=1e-12)
        assert np.allclose(back.offdiag, fac.offdiag, atol=1e-12)
        params = ModifiedCholParams(np.exp(rng.normal(0, 0.6, k)), off.copy())
        back2 = basic_to_modified(modified_to_basic(params))
        assert np.allclose(back2.psi, params.psi, atol=1e-12)
        assert np.allclose(back2.phi, params.phi, atol=1e-12)


def test_conversion_preserves_sigma(rng):
    for _ in range(20):
        k = int(rng.integers(2, 6))
        params = ModifiedCholParams(
            np.exp(rng.normal(0, 0.5, k)), rng.normal(0, 0.7, k * (k - 1) // 2)
        )
        a = sigma_from_modified(params).entries
        b = sigma_from_basic(modified_to_basic(params)).entries
        assert np.max(np.abs(a - b)) < 1e-10


def test_positive_definite_for_any_parameters(rng):
    # no joint constraints: every random draw must give a PD covariance
    for _ in range(1000):
        k = int(rng.integers(1, 8))
        fac = InverseCholFactor(
            np.exp(rng.normal(0, 1.0, k)), rng.normal(0, 1.0, k * (k - 1) // 2)
        )
        assert sigma_from_basic(fac).min_eigenvalue() > 0


def test_autoregressive_semantics(rng):
    # OLS of component j on 1..j-1 of simulated vectors recovers phi and psi
    k = 3
    params = ModifiedCholParams(
        np.array([0.8, 1.3, 0.6]), {(1, 2): 0.4, (1, 3): -0.2, (2, 3): 0.7}
    )
    sig = sigma_from_modified(params)
    n = 1_000_000
    y = rng.multivariate_normal(np.zeros(k), sig.entries, size=n)
    design = np.column_stack([y[:, 0], y[:, 1]])
    coef, res, *_ = np.linalg.lstsq(design, y[:, 2], rcond=None)
    resid_var = res[0] / n
    se = np.sqrt(np.diag(np.linalg.inv(design.T @ design)) * params.psi[2])
    assert abs(coef[0] - (-0.2)) < 3 * se[0]
    assert abs(coef[1] - 0.7) < 3 * se[1]
    assert abs(resid_var - 0.6) < 3 * 0.6 * np.sqrt(2.0 / n)
    coef1, res1, *_ = np.linalg.lstsq(y[:, :1], y[:, 1], rcond=None)
    se1 = np.sqrt(params.psi[1] / (design[:, 0] @ design[:, 0]))
    assert abs(coef1[0] - 0.4) < 3 * se1


def test_ar1():
    sig = sigma_from_ar1(np.ones(3), 0.5)
    assert np.allclose(sig.entries[0], [1.0, 0.5, 0.25])
    assert sigma_from_ar1(np.array([1.0, 2.0]), 0.0).entries[0, 1] == 0.0
    with pytest.raises(InvalidParameterError):
        sigma_from_ar1(np.ones(3), 1.0)


def test_ar1_positive_definite(rng):
    for _ in range(100):
        k = int(rng.integers(2, 12))
        sig = sigma_from_ar1(
            np.exp(rng.normal(0, 0.5, k)), float(rng.uniform(-0.99, 0.99))
        )
        assert sig.min_eigenvalue() > 0


def test_const_corr():
    sig = sigma_from_const_corr(np.array([1.0, 2.0]), np.array([[1.0, 0.5], [0.5, 1.0]]))
    assert np.allclose(sig.entries, [[1.0, 1.0], [1.0, 4.0]])
    ident = sigma_from_const_corr(np.ones(3), np.eye(3))
    assert np.allclose(ident.entries, np.eye(3))


def test_const_corr_pd_boundary():
    # equicorrelation: eigenvalues are 1 + 2r and 1 - r (twice)
    r = 1.0 - 1e-10
    near = np.full((3, 3), r)
    np.fill_diagonal(near, 1.0)
    assert np.linalg.eigvalsh(near)[0] == pytest.approx(1e-10, rel=1e-3)
    sigma_from_const_corr(np.ones(3), near)  # accepted
    bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    assert np.linalg.eigvalsh(bad)[0] < -1e-4
    with pytest.raises(InvalidParameterError):
        sigma_from_const_corr(np.ones(3), bad)


def test_correlation_from_sigma(rng):
    variances, corr = correlation_from_sigma(
        CovarianceMatrix(np.diag([1.0, 4.0, 9.0]))
    )
    assert np.allclose(variances, [1.0, 4.0, 9.0])
    assert np.allclose(corr, np.eye(3))
    for _ in range(50):
        fac = InverseCholFactor(np.exp(rng.normal(0, 1, 4)), rng.normal(0, 1, 6))
        _, corr = correlation_from_sigma(sigma_from_basic(fac))
        assert np.all(np.abs(corr) <= 1.0 + 1e-12)
        assert np.allclose(np.diag(corr), 1.0)


def test_ad1_correlation_identity():
    params = ModifiedCholParams(
        np.array([0.5, 0.9, 1.4]), {(1, 2): 0.3, (1, 3): 0.0, (2, 3): 0.8}
    )
    _, corr = correlation_from_sigma(sigma_from_modified(params))
    assert abs(corr[0, 2] - corr[0, 1] * corr[1, 2]) < 1e-12


def test_ad_mask_counts():
    mask = ADMask(10, 5)
    assert mask.n_active == 35
    assert mask.n_modeled == 45
    assert mask.n_masked == 10
    full = ADMask(4, 3)
    assert full.n_masked == 0


def test_apply_ad_mask():
    params = ModifiedCholParams(
        np.ones(3), {(1, 2): 0.3, (1, 3): 0.5, (2, 3): 0.8}
    )
    masked = apply_ad_mask(params, ADMask(3, 1))
    assert masked.phi[pair_index(0, 2)] == 0.0
    assert masked.phi[pair_index(0, 1)] == 0.3
    full = apply_ad_mask(params, ADMask(3, 2))
    assert np.allclose(full.phi, params.phi)


def test_zero_pattern_correspondence(rng):
    # masked autoregression entries map to masked inverse-factor entries
    k = 6
    params = ModifiedCholParams(
        np.exp(rng.normal(0, 0.5, k)), rng.normal(0, 0.8, k * (k - 1) // 2)
    )
    masked = apply_ad_mask(params, ADMask(k, 2))
    fac = modified_to_basic(masked)
    pi, pj = pair_order(k)
    beyond = (pj - pi) > 2
    assert np.all(fac.offdiag[beyond] == 0.0)


def test_precision_cache():
    sig = sigma_from_basic(InverseCholFactor(np.array([1.0, 2.0]), np.array([0.3])))
    p1 = sig.precision
    p2 = sig.precision
    assert p1 is p2
    assert np.allclose(p1 @ sig.entries, np.eye(2), atol=1e-12)
    assert sig.precision_entry(1, 1) == pytest.approx(p1[0, 0])
