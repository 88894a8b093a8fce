import warnings

import numpy as np
import pytest

from cholgauss.basis import TermSpec
from cholgauss.estimate import (
    FitOptions,
    ModelSpec,
    fit_pml,
    select_smoothing,
)
from cholgauss.simgen import SimConfig, generate, true_params

warnings.filterwarnings("ignore", category=UserWarning)


def spline_spec(k=3, family="modified", df=10):
    terms = {
        name: [TermSpec("intercept"), TermSpec("smooth", "x", df=df)]
        for name in ModelSpec(family, k).param_names()
    }
    return ModelSpec(family, k, terms=terms)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("gaussian", 3)
    with pytest.raises(ValueError):
        ModelSpec("ar1", 3, ad_order=1)
    with pytest.raises(ValueError):
        ModelSpec("modified", 3, terms={"phi_9_9": []})
    spec = ModelSpec("modified", 3, ad_order=1)
    assert "phi_1_3" not in spec.param_names()
    with pytest.raises(ValueError):
        ModelSpec("modified", 3, ad_order=1, terms={"phi_1_3": []})


def test_param_names_by_family():
    assert ModelSpec("basic", 2).param_names() == [
        "mu_1",
        "mu_2",
        "lamdiag_1",
        "lamdiag_2",
        "lamoff_1_2",
    ]
    assert ModelSpec("ar1", 2).param_names() == ["mu_1", "mu_2", "sigma_1", "sigma_2", "rho"]
    assert ModelSpec("const_corr", 2).param_names()[-1] == "rho_1_2"


def test_intercept_added_automatically():
    spec = ModelSpec("modified", 2, terms={"mu_1": [TermSpec("linear", "x")]})
    kinds = [t.kind for t in spec.terms["mu_1"]]
    assert kinds[0] == "intercept"


def test_covariance_accounting_table():
    # the six comparison models at k = 10
    from cholgauss.cli import parse_model_document, weather_model_doc

    expected = {
        "basic": (55, 0, 0),
        "modified": (55, 0, 0),
        "basic_ad5": (45, 0, 10),
        "modified_ad5": (45, 0, 10),
        "ar1": (11, 0, 44),
        "const_corr": (10, 45, 0),
    }
    for name, (fl, ic, ze) in expected.items():
        spec = parse_model_document(weather_model_doc(name, k=10))
        acc = spec.covariance_accounting()
        assert (acc["flexible"], acc["intercept"], acc["zero"]) == (fl, ic, ze)


@pytest.mark.parametrize("family", ["modified", "basic"])
def test_intercept_only_matches_moments(rng, family):
    n = 100_000
    y = rng.normal(3.0, 2.0, n)
    fit = fit_pml(ModelSpec(family, 1), {"y_1": y}, FitOptions(smoothing=1.0))
    assert fit.converged
    mu_hat = fit.coefs["mu_1"][0][0]
    assert abs(mu_hat - 3.0) < 3 * 2.0 / np.sqrt(n)
    if family == "modified":
        var_hat = np.exp(fit.coefs["psi_1"][0][0])
    else:
        var_hat = np.exp(fit.coefs["lamdiag_1"][0][0]) ** -2
    assert abs(var_hat - 4.0) < 3 * 4.0 * np.sqrt(2.0 / n)
    assert abs(mu_hat - y.mean()) < 1e-6
    assert abs(var_hat - y.var()) < 1e-4


def test_ad1_fit_has_no_masked_parameter(rng):
    cfg = SimConfig(n=800, k=3, alpha=1.0, seed=2)
    frame = generate(cfg)
    spec = ModelSpec("modified", 3, ad_order=1)
    fit = fit_pml(spec, frame, FitOptions(smoothing=1.0))
    assert "phi_1_3" not in fit.coefs
    assert "phi_1_2" in fit.coefs


def test_penalized_loglik_monotone(rng):
    cfg = SimConfig(n=1500, k=3, alpha=1.0, seed=9)
    frame = generate(cfg)
    fit = fit_pml(spline_spec(), frame, FitOptions(smoothing=5.0))
    trace = np.asarray(fit.pll_trace)
    assert np.all(np.diff(trace) >= -1e-7 * (np.abs(trace[:-1]) + 1.0))


def test_spline_fit_recovers_truth(rng):
    cfg = SimConfig(n=5000, k=3, alpha=1.0, seed=31)
    frame = generate(cfg)
    fit = fit_pml(spline_spec(), frame, FitOptions())
    assert fit.converged
    grid = np.linspace(-0.9, 0.9, 101)
    eta = fit.predict_eta({"x": grid}, warn=False)
    mu, psi, phi = true_params(grid, cfg)
    assert np.sqrt(np.mean((eta["mu_2"] - mu[:, 1]) ** 2)) < 0.06
    assert np.sqrt(np.mean((np.exp(eta["psi_2"]) - psi[:, 1]) ** 2)) < 0.05
    assert np.sqrt(np.mean((eta["phi_2_3"] - phi[:, 2]) ** 2)) < 0.12


def test_basic_and_modified_agree_on_loglik(rng):
    cfg = SimConfig(n=3000, k=3, alpha=1.0, seed=4)
    frame = generate(cfg)
    fit_m = fit_pml(spline_spec(family="modified"), frame, FitOptions())
    fit_b = fit_pml(spline_spec(family="basic"), frame, FitOptions())
    assert abs(fit_m.loglik - fit_b.loglik) / abs(fit_m.loglik) < 0.005


def test_covariate_column_order_irrelevant(rng):
    cfg = SimConfig(n=1200, k=3, alpha=1.0, seed=13)
    frame = generate(cfg)
    fit1 = fit_pml(spline_spec(), frame, FitOptions(smoothing=10.0))
    shuffled = frame[["y_2", "x", "y_3", "y_1"]]
    fit2 = fit_pml(spline_spec(), shuffled, FitOptions(smoothing=10.0))
    assert fit1.loglik == pytest.approx(fit2.loglik, abs=1e-8)
    for name in fit1.coefs:
        for b1, b2 in zip(fit1.coefs[name], fit2.coefs[name]):
            assert np.allclose(b1, b2, atol=1e-8)


def test_select_smoothing_linear_truth(rng):
    # a truly linear effect should be shrunk to (or near) the grid maximum
    n = 4000
    x = rng.uniform(-1, 1, n)
    y = 1.0 + 2.0 * x + rng.normal(0, 0.5, n)
    spec = ModelSpec(
        "modified",
        1,
        terms={"mu_1": [TermSpec("intercept"), TermSpec("smooth", "x", df=10)]},
    )
    chosen = select_smoothing(spec, {"x": x, "y_1": y})
    lam = chosen[("mu_1", "s(x)")]
    assert lam >= 1e4


def test_select_smoothing_noise_gives_null_edf(rng):
    n = 4000
    x = rng.uniform(-1, 1, n)
    y = rng.normal(0, 1, n)
    spec = ModelSpec(
        "modified",
        1,
        terms={"mu_1": [TermSpec("intercept"), TermSpec("smooth", "x", df=10)]},
    )
    fit = fit_pml(spec, {"x": x, "y_1": y}, FitOptions())
    edf_smooth = fit.edf["mu_1"][1]
    # second-order penalty null space is dimension 2; centering removes one
    assert edf_smooth < 2.5


def test_single_value_grid_returned_unchanged(rng):
    n = 1000
    x = rng.uniform(-1, 1, n)
    y = 1.0 + x**2 + rng.normal(0, 0.3, n)
    spec = ModelSpec(
        "modified",
        1,
        terms={"mu_1": [TermSpec("intercept"), TermSpec("smooth", "x", df=8)]},
    )
    chosen = select_smoothing(spec, {"x": x, "y_1": y}, grid=[7.5])
    assert chosen[("mu_1", "s(x)")] == 7.5


def test_small_sample_warns():
    rng = np.random.default_rng(0)
    frame = generate(SimConfig(n=60, k=3, alpha=1.0, seed=0))
    with pytest.warns(UserWarning, match="basis dimension"):
        fit_pml(spline_spec(), frame, FitOptions(smoothing=100.0, max_outer=10))


def test_reference_families_fit(rng):
    # AR1 truth recovered by the AR1 family
    n = 4000
    k = 4
    rho = 0.6
    idx = np.arange(k)
    corr = rho ** np.abs(idx[:, None] - idx[None, :])
    sds = np.array([1.0, 1.5, 0.8, 1.2])
    cov = sds[:, None] * corr * sds[None, :]
    y = rng.multivariate_normal(np.zeros(k), cov, size=n)
    data = {f"y_{i + 1}": y[:, i] for i in range(k)}
    data["x"] = rng.uniform(-1, 1, n)
    fit = fit_pml(ModelSpec("ar1", k), data, FitOptions(smoothing=1.0))
    from cholgauss.likelihood import LINKS

    rho_hat = float(LINKS["rho"].inverse(fit.coefs["rho"][0][0]))
    assert abs(rho_hat - rho) < 0.05
    sd_hat = np.exp([fit.coefs[f"sigma_{i + 1}"][0][0] for i in range(k)])
    assert np.allclose(sd_hat, sds, rtol=0.08)
    # the fixed-correlation family on the same data
    fit2 = fit_pml(ModelSpec("const_corr", k), data, FitOptions(smoothing=1.0))
    corr_hat = float(LINKS["rho"].inverse(fit2.coefs["rho_1_2"][0][0]))
    assert abs(corr_hat - rho) < 0.06
    assert fit2.loglik >= fit.loglik - 5.0
