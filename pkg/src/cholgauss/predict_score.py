"""Prediction, simulation, scoring, and cross-validation.

Predictions assemble (mu, Sigma) per row from a fitted state; scores are
negatively oriented (lower is better).  The Dawid-Sebastiani score is an
affine function of the Gaussian log-likelihood; the variogram score
compares observed and expected pairwise absolute differences, with the
expectation estimated by seeded Monte Carlo draws.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .covparam import (
    CovarianceMatrix,
    InverseCholFactor,
    ModifiedCholParams,
    sigma_from_ar1,
    sigma_from_basic,
    sigma_from_const_corr,
    sigma_from_modified,
)
from .likelihood import LINKS, loglik_generic
from .kernels import LOG_2PI


@dataclass
class PredictedDistribution:
    """One row's predicted Gaussian: mean vector and covariance."""

    mu: np.ndarray
    sigma: CovarianceMatrix
    row: int = 0


def _eta_matrix(eta, names):
    return np.column_stack([np.atleast_1d(eta[name]) for name in names])


def predict(fit, newdata, warn=True):
    """Predicted distributions at new covariate rows."""
    spec = fit.spec
    eta = fit.predict_eta(newdata, warn=warn)
    names = spec.param_names()
    k = spec.dim
    mu = _eta_matrix(eta, names[:k])
    eta_diag = _eta_matrix(eta, names[k : 2 * k])
    off_names = names[2 * k :]
    eta_off = _eta_matrix(eta, off_names) if off_names else np.zeros((len(mu), 0))
    out = []
    pi, pj = spec.pairs()
    for row in range(len(mu)):
        if spec.family == "basic":
            diag = np.exp(eta_diag[row])
            offd = np.zeros(k * (k - 1) // 2)
            offd[[int(i + j * (j - 1) // 2) for i, j in zip(pi, pj)]] = eta_off[row]
            sigma = sigma_from_basic(InverseCholFactor(diag, offd))
        elif spec.family == "modified":
            psi = np.exp(eta_diag[row])
            offd = np.zeros(k * (k - 1) // 2)
            offd[[int(i + j * (j - 1) // 2) for i, j in zip(pi, pj)]] = eta_off[row]
            sigma = sigma_from_modified(ModifiedCholParams(psi, offd))
        elif spec.family == "ar1":
            rho = float(LINKS["rho"].inverse(eta_off[row, 0]))
            sigma = sigma_from_ar1(np.exp(eta_diag[row]), rho)
        else:
            corr = np.eye(k)
            vals = LINKS["rho"].inverse(eta_off[row])
            corr[pi, pj] = vals
            corr[pj, pi] = vals
            sigma = sigma_from_const_corr(np.exp(eta_diag[row]), corr)
        out.append(PredictedDistribution(mu=mu[row], sigma=sigma, row=row))
    return out


def simulate(dist, m, seed=0):
    """m seeded draws from a predicted distribution, shape (m, k)."""
    if m < 1:
        raise ValueError("need at least one draw")
    rng = np.random.default_rng(seed)
    root = dist.sigma.cholesky_lower()
    eps = rng.standard_normal((m, len(dist.mu)))
    return dist.mu + eps @ root.T


def dss(dist, y):
    """Dawid-Sebastiani score: log det Sigma plus the Mahalanobis form."""
    sign, logdet = np.linalg.slogdet(dist.sigma.entries)
    resid = np.asarray(y, dtype=float) - dist.mu
    quad = resid @ np.linalg.solve(dist.sigma.entries, resid)
    return float(logdet + quad)


def variogram_score(dist, y, p=0.5, m=1000, seed=0):
    """Variogram score of order p with unit weights.

    The expected pairwise moments E|Y_i - Y_j|^p are estimated from m
    seeded Monte Carlo draws.
    """
    if p <= 0:
        raise ValueError("variogram order must be positive")
    y = np.asarray(y, dtype=float)
    draws = simulate(dist, m, seed=seed)
    k = len(dist.mu)
    iu, ju = np.triu_indices(k, 1)
    expected = np.mean(
        np.abs(draws[:, iu] - draws[:, ju]) ** p, axis=0
    )
    observed = np.abs(y[iu] - y[ju]) ** p
    return float(np.sum((observed - expected) ** 2))


def score_rows(fit, data, vs_m=1000, vs_p=0.5, seed=0, group=None):
    """Per-row DSS, variogram score, and log-likelihood for a dataset."""
    preds = predict(fit, data, warn=False)
    y = np.column_stack(
        [np.asarray(data[name], dtype=float) for name in fit.spec.response]
    )
    records = []
    for row, dist in enumerate(preds):
        ll = loglik_generic(dist.mu, dist.sigma, y[row])
        rec = {
            "row": row,
            "loglik": ll,
            "dss": dss(dist, y[row]),
            "variogram": variogram_score(
                dist, y[row], p=vs_p, m=vs_m, seed=seed + row
            ),
        }
        records.append(rec)
    panel = pd.DataFrame.from_records(records)
    if group is not None:
        panel["group"] = np.asarray(group)
    return panel


def rmse_params(truth_fn, fit, eval_points):
    """Root-mean-squared error of every distributional parameter.

    ``truth_fn`` maps the evaluation-point table to a dict of true
    parameter values keyed like the fit's parameter names (innovation
    variances on the variance scale, not the log scale).
    """
    eta = fit.predict_eta(eval_points, warn=False)
    truth = truth_fn(eval_points)
    out = {}
    for name, tvals in truth.items():
        est = eta[name]
        layout = fit.spec.param_layout()
        if layout[name][0] == "diag" and fit.spec.family in ("basic", "modified"):
            est = np.exp(est)
            if fit.spec.family == "basic":
                est = est**-2.0  # inverse-factor diagonal to variance
        out[name] = float(np.sqrt(np.mean((est - np.asarray(tvals)) ** 2)))
    return out


@dataclass
class CVResult:
    """Pooled out-of-sample scores with fold labels and failures."""

    panel: pd.DataFrame
    fold_assignments: np.ndarray
    failures: dict


def kfold_assignments(n, k_folds=5, seed=0, contiguous=False):
    if contiguous:
        return np.minimum(np.arange(n) * k_folds // n, k_folds - 1)
    rng = np.random.default_rng(seed)
    folds = np.arange(n) % k_folds
    rng.shuffle(folds)
    return folds


def kfold_cv(spec, data, k_folds=5, seed=0, contiguous=False, fit_options=None,
             fitter=None, vs_m=1000, group=None):
    """Five-fold (by default) cross-validated scoring.

    Fits on k-1 folds and scores the held-out fold; a failed fold is
    recorded and skipped rather than aborting the run.
    """
    from .estimate import fit_pml

    if k_folds < 2:
        raise ValueError("need at least two folds")
    frame = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
    n = len(frame)
    folds = kfold_assignments(n, k_folds, seed=seed, contiguous=contiguous)
    fit_fn = fitter or (lambda sp, d: fit_pml(sp, d, fit_options))
    panels = []
    failures = {}
    for fold in range(k_folds):
        train = frame.loc[folds != fold].reset_index(drop=True)
        test = frame.loc[folds == fold].reset_index(drop=True)
        try:
            fit = fit_fn(spec, train)
            grp = None
            if group is not None:
                grp = np.asarray(frame[group])[folds == fold]
            panel = score_rows(fit, test, vs_m=vs_m, seed=seed * 1000 + fold, group=grp)
        except Exception as exc:  # noqa: BLE001 - fold failures are data
            failures[fold] = str(exc)
            continue
        panel["fold"] = fold
        panel["row"] = np.flatnonzero(folds == fold)
        panels.append(panel)
    merged = (
        pd.concat(panels, ignore_index=True)
        if panels
        else pd.DataFrame(columns=["row", "loglik", "dss", "variogram", "fold"])
    )
    return CVResult(panel=merged, fold_assignments=folds, failures=failures)


def aggregate_scores(panel, by="group"):
    """Group means of every score column."""
    cols = [c for c in ("dss", "variogram", "loglik") if c in panel.columns]
    return panel.groupby(by, as_index=False)[cols].mean()
