"""Gaussian log-likelihoods and predictor-scale derivatives.

For the two unconstrained covariance parameterizations the first and
diagonal second derivatives with respect to every additive predictor are
analytic and cost O(k^2) per observation.  The constrained reference
families (AR1 correlation, fixed correlation) get their scale/correlation
derivatives by finite differences of the generic density instead; they
exist only as baselines.
"""

import math

import numpy as np

from . import kernels
from .covparam import CovarianceMatrix, pair_order

LOG_2PI = kernels.LOG_2PI


class NumericalError(RuntimeError):
    """A numerically singular or otherwise unusable matrix was encountered."""


# ---------------------------------------------------------------------------
# Link functions


class IdentityLink:
    name = "identity"

    def forward(self, theta):
        return np.asarray(theta, dtype=float)

    def inverse(self, eta):
        return np.asarray(eta, dtype=float)

    def dtheta_deta(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))


class LogLink:
    name = "log"

    def forward(self, theta):
        return np.log(theta)

    def inverse(self, eta):
        return np.exp(eta)

    def dtheta_deta(self, eta):
        return np.exp(eta)


class RhoLink:
    """Maps a correlation in (-1, 1) to the real line via rho/sqrt(1-rho^2)."""

    name = "rho"

    def forward(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta / np.sqrt(1.0 - theta * theta)

    def inverse(self, eta):
        eta = np.asarray(eta, dtype=float)
        return eta / np.sqrt(1.0 + eta * eta)

    def dtheta_deta(self, eta):
        eta = np.asarray(eta, dtype=float)
        return (1.0 + eta * eta) ** -1.5


LINKS = {link.name: link for link in (IdentityLink(), LogLink(), RhoLink())}


# ---------------------------------------------------------------------------
# Predictor bundles

_FAMILIES = ("basic", "modified", "ar1", "const_corr")


class PredictorBundle:
    """Additive-predictor values for every distributional parameter.

    Arrays may be a single observation (1-D) or a batch (first axis =
    observations).  ``eta_diag`` is on the log scale (inverse-factor
    diagonal, innovation variance, or marginal standard deviation depending
    on the family); ``eta_off`` uses the identity link for the Cholesky
    families and the rho link for the reference families.
    """

    def __init__(self, family, dim, eta_mu, eta_diag, eta_off=None, ad_order=None):
        if family not in _FAMILIES:
            raise ValueError(f"unknown family {family!r}")
        self.family = family
        self.dim = dim
        self.ad_order = ad_order
        eta_mu = np.asarray(eta_mu, dtype=float)
        self.single = eta_mu.ndim == 1
        self.eta_mu = np.atleast_2d(eta_mu)
        self.eta_diag = np.atleast_2d(np.asarray(eta_diag, dtype=float))
        n = self.eta_mu.shape[0]
        if family == "ar1":
            self.pair_i = self.pair_j = np.empty(0, dtype=np.int64)
            self.eta_off = np.atleast_2d(np.asarray(eta_off, dtype=float)).reshape(n, 1)
        else:
            lag = ad_order if family in ("basic", "modified") else None
            self.pair_i, self.pair_j = pair_order(dim, lag)
            if eta_off is None:
                eta_off = np.zeros((n, len(self.pair_i)))
            self.eta_off = np.atleast_2d(np.asarray(eta_off, dtype=float))
            if self.eta_off.shape != (n, len(self.pair_i)):
                raise ValueError(
                    f"eta_off shape {self.eta_off.shape} does not match "
                    f"{len(self.pair_i)} active pairs"
                )
        for arr in (self.eta_mu, self.eta_diag, self.eta_off):
            if not np.all(np.isfinite(arr)):
                raise ValueError("predictor values must be finite")

    @property
    def n(self):
        return self.eta_mu.shape[0]

    @property
    def mu(self):
        return self.eta_mu

    def diag_values(self):
        """Diagonal parameters on the natural (positive) scale."""
        return np.exp(self.eta_diag)

    def off_values(self):
        if self.family in ("basic", "modified"):
            return self.eta_off
        return LINKS["rho"].inverse(self.eta_off)

    def _shrink(self, value):
        return value[0] if self.single else value

    def sigma_matrices(self):
        """Per-observation covariance matrices as an (n, k, k) array.

        For the fixed-correlation family rows whose implied matrix is not
        positive definite are returned as-is; downstream density code maps
        them to -inf.
        """
        n, k = self.eta_mu.shape
        if self.family == "basic":
            linv = _factor_rows(self.diag_values(), self.eta_off, self.pair_i, self.pair_j)
            root = np.linalg.inv(linv)
            return root @ np.swapaxes(root, 1, 2)
        if self.family == "modified":
            lam_diag = self.diag_values() ** -0.5
            lam_off = -self.eta_off * lam_diag[:, self.pair_j]
            linv = _factor_rows(lam_diag, lam_off, self.pair_i, self.pair_j)
            root = np.linalg.inv(linv)
            return root @ np.swapaxes(root, 1, 2)
        sd = self.diag_values()
        if self.family == "ar1":
            rho = LINKS["rho"].inverse(self.eta_off[:, 0])
            expo = np.abs(np.arange(k)[:, None] - np.arange(k)[None, :])
            corr = rho[:, None, None] ** expo[None, :, :]
        else:
            rho = LINKS["rho"].inverse(self.eta_off)
            corr = np.zeros((n, k, k))
            corr[:, self.pair_i, self.pair_j] = rho
            corr = corr + np.swapaxes(corr, 1, 2)
            corr[:, np.arange(k), np.arange(k)] = 1.0
        return sd[:, :, None] * corr * sd[:, None, :]


def _factor_rows(diag, off, pair_i, pair_j):
    """Batch of lower-triangular inverse factors, shape (n, k, k)."""
    n, k = diag.shape
    m = np.zeros((n, k, k))
    m[:, np.arange(k), np.arange(k)] = diag
    if len(pair_i):
        m[:, pair_j, pair_i] = off
    return m


class DerivativeBundle:
    """First and diagonal second predictor derivatives per coordinate block.

    ``first``/``second`` map block names ("mu", "diag", "off") to arrays
    shaped like the bundle's predictor arrays.  The working residual and
    whitened residual are kept for reuse by the fitter.
    """

    def __init__(self, first, second, loglik, resid, whitened=None):
        self.first = first
        self.second = second
        self.loglik = loglik
        self.resid = resid
        self.whitened = whitened


def _resid(bundle, y):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape != bundle.eta_mu.shape:
        raise ValueError(f"response shape {y.shape} does not match bundle")
    return np.ascontiguousarray(y - bundle.eta_mu)


def total_loglik(per_obs):
    """Sum per-observation log-likelihood contributions.

    Uses exact compensated summation for large samples so that model
    comparisons are not perturbed by accumulation order.
    """
    per_obs = np.asarray(per_obs, dtype=float)
    if per_obs.size > 10_000:
        return math.fsum(per_obs.tolist())
    return float(np.sum(per_obs))


def loglik_basic(bundle, y):
    """Log-density under the inverse-factor parameterization."""
    resid = _resid(bundle, y)
    ll = kernels.basic_loglik(
        np.ascontiguousarray(bundle.diag_values()),
        np.ascontiguousarray(bundle.eta_off),
        bundle.pair_i,
        bundle.pair_j,
        resid,
    )
    return bundle._shrink(ll)


def loglik_modified(bundle, y):
    """Log-density under the innovation parameterization."""
    resid = _resid(bundle, y)
    ll = kernels.modified_loglik(
        np.ascontiguousarray(bundle.diag_values()),
        np.ascontiguousarray(bundle.eta_off),
        bundle.pair_i,
        bundle.pair_j,
        resid,
    )
    return bundle._shrink(ll)


def derivs_basic(bundle, y):
    """Analytic first and diagonal second derivatives, basic family."""
    resid = _resid(bundle, y)
    out = kernels.basic_derivs(
        np.ascontiguousarray(bundle.diag_values()),
        np.ascontiguousarray(bundle.eta_off),
        bundle.pair_i,
        bundle.pair_j,
        resid,
    )
    ll, g_mu, g_diag, g_off, h_mu, h_diag, h_off = out
    sq = bundle._shrink
    return DerivativeBundle(
        first={"mu": sq(g_mu), "diag": sq(g_diag), "off": sq(g_off)},
        second={"mu": sq(h_mu), "diag": sq(h_diag), "off": sq(h_off)},
        loglik=sq(ll),
        resid=sq(resid),
    )


def derivs_modified(bundle, y):
    """Analytic first and diagonal second derivatives, modified family."""
    resid = _resid(bundle, y)
    out = kernels.modified_derivs(
        np.ascontiguousarray(bundle.diag_values()),
        np.ascontiguousarray(bundle.eta_off),
        bundle.pair_i,
        bundle.pair_j,
        resid,
    )
    ll, g_mu, g_diag, g_off, h_mu, h_diag, h_off = out
    sq = bundle._shrink
    return DerivativeBundle(
        first={"mu": sq(g_mu), "diag": sq(g_diag), "off": sq(g_off)},
        second={"mu": sq(h_mu), "diag": sq(h_diag), "off": sq(h_off)},
        loglik=sq(ll),
        resid=sq(resid),
    )


def grad_basic(bundle, y):
    return derivs_basic(bundle, y)


def hess_diag_basic(bundle, y):
    return derivs_basic(bundle, y)


def grad_modified(bundle, y):
    return derivs_modified(bundle, y)


def hess_diag_modified(bundle, y):
    return derivs_modified(bundle, y)


def loglik_generic(mu, sigma, y):
    """Dense-algebra Gaussian log-density; the oracle for everything else."""
    if isinstance(sigma, CovarianceMatrix):
        sigma = sigma.entries
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    k = mu.shape[-1]
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0 or not np.isfinite(logdet):
        raise NumericalError("covariance matrix is singular or indefinite")
    resid = y - mu
    try:
        quad = resid @ np.linalg.solve(sigma, resid)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc)) from exc
    return float(-0.5 * (k * LOG_2PI + logdet + quad))


def gauss_loglik_rows(mu, sigmas, y):
    """Batched generic log-density; non-positive-definite rows give -inf."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    sigmas = np.asarray(sigmas, dtype=float)
    n, k = mu.shape
    resid = y - mu
    out = np.full(n, -np.inf)
    sign, logdet = np.linalg.slogdet(sigmas)
    # slogdet alone cannot distinguish PD from indefinite with even negatives
    eigmin = np.linalg.eigvalsh(sigmas)[:, 0]
    ok = (sign > 0) & np.isfinite(logdet) & (eigmin > 0)
    if np.any(ok):
        sol = np.linalg.solve(sigmas[ok], resid[ok][:, :, None])[:, :, 0]
        quad = np.einsum("ni,ni->n", resid[ok], sol)
        out[ok] = -0.5 * (k * LOG_2PI + logdet[ok] + quad)
    return out


def loglik_reference(bundle, y):
    """Log-density for the AR1 / fixed-correlation reference bundles."""
    y2 = np.atleast_2d(np.asarray(y, dtype=float))
    ll = gauss_loglik_rows(bundle.eta_mu, bundle.sigma_matrices(), y2)
    return bundle._shrink(ll)


def fd_step(eta):
    """Central-difference step size used throughout."""
    return np.maximum(1e-5, 1e-7 * np.abs(eta))


def grad_reference(family, bundle, y):
    """Reference-family derivatives: analytic for the means, finite
    differences (one Richardson level) for scale and correlation predictors.

    Raises :class:`NumericalError` when the covariance at the evaluation
    point itself is not positive definite, which the fitter treats as a
    step rejection.
    """
    if family != bundle.family:
        raise ValueError(f"bundle family {bundle.family!r} != {family!r}")
    y2 = np.atleast_2d(np.asarray(y, dtype=float))
    resid = y2 - bundle.eta_mu
    sigmas = bundle.sigma_matrices()
    f0 = gauss_loglik_rows(bundle.eta_mu, sigmas, y2)
    if not np.all(np.isfinite(f0)):
        raise NumericalError("covariance not positive definite at evaluation point")
    try:
        prec = np.linalg.inv(sigmas)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc)) from exc
    g_mu = np.einsum("nij,nj->ni", prec, resid)
    h_mu = -prec[:, np.arange(bundle.dim), np.arange(bundle.dim)]

    def block_fd(attr, ncol):
        base = getattr(bundle, attr)
        g = np.empty_like(base)
        h = np.empty_like(base)
        for c in range(ncol):
            h_c = fd_step(base[:, c])
            evals = []
            for t in (-2.0, -1.0, 1.0, 2.0):
                shifted = base.copy()
                shifted[:, c] = base[:, c] + t * h_c
                per = PredictorBundle(
                    bundle.family,
                    bundle.dim,
                    bundle.eta_mu,
                    bundle.eta_diag if attr != "eta_diag" else shifted,
                    bundle.eta_off if attr != "eta_off" else shifted,
                    ad_order=bundle.ad_order,
                )
                evals.append(gauss_loglik_rows(per.eta_mu, per.sigma_matrices(), y2))
            fm2, fm1, fp1, fp2 = evals
            g[:, c] = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h_c)
            h[:, c] = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (
                12.0 * h_c * h_c
            )
        return g, h

    g_sd, h_sd = block_fd("eta_diag", bundle.dim)
    g_corr, h_corr = block_fd("eta_off", bundle.eta_off.shape[1])
    if not all(
        np.all(np.isfinite(a)) for a in (g_sd, h_sd, g_corr, h_corr)
    ):
        raise NumericalError("finite differencing crossed a non-PD region")
    sq = bundle._shrink
    return DerivativeBundle(
        first={"mu": sq(g_mu), "diag": sq(g_sd), "off": sq(g_corr)},
        second={"mu": sq(h_mu), "diag": sq(h_sd), "off": sq(h_corr)},
        loglik=sq(f0),
        resid=sq(resid),
    )


def family_loglik(bundle, y):
    """Dispatch per-observation log-likelihood by bundle family."""
    if bundle.family == "basic":
        return loglik_basic(bundle, y)
    if bundle.family == "modified":
        return loglik_modified(bundle, y)
    return loglik_reference(bundle, y)


def family_derivs(bundle, y):
    """Dispatch derivative evaluation by bundle family."""
    if bundle.family == "basic":
        return derivs_basic(bundle, y)
    if bundle.family == "modified":
        return derivs_modified(bundle, y)
    return grad_reference(bundle.family, bundle, y)
