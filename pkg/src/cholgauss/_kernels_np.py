"""NumPy implementation of the per-observation evaluation kernels.

Every function is vectorized over the first axis (observations).  The
compiled Cython module ``cholgauss._kernels`` provides the same signatures;
``cholgauss.kernels`` picks whichever is available at import time.

Conventions shared by both backends:

* ``lam_diag``/``psi`` have shape (n, k) and hold the positive diagonal
  parameters (already on the natural scale, not the log-predictor scale).
* ``lam_off``/``phi`` have shape (n, p) and hold the off-diagonal
  parameters for the pair list ``(pair_i, pair_j)`` with 0-based indices
  ``pair_i < pair_j``.  Pairs excluded by an antedependence mask are simply
  absent from the list.
* ``resid`` has shape (n, k) and holds y - mu.

Derivative outputs are with respect to the additive predictors: identity
link for means and off-diagonal parameters, log link for the diagonal
parameters.
"""

import numpy as np

BACKEND = "numpy"

LOG_2PI = float(np.log(2.0 * np.pi))


def _upper_from_pairs(diag, off, pair_i, pair_j):
    """Dense (n, k, k) matrix with entry [i, j] per pair plus a diagonal."""
    n, k = diag.shape
    m = np.zeros((n, k, k))
    m[:, np.arange(k), np.arange(k)] = diag
    if len(pair_i):
        m[:, pair_i, pair_j] = off
    return m


def basic_loglik(lam_diag, lam_off, pair_i, pair_j, resid):
    """Per-observation Gaussian log-density from inverse-Cholesky entries."""
    k = lam_diag.shape[1]
    lam = _upper_from_pairs(lam_diag, lam_off, pair_i, pair_j)
    z = np.einsum("nmj,nm->nj", lam, resid)
    return (
        -0.5 * k * LOG_2PI
        + np.sum(np.log(lam_diag), axis=1)
        - 0.5 * np.sum(z * z, axis=1)
    )


def basic_derivs(lam_diag, lam_off, pair_i, pair_j, resid):
    """Log-density with first and diagonal second predictor derivatives.

    Returns ``(ll, g_mu, g_diag, g_off, h_mu, h_diag, h_off)`` where the
    g/h arrays match the shapes of the corresponding parameter inputs.
    """
    k = lam_diag.shape[1]
    lam = _upper_from_pairs(lam_diag, lam_off, pair_i, pair_j)
    z = np.einsum("nmj,nm->nj", lam, resid)
    ll = (
        -0.5 * k * LOG_2PI
        + np.sum(np.log(lam_diag), axis=1)
        - 0.5 * np.sum(z * z, axis=1)
    )
    g_mu = np.einsum("nij,nj->ni", lam, z)
    h_mu = -np.sum(lam * lam, axis=2)
    dz = lam_diag * resid
    g_diag = 1.0 - dz * z
    h_diag = -dz * dz - dz * z
    if len(pair_i):
        g_off = -resid[:, pair_i] * z[:, pair_j]
        h_off = -resid[:, pair_i] ** 2
    else:
        g_off = np.zeros_like(lam_off)
        h_off = np.zeros_like(lam_off)
    return ll, g_mu, g_diag, g_off, h_mu, h_diag, h_off


def _innovations(phi, pair_i, pair_j, resid):
    # u_j = sum_{m<j} phi_mj * resid_m - resid_j  (the phi_jj = -1 convention)
    u = -resid.copy()
    if len(pair_i):
        n, k = resid.shape
        phim = np.zeros((n, k, k))
        phim[:, pair_i, pair_j] = phi
        u = u + np.einsum("nmj,nm->nj", phim, resid)
    return u


def modified_loglik(psi, phi, pair_i, pair_j, resid):
    """Per-observation Gaussian log-density from innovation parameters."""
    k = psi.shape[1]
    u = _innovations(phi, pair_i, pair_j, resid)
    return (
        -0.5 * k * LOG_2PI
        - 0.5 * np.sum(np.log(psi), axis=1)
        - 0.5 * np.sum(u * u / psi, axis=1)
    )


def modified_derivs(psi, phi, pair_i, pair_j, resid):
    """Like :func:`basic_derivs` for the innovation parameterization."""
    n, k = psi.shape
    u = _innovations(phi, pair_i, pair_j, resid)
    ll = (
        -0.5 * k * LOG_2PI
        - 0.5 * np.sum(np.log(psi), axis=1)
        - 0.5 * np.sum(u * u / psi, axis=1)
    )
    upsi = u / psi
    g_mu = -upsi
    h_mu = -1.0 / psi
    if len(pair_i):
        phim = np.zeros((n, k, k))
        phim[:, pair_i, pair_j] = phi
        g_mu = g_mu + np.einsum("nij,nj->ni", phim, upsi)
        h_mu = h_mu - np.einsum("nij,nj->ni", phim * phim, 1.0 / psi)
        g_off = -resid[:, pair_i] * upsi[:, pair_j]
        h_off = -resid[:, pair_i] ** 2 / psi[:, pair_j]
    else:
        g_off = np.zeros_like(phi)
        h_off = np.zeros_like(phi)
    g_diag = 0.5 * (u * upsi - 1.0)
    h_diag = -0.5 * u * upsi
    return ll, g_mu, g_diag, g_off, h_mu, h_diag, h_off
