"""Covariance parameterizations and conversions.

Two unconstrained parameterizations are supported: the entries of the
inverse Cholesky factor (``InverseCholFactor``) and the innovation
variance / autoregression form (``ModifiedCholParams``), plus the two
constrained reference forms (AR1 and fixed correlation).  Index pairs are
1-based in public dict interfaces, matching the usual subscript notation
(e.g. ``phi[(1, 2)]``); internally pairs are stored as dense vectors in
the canonical order (1,2), (1,3), (2,3), (1,4), ... .
"""

import numpy as np
import scipy.linalg


class InvalidParameterError(ValueError):
    """A parameter value violates its domain (e.g. non-positive variance)."""


def pair_order(k, max_lag=None):
    """0-based (i, j) index arrays for the upper triangle, canonical order.

    ``max_lag`` keeps only pairs with ``j - i <= max_lag`` (antedependence
    banding).
    """
    pi, pj = [], []
    for j in range(1, k):
        for i in range(j):
            if max_lag is None or j - i <= max_lag:
                pi.append(i)
                pj.append(j)
    return np.asarray(pi, dtype=np.int64), np.asarray(pj, dtype=np.int64)


def pair_index(i, j):
    """Position of 0-based pair (i, j), i < j, in the canonical order."""
    if not 0 <= i < j:
        raise ValueError(f"need 0 <= i < j, got ({i}, {j})")
    return i + j * (j - 1) // 2


class ADMask:
    """Antedependence structure of order ``r``: pairs beyond lag r are zero."""

    def __init__(self, dim, order):
        if order < 0:
            raise InvalidParameterError("antedependence order must be >= 0")
        self.dim = dim
        self.order = order

    def is_active(self, i, j):
        return 0 < j - i <= self.order

    def active_pairs(self):
        return pair_order(self.dim, self.order)

    @property
    def n_active(self):
        return len(self.active_pairs()[0])

    @property
    def n_masked(self):
        return self.dim * (self.dim - 1) // 2 - self.n_active

    @property
    def n_modeled(self):
        """Modeled covariance parameters: active pairs plus the diagonal."""
        return self.n_active + self.dim

    def __eq__(self, other):
        return (
            isinstance(other, ADMask)
            and self.dim == other.dim
            and self.order == other.order
        )

    def __repr__(self):
        return f"ADMask(dim={self.dim}, order={self.order})"


def _check_offdiag(k, offdiag):
    offdiag = np.atleast_1d(np.asarray(offdiag, dtype=float))
    want = k * (k - 1) // 2
    if offdiag.shape != (want,):
        raise InvalidParameterError(
            f"expected {want} off-diagonal entries for dim {k}, got {offdiag.shape}"
        )
    if not np.all(np.isfinite(offdiag)):
        raise InvalidParameterError("off-diagonal entries must be finite")
    return offdiag


def _offdiag_from_map(k, mapping):
    out = np.zeros(k * (k - 1) // 2)
    for (i, j), val in mapping.items():
        if not 1 <= i < j <= k:
            raise InvalidParameterError(f"pair ({i}, {j}) out of range for dim {k}")
        out[pair_index(i - 1, j - 1)] = val
    return out


class _TriangularParams:
    """Shared storage/validation for the two Cholesky-style containers."""

    _diag_label = "diag"

    def __init__(self, diag, offdiag=None, mask=None):
        diag = np.atleast_1d(np.asarray(diag, dtype=float))
        k = diag.shape[0]
        if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
            raise InvalidParameterError(
                f"{self._diag_label} entries must be strictly positive and finite"
            )
        if offdiag is None:
            offdiag = np.zeros(k * (k - 1) // 2)
        elif isinstance(offdiag, dict):
            offdiag = _offdiag_from_map(k, offdiag)
        offdiag = _check_offdiag(k, offdiag)
        if mask is not None:
            if mask.dim != k:
                raise InvalidParameterError("mask dimension mismatch")
            pi, pj = pair_order(k)
            inactive = (pj - pi) > mask.order
            offdiag = offdiag.copy()
            offdiag[inactive] = 0.0
        self.dim = k
        self._diag = diag
        self._offdiag = offdiag
        self.mask = mask
        diag.flags.writeable = False
        offdiag.flags.writeable = False

    def offdiag_map(self):
        """Off-diagonal entries keyed by 1-based (i, j)."""
        pi, pj = pair_order(self.dim)
        return {
            (int(i) + 1, int(j) + 1): float(v)
            for i, j, v in zip(pi, pj, self._offdiag)
        }

    @property
    def offdiag(self):
        return self._offdiag


class InverseCholFactor(_TriangularParams):
    """Entries of the inverse Cholesky factor of a covariance matrix.

    ``diag`` holds the positive diagonal entries; ``offdiag`` the strictly
    upper-triangular entries (any real value).  Every admissible instance
    maps to a symmetric positive definite covariance, with no joint
    constraints among the entries.
    """

    _diag_label = "inverse-factor diagonal"

    @property
    def lam_diag(self):
        return self._diag

    def inverse_factor(self):
        """The lower-triangular k x k matrix whose transpose is upper."""
        k = self.dim
        m = np.diag(self._diag)
        pi, pj = pair_order(k)
        m[pj, pi] = self._offdiag
        return m


class ModifiedCholParams(_TriangularParams):
    """Innovation variances and generalized autoregression coefficients.

    Component j regresses on components 1..j-1 with coefficients
    ``phi[(i, j)]``, and ``psi[j]`` is the residual (innovation) variance.
    """

    _diag_label = "innovation variance"

    @property
    def psi(self):
        return self._diag

    @property
    def phi(self):
        return self._offdiag

    def tmatrix(self):
        """Lower unitriangular T with -phi_ij below the diagonal."""
        k = self.dim
        m = np.eye(k)
        pi, pj = pair_order(k)
        m[pj, pi] = -self._offdiag
        return m


class CovarianceMatrix:
    """A symmetric positive definite covariance with a cached precision.

    The precision cache is idempotent: concurrent readers may compute it
    twice but always observe a fully-built matrix.
    """

    def __init__(self, entries, _root_inverse=None):
        entries = np.asarray(entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidParameterError("covariance must be a square matrix")
        if not np.allclose(entries, entries.T, atol=1e-8, rtol=1e-8):
            raise InvalidParameterError("covariance must be symmetric")
        entries = 0.5 * (entries + entries.T)
        if np.any(np.diag(entries) <= 0):
            raise InvalidParameterError("covariance diagonal must be positive")
        self.dim = entries.shape[0]
        self.entries = entries
        self.entries.flags.writeable = False
        self._root_inverse = _root_inverse  # lower-triangular L^{-1} if known
        self._precision = None
        self._chol = None

    @classmethod
    def from_matrix(cls, entries):
        """Validate an arbitrary symmetric matrix as a covariance.

        Eigenvalues slightly below zero (within -1e-10 of the largest) are
        treated as rounding noise and clamped.
        """
        entries = np.asarray(entries, dtype=float)
        entries = 0.5 * (entries + entries.T)
        eigval, eigvec = np.linalg.eigh(entries)
        top = eigval[-1]
        if top <= 0 or eigval[0] <= -1e-10 * top:
            raise InvalidParameterError(
                f"matrix is not positive definite (min eigenvalue {eigval[0]:.3e})"
            )
        if eigval[0] <= 0:
            eigval = np.maximum(eigval, 1e-15 * top)
            entries = (eigvec * eigval) @ eigvec.T
        return cls(entries)

    @property
    def precision(self):
        if self._precision is None:
            if self._root_inverse is not None:
                r = self._root_inverse
                self._precision = r.T @ r
            else:
                self._precision = np.linalg.inv(self.entries)
        return self._precision

    def precision_entry(self, i, j):
        """(i, j) entry of the inverse, 1-based indices."""
        return float(self.precision[i - 1, j - 1])

    def cholesky_lower(self):
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.entries)
        return self._chol

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.entries)[0])


def sigma_from_basic(factor):
    """Covariance implied by an inverse Cholesky factor.

    Uses a triangular solve of the factor against the identity; no general
    matrix inversion is performed.
    """
    linv = factor.inverse_factor()
    root = scipy.linalg.solve_triangular(linv, np.eye(factor.dim), lower=True)
    return CovarianceMatrix(root @ root.T, _root_inverse=linv)


def sigma_from_modified(params):
    """Covariance implied by innovation variances and autoregressions."""
    return sigma_from_basic(modified_to_basic(params))


def modified_to_basic(params):
    """Map (psi, phi) to the inverse-factor entries.

    The diagonal becomes ``psi**-0.5`` and each off-diagonal entry
    ``-phi * psi_j**-0.5``; the two parameterizations describe the same
    covariance.
    """
    pi, pj = pair_order(params.dim)
    lam_diag = params.psi ** -0.5
    lam_off = -params.phi * lam_diag[pj]
    return InverseCholFactor(lam_diag, lam_off, mask=params.mask)


def basic_to_modified(factor):
    """Exact inverse of :func:`modified_to_basic`."""
    pi, pj = pair_order(factor.dim)
    psi = factor.lam_diag ** -2.0
    phi = -factor.offdiag / factor.lam_diag[pj]
    return ModifiedCholParams(psi, phi, mask=factor.mask)


def ar1_correlation(k, rho):
    """Correlation matrix with entries rho**|i-j|."""
    if not -1.0 < rho < 1.0:
        raise InvalidParameterError(f"AR1 coefficient must be in (-1, 1), got {rho}")
    idx = np.arange(k)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def sigma_from_ar1(sds, rho):
    """Covariance with AR1 correlation and given marginal scales."""
    sds = np.atleast_1d(np.asarray(sds, dtype=float))
    if np.any(sds <= 0):
        raise InvalidParameterError("scales must be positive")
    corr = ar1_correlation(len(sds), float(rho))
    return CovarianceMatrix(sds[:, None] * corr * sds[None, :])


def sigma_from_const_corr(sds, corr):
    """Covariance from marginal scales and an explicit correlation matrix.

    Unlike the Cholesky forms, positive definiteness is NOT automatic here
    and is verified; failures raise :class:`InvalidParameterError`.
    """
    sds = np.atleast_1d(np.asarray(sds, dtype=float))
    corr = np.asarray(corr, dtype=float)
    if np.any(sds <= 0):
        raise InvalidParameterError("scales must be positive")
    if corr.shape != (len(sds), len(sds)):
        raise InvalidParameterError("correlation matrix has wrong shape")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-10):
        raise InvalidParameterError("correlation matrix must have unit diagonal")
    validated = CovarianceMatrix.from_matrix(corr)
    return CovarianceMatrix.from_matrix(
        sds[:, None] * validated.entries * sds[None, :]
    )


def correlation_from_sigma(sigma):
    """Split a covariance into marginal variances and a correlation matrix."""
    variances = np.diag(sigma.entries).copy()
    sd = np.sqrt(variances)
    corr = sigma.entries / sd[:, None] / sd[None, :]
    np.fill_diagonal(corr, 1.0)
    return variances, corr


def apply_ad_mask(params, mask):
    """Zero all off-diagonal entries beyond the mask's lag.

    Returns a new container of the same type carrying the mask, so the
    structural zeros stay reportable rather than silently dropped.
    """
    if mask.dim != params.dim:
        raise InvalidParameterError("mask dimension mismatch")
    if isinstance(params, ModifiedCholParams):
        return ModifiedCholParams(params.psi, params.phi, mask=mask)
    if isinstance(params, InverseCholFactor):
        return InverseCholFactor(params.lam_diag, params.offdiag, mask=mask)
    raise TypeError(f"unsupported parameter container {type(params)!r}")
