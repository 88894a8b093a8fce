# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled evaluation kernels; same contract as ``cholgauss._kernels_np``.

Each routine makes a single O(k + p) pass per observation instead of
materializing the dense (n, k, k) parameter matrices the NumPy fallback
uses, which is what makes repeated calls inside the fitting and sampling
loops cheap.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log

cnp.import_array()

BACKEND = "compiled"

cdef double LOG_2PI = 1.8378770664093453


def basic_loglik(const double[:, ::1] lam_diag, const double[:, ::1] lam_off,
                 const long[::1] pair_i, const long[::1] pair_j, const double[:, ::1] resid):
    cdef Py_ssize_t n = resid.shape[0]
    cdef Py_ssize_t k = resid.shape[1]
    cdef Py_ssize_t p = pair_i.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ll = np.empty(n)
    cdef double[::1] llv = ll
    cdef double[::1] z = np.empty(k)
    cdef Py_ssize_t o, i, q
    cdef double acc
    for o in range(n):
        for i in range(k):
            z[i] = lam_diag[o, i] * resid[o, i]
        for q in range(p):
            z[pair_j[q]] += lam_off[o, q] * resid[o, pair_i[q]]
        acc = -0.5 * k * LOG_2PI
        for i in range(k):
            acc += log(lam_diag[o, i]) - 0.5 * z[i] * z[i]
        llv[o] = acc
    return ll


def basic_derivs(const double[:, ::1] lam_diag, const double[:, ::1] lam_off,
                 const long[::1] pair_i, const long[::1] pair_j, const double[:, ::1] resid):
    cdef Py_ssize_t n = resid.shape[0]
    cdef Py_ssize_t k = resid.shape[1]
    cdef Py_ssize_t p = pair_i.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ll = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_mu = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_diag = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_off = np.empty((n, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h_mu = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h_diag = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h_off = np.empty((n, p))
    cdef double[::1] llv = ll
    cdef double[:, ::1] gmu = g_mu, gld = g_diag, glo = g_off
    cdef double[:, ::1] hmu = h_mu, hld = h_diag, hlo = h_off
    cdef double[::1] z = np.empty(k)
    cdef Py_ssize_t o, i, q
    cdef double acc, dz, lo
    for o in range(n):
        for i in range(k):
            z[i] = lam_diag[o, i] * resid[o, i]
        for q in range(p):
            z[pair_j[q]] += lam_off[o, q] * resid[o, pair_i[q]]
        acc = -0.5 * k * LOG_2PI
        for i in range(k):
            acc += log(lam_diag[o, i]) - 0.5 * z[i] * z[i]
            dz = lam_diag[o, i] * resid[o, i]
            gmu[o, i] = lam_diag[o, i] * z[i]
            hmu[o, i] = -lam_diag[o, i] * lam_diag[o, i]
            g_diag[o, i] = 1.0 - dz * z[i]
            h_diag[o, i] = -dz * dz - dz * z[i]
        llv[o] = acc
        for q in range(p):
            lo = lam_off[o, q]
            gmu[o, pair_i[q]] += lo * z[pair_j[q]]
            hmu[o, pair_i[q]] -= lo * lo
            glo[o, q] = -resid[o, pair_i[q]] * z[pair_j[q]]
            hlo[o, q] = -resid[o, pair_i[q]] * resid[o, pair_i[q]]
    return ll, g_mu, g_diag, g_off, h_mu, h_diag, h_off


def modified_loglik(const double[:, ::1] psi, const double[:, ::1] phi,
                    const long[::1] pair_i, const long[::1] pair_j, const double[:, ::1] resid):
    cdef Py_ssize_t n = resid.shape[0]
    cdef Py_ssize_t k = resid.shape[1]
    cdef Py_ssize_t p = pair_i.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ll = np.empty(n)
    cdef double[::1] llv = ll
    cdef double[::1] u = np.empty(k)
    cdef Py_ssize_t o, i, q
    cdef double acc
    for o in range(n):
        for i in range(k):
            u[i] = -resid[o, i]
        for q in range(p):
            u[pair_j[q]] += phi[o, q] * resid[o, pair_i[q]]
        acc = -0.5 * k * LOG_2PI
        for i in range(k):
            acc -= 0.5 * (log(psi[o, i]) + u[i] * u[i] / psi[o, i])
        llv[o] = acc
    return ll


def modified_derivs(const double[:, ::1] psi, const double[:, ::1] phi,
                    const long[::1] pair_i, const long[::1] pair_j, const double[:, ::1] resid):
    cdef Py_ssize_t n = resid.shape[0]
    cdef Py_ssize_t k = resid.shape[1]
    cdef Py_ssize_t p = pair_i.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ll = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_mu = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_diag = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_off = np.empty((n, p))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h_mu = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h_diag = np.empty((n, k))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h_off = np.empty((n, p))
    cdef double[::1] llv = ll
    cdef double[:, ::1] gmu = g_mu, gpsi = g_diag, gphi = g_off
    cdef double[:, ::1] hmu = h_mu, hpsi = h_diag, hphi = h_off
    cdef double[::1] u = np.empty(k)
    cdef Py_ssize_t o, i, q
    cdef double acc, up, ph
    for o in range(n):
        for i in range(k):
            u[i] = -resid[o, i]
        for q in range(p):
            u[pair_j[q]] += phi[o, q] * resid[o, pair_i[q]]
        acc = -0.5 * k * LOG_2PI
        for i in range(k):
            up = u[i] / psi[o, i]
            acc -= 0.5 * (log(psi[o, i]) + u[i] * up)
            gmu[o, i] = -up
            hmu[o, i] = -1.0 / psi[o, i]
            gpsi[o, i] = 0.5 * (u[i] * up - 1.0)
            hpsi[o, i] = -0.5 * u[i] * up
        llv[o] = acc
        for q in range(p):
            ph = phi[o, q]
            up = u[pair_j[q]] / psi[o, pair_j[q]]
            gmu[o, pair_i[q]] += ph * up
            hmu[o, pair_i[q]] -= ph * ph / psi[o, pair_j[q]]
            gphi[o, q] = -resid[o, pair_i[q]] * up
            hphi[o, q] = -resid[o, pair_i[q]] * resid[o, pair_i[q]] / psi[o, pair_j[q]]
    return ll, g_mu, g_diag, g_off, h_mu, h_diag, h_off
