# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sweep kernels; semantics match kernels._pycore exactly."""

from libc.math cimport exp, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF K_MAX = 16


cdef inline int _chol(double* a, double* l, int k) nogil:
    """Lower Cholesky of the k x k row-major matrix ``a`` into ``l``."""
    cdef int i, j, m
    cdef double s
    for i in range(k):
        for j in range(i + 1):
            s = a[i * k + j]
            for m in range(j):
                s -= l[i * k + m] * l[j * k + m]
            if i == j:
                if s <= 0.0:
                    return -1
                l[i * k + j] = sqrt(s)
            else:
                l[i * k + j] = s / l[j * k + j]
    return 0


cdef inline void _solve_lower(double* l, double* rhs, double* out, int k) nogil:
    cdef int i, m
    cdef double s
    for i in range(k):
        s = rhs[i]
        for m in range(i):
            s -= l[i * k + m] * out[m]
        out[i] = s / l[i * k + i]


cdef inline void _solve_upper_t(double* l, double* rhs, double* out, int k) nogil:
    """Solve L^T out = rhs with L lower triangular."""
    cdef int i, m
    cdef double s
    for i in range(k - 1, -1, -1):
        s = rhs[i]
        for m in range(i + 1, k):
            s -= l[m * k + i] * out[m]
        out[i] = s / l[i * k + i]


def subject_sums(double[:, ::1] resid, cnp.intp_t[::1] subject_of, int n_subjects):
    cdef int n = resid.shape[0]
    cdef int k = resid.shape[1]
    out_arr = np.zeros((n_subjects, k))
    cdef double[:, ::1] out = out_arr
    cdef int i, j
    cdef cnp.intp_t s
    with nogil:
        for i in range(n):
            s = subject_of[i]
            for j in range(k):
                out[s, j] += resid[i, j]
    return out_arr


def beta_scan(double[:, ::1] x, double[:, ::1] resid, double[:, ::1] beta,
              double[::1] sxx, double[::1] prior_var, double[:, ::1] q_y,
              double[:, ::1] eps):
    cdef int n = x.shape[0]
    cdef int n_cov = beta.shape[0]
    cdef int k = beta.shape[1]
    if k > K_MAX:
        raise ValueError("outcome dimension exceeds compiled kernel limit")
    cdef double[K_MAX * K_MAX] lam
    cdef double[K_MAX * K_MAX] chol
    cdef double[K_MAX] v
    cdef double[K_MAX] u
    cdef double[K_MAX] eta
    cdef double[K_MAX] w
    cdef double[K_MAX] mean
    cdef double[K_MAX] noise
    cdef double[K_MAX] delta
    cdef int p, i, j, m
    cdef double xp, s
    with nogil:
        for p in range(n_cov):
            for j in range(k):
                v[j] = 0.0
            for i in range(n):
                xp = x[i, p]
                if xp != 0.0:
                    for j in range(k):
                        v[j] += xp * resid[i, j]
            for j in range(k):
                u[j] = v[j] + sxx[p] * beta[p, j]
            for i in range(k):
                for j in range(k):
                    lam[i * k + j] = sxx[p] * q_y[i, j]
                lam[i * k + i] += 1.0 / prior_var[p]
            if _chol(lam, chol, k) != 0:
                with gil:
                    raise np.linalg.LinAlgError("coefficient precision not positive definite")
            for i in range(k):
                s = 0.0
                for j in range(k):
                    s += q_y[i, j] * u[j]
                eta[i] = s
            _solve_lower(chol, eta, w, k)
            _solve_upper_t(chol, w, mean, k)
            for j in range(k):
                eta[j] = eps[p, j]
            _solve_upper_t(chol, eta, noise, k)
            for j in range(k):
                s = mean[j] + noise[j]
                delta[j] = beta[p, j] - s
                beta[p, j] = s
            for i in range(n):
                xp = x[i, p]
                if xp != 0.0:
                    for j in range(k):
                        resid[i, j] += xp * delta[j]


def impute_waist_lagged(double[:, ::1] yw, double[:, ::1] mu_base, double[::1] phi,
                        double[::1] delta_t, cnp.intp_t[::1] prev_row,
                        cnp.intp_t[::1] next_row, cnp.intp_t[::1] miss_rows,
                        double[:, ::1] sigma_y, double[:, ::1] q_y,
                        double[::1] cond_w, double cond_var, double[::1] eps):
    cdef int n_miss = miss_rows.shape[0]
    cdef int k = yw.shape[1]
    if k > K_MAX:
        raise ValueError("outcome dimension exceeds compiled kernel limit")
    cdef double[K_MAX] mu_n
    cdef double[K_MAX] r_m
    cdef int idx, j, jj
    cdef cnp.intp_t n, m, pr
    cdef double m_a, prec, eta, c, dec, var, qr0
    with nogil:
        for idx in range(n_miss):
            n = miss_rows[idx]
            pr = prev_row[n]
            for j in range(k):
                mu_n[j] = mu_base[n, j]
            if pr >= 0:
                for j in range(k):
                    mu_n[j] += exp(-phi[j] * delta_t[n]) * yw[pr, j]
            m_a = mu_n[0]
            for j in range(1, k):
                m_a += cond_w[j - 1] * (yw[n, j] - mu_n[j])
            prec = 1.0 / cond_var
            eta = m_a / cond_var
            m = next_row[n]
            if m >= 0:
                c = exp(-phi[0] * delta_t[m])
                for j in range(k):
                    if j == 0:
                        dec = 0.0
                    else:
                        dec = exp(-phi[j] * delta_t[m]) * yw[n, j]
                    r_m[j] = yw[m, j] - mu_base[m, j] - dec
                qr0 = 0.0
                for jj in range(k):
                    qr0 += q_y[0, jj] * r_m[jj]
                eta += c * qr0
                prec += c * c * q_y[0, 0]
            var = 1.0 / prec
            yw[n, 0] = eta * var + sqrt(var) * eps[idx]
