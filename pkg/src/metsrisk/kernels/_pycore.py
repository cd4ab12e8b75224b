"""Numpy fallback implementations of the sweep kernels.

Semantics match the compiled backend exactly; see ``kernels/__init__``.
"""

import numpy as np
from scipy.linalg import cholesky, solve_triangular


def subject_sums(resid: np.ndarray, subject_of: np.ndarray, n_subjects: int) -> np.ndarray:
    """Row sums of ``resid`` grouped by subject: output (n_subjects, K)."""
    k = resid.shape[1]
    out = np.empty((n_subjects, k))
    for j in range(k):
        out[:, j] = np.bincount(subject_of, weights=resid[:, j], minlength=n_subjects)
    return out


def beta_scan(x, resid, beta, sxx, prior_var, q_y, eps):
    """One systematic scan of the per-covariate coefficient block.

    For each covariate p (in order), draws the K-vector beta[p] from its
    Gaussian full conditional given all other coefficients and the prior
    variance ``prior_var[p]``, keeping ``resid = adjusted_y - x @ beta - b``
    up to date via rank-one corrections. ``eps`` supplies the (P, K)
    standard-normal innovations. Modifies ``resid`` and ``beta`` in place.
    """
    n_cov, k = beta.shape
    eye = np.eye(k)
    for p in range(n_cov):
        xp = x[:, p]
        v = xp @ resid
        u = v + sxx[p] * beta[p]
        lam = sxx[p] * q_y + (1.0 / prior_var[p]) * eye
        chol = cholesky(lam, lower=True)
        eta = q_y @ u
        w = solve_triangular(chol, eta, lower=True)
        mean = solve_triangular(chol.T, w, lower=False)
        new = mean + solve_triangular(chol.T, eps[p], lower=False)
        delta = beta[p] - new
        resid += np.outer(xp, delta)
        beta[p] = new


def impute_waist_lagged(yw, mu_base, phi, delta_t, prev_row, next_row,
                        miss_rows, sigma_y, q_y, cond_w, cond_var, eps):
    """Sequentially redraw missing component-0 values under the lagged model.

    Each missing cell's full conditional combines the within-visit
    conditional normal given the observed components with the Gaussian term
    contributed by the following visit (whose mean depends on this value
    through the decayed lag). ``yw`` is updated in place so later cells in
    the scan condition on the freshly drawn ones.
    """
    for idx in range(miss_rows.shape[0]):
        n = miss_rows[idx]
        mu_n = mu_base[n].copy()
        if prev_row[n] >= 0:
            mu_n += np.exp(-phi * delta_t[n]) * yw[prev_row[n]]
        m_a = mu_n[0] + cond_w @ (yw[n, 1:] - mu_n[1:])
        prec = 1.0 / cond_var
        eta = m_a / cond_var
        m = next_row[n]
        if m >= 0:
            decay_m = np.exp(-phi * delta_t[m])
            c = decay_m[0]
            lag = decay_m * yw[n]
            lag[0] = 0.0
            r_m = yw[m] - mu_base[m] - lag
            qr = q_y @ r_m
            eta += c * qr[0]
            prec += c * c * q_y[0, 0]
        var = 1.0 / prec
        yw[n, 0] = eta * var + np.sqrt(var) * eps[idx]
