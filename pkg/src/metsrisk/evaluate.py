"""Information-criterion model comparison from per-observation log-likelihood draws.

Both criteria estimate out-of-sample predictive fit (lower is better).
WAIC penalizes the log pointwise predictive density with the per-observation
draw variance; PSIS-LOO importance-weights each draw by the inverse
likelihood and stabilizes the weight tails with a generalized-Pareto fit.
Standard errors use the usual pointwise convention sqrt(N) * sd(pointwise),
doubled for the deviance scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InputError

__all__ = ["IcReport", "waic", "psis_loo", "compare", "gpd_fit"]


@dataclass(frozen=True)
class IcReport:
    label: str
    waic: float
    waic_se: float
    looic: float
    looic_se: float
    pareto_k: np.ndarray
    n_obs: int
    elpd_waic_i: np.ndarray = field(default=None, repr=False)
    elpd_loo_i: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        ks = [None if not math.isfinite(k) else float(k) for k in self.pareto_k]
        return {
            "label": self.label, "waic": self.waic, "waic_se": self.waic_se,
            "looic": self.looic, "looic_se": self.looic_se,
            "n_obs": self.n_obs, "pareto_k": ks,
        }


def _check(loglik: np.ndarray, min_draws: int) -> np.ndarray:
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2:
        raise InputError("log-likelihood matrix must be draws x observations")
    if loglik.shape[0] < min_draws:
        raise InputError(f"need at least {min_draws} draws, got {loglik.shape[0]}")
    if not np.all(np.isfinite(loglik)):
        raise InputError("log-likelihood matrix has non-finite entries")
    return loglik


def waic(loglik: np.ndarray) -> tuple[float, float, np.ndarray]:
    """(WAIC, its SE, pointwise elpd contributions)."""
    loglik = _check(loglik, 2)
    s, n = loglik.shape
    lppd_i = logsumexp(loglik, axis=0) - math.log(s)
    p_i = loglik.var(axis=0, ddof=1)
    elpd_i = lppd_i - p_i
    total = -2.0 * float(elpd_i.sum())
    se = 2.0 * math.sqrt(n) * float(elpd_i.std(ddof=1)) if n > 1 else 0.0
    return total, se, elpd_i


def gpd_fit(exceedances: np.ndarray) -> tuple[float, float]:
    """Quantile-profile estimator of the generalized-Pareto (k, sigma).

    Zhang & Stephens (2009) style: profile over a grid of reparametrized
    slopes, weight by profile likelihood, then regularize k toward 1/2 with
    a weak prior so tiny tails stay stable.
    """
    x = np.sort(np.asarray(exceedances, dtype=float))
    n = x.size
    if n < 5 or x[-1] <= 0:
        raise InputError("generalized-Pareto fit needs at least 5 positive exceedances")
    prior_bs, prior_k = 3.0, 10.0
    m = 30 + int(math.sqrt(n))
    jj = np.arange(1, m + 1)
    bs = 1.0 - np.sqrt(m / (jj - 0.5))
    bs /= prior_bs * x[max(int(n / 4 + 0.5) - 1, 0)]
    bs += 1.0 / x[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ks = np.mean(np.log1p(-bs[:, None] * x), axis=1)
        logliks = n * (np.log(-bs / ks) - ks - 1.0)
    logliks[~np.isfinite(logliks)] = -np.inf
    with np.errstate(over="ignore"):
        weights = 1.0 / np.exp(logliks - logliks[:, None]).sum(axis=1)
    weights[~np.isfinite(weights)] = 0.0
    b_post = float(np.sum(bs * weights))
    k_post = float(np.mean(np.log1p(-b_post * x)))
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    sigma = -k_post / b_post
    return k_post, sigma


def _gpd_quantiles(p: np.ndarray, k: float, sigma: float) -> np.ndarray:
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / -k


def _smooth_tail(log_ratios: np.ndarray) -> tuple[np.ndarray, float]:
    """Pareto-smooth one observation's log importance ratios; returns
    (smoothed log weights, k-hat). k-hat is -inf for degenerate flat tails."""
    s = log_ratios.size
    tail_len = int(min(0.2 * s, 3.0 * math.sqrt(s)))
    lw = log_ratios - log_ratios.max()
    if tail_len < 5:
        return lw, -math.inf
    order = np.argsort(lw, kind="stable")
    tail_idx = order[-tail_len:]
    cutoff = lw[order[-tail_len - 1]]
    exceed = np.expm1(lw[tail_idx] - cutoff) * math.exp(cutoff)
    if exceed[-1] <= math.exp(cutoff) * 1e-12 or np.ptp(exceed) == 0.0:
        return lw, -math.inf
    k_hat, sigma = gpd_fit(exceed)
    quantiles = _gpd_quantiles((np.arange(1, tail_len + 1) - 0.5) / tail_len, k_hat, sigma)
    smoothed = np.log(np.exp(cutoff) + quantiles)
    smoothed = np.minimum(smoothed, 0.0)  # cap at the raw maximum (which is 0 after shift)
    out = lw.copy()
    out[tail_idx[np.argsort(lw[tail_idx], kind="stable")]] = np.sort(smoothed)
    return out, k_hat


def psis_loo(loglik: np.ndarray) -> tuple[float, float, np.ndarray, np.ndarray]:
    """(LOOIC, its SE, pointwise elpd, per-observation Pareto k-hat)."""
    loglik = _check(loglik, 100)
    s, n = loglik.shape
    elpd_i = np.empty(n)
    k_hat = np.empty(n)
    for i in range(n):
        log_ratios = -loglik[:, i]
        lw, k_hat[i] = _smooth_tail(log_ratios)
        norm = logsumexp(lw)
        elpd_i[i] = logsumexp(lw + loglik[:, i]) - norm
    total = -2.0 * float(elpd_i.sum())
    se = 2.0 * math.sqrt(n) * float(elpd_i.std(ddof=1)) if n > 1 else 0.0
    return total, se, elpd_i, k_hat


def report(label: str, loglik: np.ndarray) -> IcReport:
    """Compute both criteria for one model's log-likelihood draws."""
    w, w_se, elpd_w = waic(loglik)
    lo, lo_se, elpd_l, k = psis_loo(loglik)
    return IcReport(label=label, waic=w, waic_se=w_se, looic=lo, looic_se=lo_se,
                    pareto_k=k, n_obs=loglik.shape[1],
                    elpd_waic_i=elpd_w, elpd_loo_i=elpd_l)


def sum_univariate(label: str, reports: list[IcReport]) -> IcReport:
    """Aggregate independent per-outcome fits: values add, SEs add in quadrature."""
    if not reports:
        raise InputError("nothing to aggregate")
    n = reports[0].n_obs
    if any(r.n_obs != n for r in reports):
        raise InputError("aggregated reports must cover the same observations")
    return IcReport(
        label=label,
        waic=float(sum(r.waic for r in reports)),
        waic_se=math.sqrt(sum(r.waic_se**2 for r in reports)),
        looic=float(sum(r.looic for r in reports)),
        looic_se=math.sqrt(sum(r.looic_se**2 for r in reports)),
        pareto_k=np.max([r.pareto_k for r in reports], axis=0),
        n_obs=n,
    )


def compare(reports: list[IcReport]) -> dict:
    """Rank models by LOOIC (ascending) with pairwise difference calls.

    When both models carry pointwise contributions over the same
    observations the difference SE is the paired pointwise one; otherwise it
    falls back to the conservative quadrature of the two totals. A pair is
    "indistinguishable" when |difference| < its SE.
    """
    if len(reports) < 2:
        raise InputError("compare needs at least two models")
    n = reports[0].n_obs
    if any(r.n_obs != n for r in reports):
        raise InputError("models were scored on different observation counts")
    ranked = sorted(reports, key=lambda r: r.looic)
    pairs = []
    for a, b in zip(ranked, ranked[1:]):
        delta = b.looic - a.looic
        if a.elpd_loo_i is not None and b.elpd_loo_i is not None:
            diff = a.elpd_loo_i - b.elpd_loo_i
            se = 2.0 * math.sqrt(n) * float(diff.std(ddof=1))
        else:
            se = math.sqrt(a.looic_se**2 + b.looic_se**2)
        pairs.append({
            "better": a.label, "worse": b.label, "delta_looic": float(delta),
            "delta_se": float(se),
            "call": "indistinguishable" if abs(delta) < se else "better",
        })
    return {"ranking": [r.label for r in ranked], "pairs": pairs,
            "table": [r.to_dict() for r in ranked]}


def format_table(reports: list[IcReport]) -> str:
    """Aligned text table, best model first."""
    ranked = sorted(reports, key=lambda r: r.looic)
    width = max(len(r.label) for r in ranked) + 2
    lines = [f"{'model':<{width}}{'WAIC':>14}{'(SE)':>12}{'LOOIC':>14}{'(SE)':>12}"]
    for r in ranked:
        lines.append(
            f"{r.label:<{width}}{r.waic:>14,.1f}{r.waic_se:>12,.1f}"
            f"{r.looic:>14,.1f}{r.looic_se:>12,.1f}"
        )
    return "\n".join(lines)
