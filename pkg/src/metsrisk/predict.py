"""Posterior-predictive risk assessment and the traffic-light classification.

For each posterior draw, the next visit's outcome vector is simulated from
the likelihood, mapped back to clinical units, and scored with the
diagnostic rule; the fraction of positive draws estimates the probability
of meeting the criteria at the next visit.

The uncertainty interval around that probability is computed by blocking:
each chain's draws are cut into 40 consecutive blocks and the 2.5/97.5
percentiles of the block-level positive fractions give the bounds.
Percentiles of the raw 0/1 indicator sequence would be degenerate, so this
convention is what "credible interval for the risk probability" means
throughout the package (bounds are widened to include the point estimate
when blocking would otherwise exclude it).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError
from .ingest import TARGETS, unstandardize_targets
from .model import mets_indicator_array
from .rng import RngStream
from .sampler import PosteriorDraws

__all__ = [
    "RiskAssessment",
    "ThresholdReport",
    "predict_next_visit",
    "predictive_probability",
    "select_threshold",
    "classify",
    "metrics",
    "traffic_light_metrics",
]

CI_BLOCKS_PER_CHAIN = 40


@dataclass(frozen=True)
class RiskAssessment:
    subject_id: str
    p_mean: float
    ci_low: float
    ci_high: float
    per_component_prob: dict
    n_draws: int
    color: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.ci_low <= self.p_mean <= self.ci_high <= 1.0):
            raise InputError("risk bounds must satisfy 0 <= low <= mean <= high <= 1")

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "p_mean": self.p_mean,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "color": self.color,
            "per_component_prob": self.per_component_prob,
            "n_draws": self.n_draws,
        }


@dataclass(frozen=True)
class ThresholdReport:
    t_star: float
    youden_at_t_star: float
    roc_points: list  # (threshold, sensitivity, specificity)

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "youden_at_t_star": self.youden_at_t_star,
            "roc_points": [list(p) for p in self.roc_points],
        }


def _blocked_interval(indicators: np.ndarray, n_chains: int) -> tuple[float, float]:
    per_chain = indicators.reshape(n_chains, -1)
    block_means = []
    for chain in per_chain:
        n_blocks = min(CI_BLOCKS_PER_CHAIN, chain.size)
        usable = chain.size - chain.size % n_blocks
        block_means.append(chain[:usable].reshape(n_blocks, -1).mean(axis=1))
    block_means = np.concatenate(block_means)
    low, high = np.percentile(block_means, [2.5, 97.5])
    p_mean = indicators.mean()
    return float(min(low, p_mean)), float(max(high, p_mean))


def predictive_probability(draws: PosteriorDraws, x_next: np.ndarray, subject_index: int,
                           sex: str, standardization: dict, rng: RngStream,
                           lag_outcomes: np.ndarray | None = None,
                           lag_delta_t: float | None = None,
                           tcar: bool = False) -> RiskAssessment:
    """Simulate the next visit under every retained draw and score the rule.

    ``x_next`` is the already-standardized covariate vector.  For the lagged
    variant, ``lag_outcomes`` must hold the subject's last observed outcome
    row per draw (model scale, imputed waist filled in) and ``lag_delta_t``
    the years until the predicted visit.
    """
    d = draws.n_draws
    if d < 100:
        raise InputError("fewer than 100 retained draws; percentile bounds unstable")
    k = draws.mu_b.shape[1]
    mean = draws.beta @ x_next + draws.b[:, subject_index, :]
    if tcar:
        if lag_outcomes is None or lag_delta_t is None:
            raise InputError("lagged prediction needs the previous outcomes and the gap length")
        if draws.phi is None:
            raise InputError("posterior has no decay-rate draws")
        mean = mean + np.exp(-draws.phi * lag_delta_t) * lag_outcomes
    chol = np.linalg.cholesky(draws.sigma_y)
    eps = rng.generator.standard_normal((d, k))
    y_std = mean + np.einsum("dij,dj->di", chol, eps)
    y_raw = unstandardize_targets(y_std, standardization)
    indicators = mets_indicator_array(y_raw, sex)
    p_mean = float(indicators.mean())
    ci_low, ci_high = _blocked_interval(indicators.astype(float), draws.n_chains)
    male = sex == "male"
    per_component = {
        "waist_cm": float(np.mean(y_raw[:, 0] > (102.0 if male else 88.0))),
        "pmax_mmhg": float(np.mean(y_raw[:, 1] >= 130.0)),
        "glucose_mgdl": float(np.mean(y_raw[:, 2] >= 100.0)),
        "triglycerides_mgdl": float(np.mean(y_raw[:, 3] >= 150.0)),
        "hdl_mgdl": float(np.mean(y_raw[:, 4] < (40.0 if male else 50.0))),
    }
    return RiskAssessment(
        subject_id=draws.subject_ids[subject_index], p_mean=p_mean,
        ci_low=ci_low, ci_high=ci_high, per_component_prob=per_component, n_draws=d,
    )


def predict_next_visit(draws: PosteriorDraws, x_next: np.ndarray, subject_id: str,
                       sex: str, standardization: dict, rng: RngStream,
                       **lag_kwargs) -> RiskAssessment:
    """Risk assessment for a training subject's next visit (color unset)."""
    try:
        subject_index = draws.subject_ids.index(subject_id)
    except ValueError:
        raise InputError(f"unknown subject {subject_id!r}: not in the training cohort") from None
    return predictive_probability(
        draws, np.asarray(x_next, dtype=float), subject_index, sex,
        standardization, rng, **lag_kwargs,
    )


def select_threshold(assessments) -> ThresholdReport:
    """Youden-optimal probability threshold over a fixed grid.

    ``assessments`` is an iterable of (predicted probability, true 0/1
    label). The grid steps by 0.001 on [0, 0.5]; ties break toward the
    smaller threshold, favoring sensitivity.
    """
    pairs = [(float(p), int(label)) for p, label in assessments]
    probs = np.array([p for p, _ in pairs])
    labels = np.array([lab for _, lab in pairs])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InputError("threshold selection needs both positive and negative labels")
    grid = np.round(np.arange(0, 501) / 1000.0, 3)
    roc_points = []
    best_t, best_j, best_sens, best_spec = grid[0], -np.inf, 0.0, 0.0
    for t in grid:
        pred = probs >= t
        sens = float(np.sum(pred & (labels == 1)) / n_pos)
        spec = float(np.sum(~pred & (labels == 0)) / n_neg)
        j = sens + spec - 1.0
        roc_points.append((float(t), sens, spec))
        if j > best_j + 1e-12:
            best_t, best_j, best_sens, best_spec = float(t), j, sens, spec
    return ThresholdReport(t_star=best_t, youden_at_t_star=best_j, roc_points=roc_points)


def classify(assessment: RiskAssessment, t: float) -> RiskAssessment:
    """Traffic-light rule: red if the mean reaches t, else yellow if the
    upper bound does, else green."""
    if assessment.p_mean >= t:
        color = "red"
    elif assessment.ci_high >= t:
        color = "yellow"
    else:
        color = "green"
    return replace(assessment, color=color)


def metrics(tp: int, fn: int, tn: int, fp: int) -> dict:
    """Sensitivity / specificity / accuracy from binary confusion counts."""
    if tp + fn == 0 or tn + fp == 0:
        raise InputError("metrics need at least one positive and one negative truth")
    return {
        "sensitivity": tp / (tp + fn),
        "specificity": tn / (tn + fp),
        "accuracy": (tp + tn) / (tp + fn + tn + fp),
    }


def traffic_light_metrics(confusion: dict) -> dict:
    """Metrics for the three-tier system: green counts as a negative
    prediction, yellow and red as positive.

    ``confusion`` maps color -> (count true-negative, count true-positive).
    """
    for color in ("green", "yellow", "red"):
        if color not in confusion:
            raise InputError(f"confusion matrix missing the {color} row")
    tn, fn = confusion["green"]
    fp = confusion["yellow"][0] + confusion["red"][0]
    tp = confusion["yellow"][1] + confusion["red"][1]
    return metrics(tp=tp, fn=fn, tn=tn, fp=fp)
