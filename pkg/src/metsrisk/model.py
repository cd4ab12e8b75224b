"""Model definition: parameter space, priors, linear predictor, and log joint.

The likelihood is a K=5 multivariate normal per visit with mean
``x'beta + b_subject`` (optionally plus an exponentially decaying
autoregressive pull toward the previous visit's outcomes when the
continuous-time AR variant is enabled). Regression coefficients carry a
grouped horseshoe prior ``beta = tau_group * lambda_covariate * z`` with
half-Cauchy scales; random intercepts and both covariance matrices get the
conjugate normal / inverse-Wishart hierarchy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distributions as dist
from .errors import InputError
from .ingest import GROUPS, TARGETS, WAIST, Cohort, CovariateSchema

__all__ = [
    "K_OUTCOMES",
    "WAIST_IDX",
    "METS_THRESHOLDS",
    "ModelConfig",
    "ParameterState",
    "DesignData",
    "build_design",
    "covariate_vector",
    "linear_predictor",
    "log_joint",
    "mets_indicator",
]

K_OUTCOMES = 5
WAIST_IDX = TARGETS.index(WAIST)

# Diagnostic cutoffs, clinical units. Tuples are (male, female) where the
# rule is sex-specific.
METS_THRESHOLDS = {
    "waist_cm": {"male": 102.0, "female": 88.0, "direction": ">", "strict": True},
    "pmax_mmhg": {"male": 130.0, "female": 130.0, "direction": ">", "strict": False},
    "glucose_mgdl": {"male": 100.0, "female": 100.0, "direction": ">", "strict": False},
    "triglycerides_mgdl": {"male": 150.0, "female": 150.0, "direction": ">", "strict": False},
    "hdl_mgdl": {"male": 40.0, "female": 50.0, "direction": "<", "strict": True},
}


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters and structural switches.

    Defaults are the moderately informative choice nu_Y = nu_b = 10,
    Psi_Y = 2I, Psi_b = 12I, giving prior means E(Sigma_Y) = 0.5I and
    E(Sigma_b) = 3I on the standardized scale.
    """

    n_covariates: int
    groups: np.ndarray  # covariate column -> group code 0/1/2
    nu_y: float = 10.0
    nu_b: float = 10.0
    psi_y_scale: float = 2.0
    psi_b_scale: float = 12.0
    tcar_enabled: bool = False
    phi_prior: tuple[float, float] = (2.0, 0.2)  # Gamma(shape, rate)
    k_outcomes: int = K_OUTCOMES

    def __post_init__(self):
        groups = np.asarray(self.groups, dtype=np.intp)
        if groups.shape != (self.n_covariates,):
            raise InputError("groups must assign every covariate column")
        if groups.size and (groups.min() < 0 or groups.max() >= len(GROUPS)):
            raise InputError("group codes must be 0 (Numerical), 1 (Binary) or 2 (Interactions)")
        object.__setattr__(self, "groups", groups)
        k = self.k_outcomes
        if self.nu_y <= k + 1 or self.nu_b <= k + 1:
            raise InputError("inverse-Wishart dof must exceed K + 1 for finite prior means")
        if self.psi_y_scale <= 0 or self.psi_b_scale <= 0:
            raise InputError("prior scale matrices must be positive definite")
        if self.phi_prior[0] <= 0 or self.phi_prior[1] <= 0:
            raise InputError("phi prior parameters must be positive")

    @property
    def psi_y(self) -> np.ndarray:
        return self.psi_y_scale * np.eye(self.k_outcomes)

    @property
    def psi_b(self) -> np.ndarray:
        return self.psi_b_scale * np.eye(self.k_outcomes)

    @classmethod
    def for_schema(cls, schema: CovariateSchema, **kwargs) -> "ModelConfig":
        return cls(n_covariates=len(schema.entries), groups=schema.group_index(), **kwargs)

    def to_dict(self) -> dict:
        return {
            "n_covariates": self.n_covariates,
            "groups": self.groups.tolist(),
            "nu_y": self.nu_y,
            "nu_b": self.nu_b,
            "psi_y_scale": self.psi_y_scale,
            "psi_b_scale": self.psi_b_scale,
            "tcar_enabled": self.tcar_enabled,
            "phi_prior": list(self.phi_prior),
            "k_outcomes": self.k_outcomes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["groups"] = np.asarray(d["groups"], dtype=np.intp)
        d["phi_prior"] = tuple(d["phi_prior"])
        return cls(**d)


@dataclass
class ParameterState:
    """One point in parameter space. The factored coefficients are canonical:
    ``beta[p, k] == tau[group(p)] * lam[p] * z[p, k]`` holds after every update.
    """

    beta: np.ndarray  # (P, K)
    z: np.ndarray  # (P, K)
    lam: np.ndarray  # (P,)
    tau: np.ndarray  # (3,)
    aux_lam: np.ndarray  # (P,)
    aux_tau: np.ndarray  # (3,)
    b: np.ndarray  # (I, K)
    mu_b: np.ndarray  # (K,)
    sigma_y: np.ndarray  # (K, K)
    sigma_b: np.ndarray  # (K, K)
    y_missing: np.ndarray  # imputed waist values, aligned with DesignData.missing_rows
    phi: np.ndarray | None = None  # (K,) decay rates, t-CAR only

    def beta_consistent(self, groups: np.ndarray, atol: float = 1e-10) -> bool:
        scale = self.tau[groups, None] * self.lam[:, None]
        return bool(np.allclose(self.beta, scale * self.z, atol=atol, rtol=1e-10))

    def copy(self) -> "ParameterState":
        return ParameterState(
            beta=self.beta.copy(), z=self.z.copy(), lam=self.lam.copy(),
            tau=self.tau.copy(), aux_lam=self.aux_lam.copy(), aux_tau=self.aux_tau.copy(),
            b=self.b.copy(), mu_b=self.mu_b.copy(), sigma_y=self.sigma_y.copy(),
            sigma_b=self.sigma_b.copy(), y_missing=self.y_missing.copy(),
            phi=None if self.phi is None else self.phi.copy(),
        )


@dataclass(frozen=True)
class DesignData:
    """Numeric training data on the model (log-standardized) scale.

    ``y`` holds NaN in the waist column where the measurement is missing;
    the sampler works on a copy with the current imputations filled in.
    ``prev_row[n]`` is the row index of the subject's previous visit (-1 for
    first visits) and ``delta_t`` the elapsed years, used only by the
    autoregressive variant.
    """

    x: np.ndarray  # (N, P)
    y: np.ndarray  # (N, K), NaN where waist missing
    subject_of: np.ndarray  # (N,) 0-based subject index
    subject_ids: tuple[str, ...]
    subject_sex: tuple[str, ...]
    prev_row: np.ndarray  # (N,), -1 where no predecessor
    delta_t: np.ndarray  # (N,), NaN where no predecessor
    missing_rows: np.ndarray = field(default=None)  # rows with missing waist

    def __post_init__(self):
        n, p = self.x.shape
        if self.y.shape[0] != n or self.subject_of.shape != (n,):
            raise InputError("design arrays disagree on row count")
        defined = self.prev_row >= 0
        if np.any(self.delta_t[defined] <= 0):
            raise InputError("delta_t must be positive wherever defined")
        if self.missing_rows is None:
            object.__setattr__(
                self, "missing_rows", np.flatnonzero(np.isnan(self.y[:, WAIST_IDX]))
            )

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]


def covariate_vector(record, schema: CovariateSchema) -> np.ndarray:
    out = np.empty(len(schema.entries))
    for j, entry in enumerate(schema.entries):
        v = record.covariates.get(entry.name)
        if v is None:
            raise InputError(
                f"subject {record.subject_id!r} visit {record.visit_index}: "
                f"covariate {entry.name!r} is missing (impute first)"
            )
        out[j] = v
    return out


def build_design(cohort: Cohort) -> DesignData:
    """Assemble the numeric design from a transformed, imputed training cohort."""
    if not cohort.transformed:
        raise InputError("cohort must be transformed and standardized first")
    if not cohort.records:
        raise InputError("empty cohort")
    records = cohort.records
    subject_ids = []
    subject_sex = []
    index_of: dict[str, int] = {}
    for r in records:
        if r.subject_id not in index_of:
            index_of[r.subject_id] = len(subject_ids)
            subject_ids.append(r.subject_id)
            subject_sex.append(r.sex)
    n = len(records)
    p = len(cohort.schema.entries)
    x = np.empty((n, p))
    y = np.empty((n, K_OUTCOMES))
    subject_of = np.empty(n, dtype=np.intp)
    prev_row = np.full(n, -1, dtype=np.intp)
    delta_t = np.full(n, np.nan)
    last_seen: dict[str, tuple[int, object]] = {}
    for i, r in enumerate(records):
        x[i] = covariate_vector(r, cohort.schema)
        for k, name in enumerate(TARGETS):
            v = r.targets.get(name)
            if v is None and name != WAIST:
                raise InputError(f"non-waist target {name!r} missing for {r.subject_id!r}")
            y[i, k] = np.nan if v is None else v
        subject_of[i] = index_of[r.subject_id]
        prior = last_seen.get(r.subject_id)
        if prior is not None:
            j, prior_date = prior
            prev_row[i] = j
            delta_t[i] = (r.visit_date - prior_date).days / 365.25
        last_seen[r.subject_id] = (i, r.visit_date)
    return DesignData(
        x=x, y=y, subject_of=subject_of, subject_ids=tuple(subject_ids),
        subject_sex=tuple(subject_sex), prev_row=prev_row, delta_t=delta_t,
    )


def _filled_outcomes(state: ParameterState, data: DesignData) -> np.ndarray:
    y = data.y.copy()
    if data.missing_rows.size:
        y[data.missing_rows, WAIST_IDX] = state.y_missing
    return y


def tcar_offset(state: ParameterState, data: DesignData, y_filled: np.ndarray) -> np.ndarray:
    """Autoregressive mean contribution exp(-phi * dt) * y_prev, zero at first visits."""
    offset = np.zeros_like(y_filled)
    lagged = np.flatnonzero(data.prev_row >= 0)
    if lagged.size and state.phi is not None:
        decay = np.exp(-np.outer(data.delta_t[lagged], state.phi))
        offset[lagged] = decay * y_filled[data.prev_row[lagged]]
    return offset


def linear_predictor(state: ParameterState, data: DesignData, row: int,
                     config: ModelConfig) -> np.ndarray:
    """Mean vector for one visit: x'beta + b, plus the decayed lag when enabled."""
    mu = state.beta.T @ data.x[row] + state.b[data.subject_of[row]]
    if config.tcar_enabled and data.prev_row[row] >= 0:
        y = _filled_outcomes(state, data)
        decay = np.exp(-state.phi * data.delta_t[row])
        mu = mu + decay * y[data.prev_row[row]]
    return mu


def mean_matrix(state: ParameterState, data: DesignData, config: ModelConfig,
                y_filled: np.ndarray | None = None) -> np.ndarray:
    """All-row mean matrix (N, K); vectorized counterpart of linear_predictor."""
    if y_filled is None:
        y_filled = _filled_outcomes(state, data)
    mu = data.x @ state.beta + state.b[data.subject_of]
    if config.tcar_enabled:
        mu = mu + tcar_offset(state, data, y_filled)
    return mu


def log_joint(state: ParameterState, data: DesignData, config: ModelConfig) -> float:
    """Log of the joint density of data, augmented outcomes, and parameters.

    The augmented waist values carry an improper flat prior, so they
    contribute only through the likelihood.
    """
    p, k = state.beta.shape
    if p != config.n_covariates or k != config.k_outcomes or data.n_covariates != p:
        raise InputError("state, data, and config dimensions disagree")
    if not state.beta_consistent(config.groups):
        raise InputError("beta does not match tau * lambda * z")
    sigma_y = dist.SpdMatrix(state.sigma_y)
    sigma_b = dist.SpdMatrix(state.sigma_b)

    y = _filled_outcomes(state, data)
    mu = mean_matrix(state, data, config, y_filled=y)
    total = 0.0
    if data.n_rows:
        resid = y - mu
        w = np.linalg.solve(sigma_y.cholesky, resid.T)
        total += -0.5 * data.n_rows * (k * np.log(2 * np.pi) + sigma_y.log_det)
        total += -0.5 * float(np.sum(w * w))

    for i in range(state.b.shape[0]):
        total += dist.mvn_logpdf(state.b[i], state.mu_b, sigma_b)
    total += dist.mvn_logpdf(state.mu_b, np.zeros(k), dist.SpdMatrix.identity(k))
    total += dist.inverse_wishart_logpdf(sigma_y, config.nu_y, dist.SpdMatrix(config.psi_y))
    total += dist.inverse_wishart_logpdf(sigma_b, config.nu_b, dist.SpdMatrix(config.psi_b))
    total += -0.5 * state.z.size * np.log(2 * np.pi) - 0.5 * float(np.sum(state.z**2))
    total += float(sum(dist.half_cauchy_logpdf(v) for v in state.lam))
    present_groups = np.unique(config.groups) if p else np.arange(len(state.tau))
    total += float(sum(dist.half_cauchy_logpdf(state.tau[g]) for g in present_groups))
    if config.tcar_enabled:
        shape, rate = config.phi_prior
        total += float(sum(dist.gamma_logpdf(v, shape, rate) for v in state.phi))
    return float(total)


def mets_indicator(y_raw: dict, sex: str) -> int:
    """NCEP-ATP-III rule: 1 iff at least three criteria are met.

    ``y_raw`` maps target names to clinical-unit values; waist may be absent
    or None, in which case only the remaining four criteria are counted
    (conservative: borderline cases come out negative).
    """
    if sex not in ("male", "female"):
        raise InputError(f"unrecognized sex {sex!r}")
    count = 0
    for name in TARGETS:
        value = y_raw.get(name)
        if value is None:
            if name == WAIST:
                continue
            raise InputError(f"target {name!r} must be present for the diagnostic rule")
        rule = METS_THRESHOLDS[name]
        cut = rule[sex]
        if rule["direction"] == ">":
            met = value > cut if rule["strict"] else value >= cut
        else:
            met = value < cut
        count += int(met)
    return 1 if count >= 3 else 0


def mets_indicator_array(y_raw: np.ndarray, sex: str) -> np.ndarray:
    """Vectorized diagnostic rule over rows of clinical-unit outcomes (..., 5).

    NaN in the waist column means "not measured" and drops that criterion.
    """
    male = sex == "male"
    waist = y_raw[..., 0]
    crit = np.zeros(y_raw.shape[:-1], dtype=np.intp)
    crit += np.where(np.isnan(waist), 0, waist > (102.0 if male else 88.0))
    crit += y_raw[..., 1] >= 130.0
    crit += y_raw[..., 2] >= 100.0
    crit += y_raw[..., 3] >= 150.0
    crit += y_raw[..., 4] < (40.0 if male else 50.0)
    return (crit >= 3).astype(np.intp)
