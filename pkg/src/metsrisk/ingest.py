"""Longitudinal visit data: parsing, validation, transformation, imputation, splitting.

The on-disk format is CSV (UTF-8, header required) with fixed identity and
target columns followed by covariate columns declared in a JSON schema:

    subject_id, visit_date, sex, waist_cm, pmax_mmhg, glucose_mgdl,
    triglycerides_mgdl, hdl_mgdl, <covariate columns...>

Empty cells are missing values. Waist circumference is the only target
allowed to be missing (it is augmented inside the sampler); rows missing any
other target are dropped at load with a count kept on the returned cohort.

All operations here are pure: they return new ``Cohort`` objects and never
mutate their inputs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import date

import numpy as np

from .errors import InputError
from .rng import RngStream

logger = logging.getLogger(__name__)

TARGETS = ["waist_cm", "pmax_mmhg", "glucose_mgdl", "triglycerides_mgdl", "hdl_mgdl"]
WAIST = "waist_cm"
GROUPS = ("Numerical", "Binary", "Interactions")

_ID_COLUMNS = ["subject_id", "visit_date", "sex"]

_BINARY_TOKENS = {
    "1": 1, "0": 0, "true": 1, "false": 0, "yes": 1, "no": 0,
    "m": 1, "f": 0, "male": 1, "female": 0, "active": 1, "inactive": 0,
}


@dataclass(frozen=True)
class CovariateEntry:
    name: str
    kind: str  # numeric | binary | interaction
    group: str  # Numerical | Binary | Interactions
    log_transformed: bool = False
    base: str | None = None  # interaction entries: the non-sex factor


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariate declaration; order defines design-matrix columns."""

    entries: tuple[CovariateEntry, ...]

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise InputError("duplicate covariate names in schema")
        by_name = {e.name: e for e in self.entries}
        for e in self.entries:
            if e.kind not in ("numeric", "binary", "interaction"):
                raise InputError(f"covariate {e.name!r}: unknown kind {e.kind!r}")
            if e.group not in GROUPS:
                raise InputError(f"covariate {e.name!r}: unknown group {e.group!r}")
            if e.kind == "interaction":
                if e.base is None:
                    raise InputError(f"interaction {e.name!r} must name its base covariate")
                base = by_name.get(e.base)
                if base is None or base.kind == "interaction":
                    raise InputError(
                        f"interaction {e.name!r} references {e.base!r}, "
                        "which is not a numeric or binary covariate"
                    )
            elif e.base is not None:
                raise InputError(f"covariate {e.name!r}: only interactions take a base")
            if e.log_transformed and e.kind != "numeric":
                raise InputError(f"covariate {e.name!r}: only numeric entries can be log-scaled")

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def base_entries(self) -> list[CovariateEntry]:
        return [e for e in self.entries if e.kind != "interaction"]

    @property
    def interaction_entries(self) -> list[CovariateEntry]:
        return [e for e in self.entries if e.kind == "interaction"]

    def group_index(self) -> np.ndarray:
        """Covariate column -> group code (0 Numerical, 1 Binary, 2 Interactions)."""
        return np.array([GROUPS.index(e.group) for e in self.entries], dtype=np.intp)

    def to_dict(self) -> dict:
        out = []
        for e in self.entries:
            d = {"name": e.name, "kind": e.kind, "group": e.group,
                 "log_transformed": e.log_transformed}
            if e.base is not None:
                d["base"] = e.base
            out.append(d)
        return {"entries": out}

    @classmethod
    def from_dict(cls, payload: dict) -> "CovariateSchema":
        try:
            entries = tuple(
                CovariateEntry(
                    name=e["name"],
                    kind=e["kind"],
                    group=e["group"],
                    log_transformed=bool(e.get("log_transformed", False)),
                    base=e.get("base"),
                )
                for e in payload["entries"]
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed schema: {exc}") from exc
        return cls(entries)


def load_schema(path) -> CovariateSchema:
    with open(path, encoding="utf-8") as fh:
        return CovariateSchema.from_dict(json.load(fh))


def save_schema(schema: CovariateSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class VisitRecord:
    subject_id: str
    visit_index: int  # 1-based, consecutive per subject in date order
    visit_date: date
    sex: str  # "male" | "female"
    targets: dict  # target name -> float | None (only waist may be None)
    covariates: dict  # covariate name -> float | None


@dataclass(frozen=True)
class Cohort:
    records: tuple[VisitRecord, ...]
    schema: CovariateSchema
    standardization: dict = field(default_factory=dict)  # name -> (mean, sd)
    transformed: bool = False
    dropped_rows: int = 0

    @property
    def n_subjects(self) -> int:
        return len({r.subject_id for r in self.records})

    def subject_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            seen.setdefault(r.subject_id, None)
        return list(seen)

    def visits_of(self, subject_id: str) -> list[VisitRecord]:
        return [r for r in self.records if r.subject_id == subject_id]

    def last_visit_mask(self) -> list[bool]:
        """True for each subject's final visit (the natural test partition)."""
        last: dict[str, int] = {}
        for r in self.records:
            last[r.subject_id] = max(last.get(r.subject_id, 0), r.visit_index)
        return [r.visit_index == last[r.subject_id] for r in self.records]


def _parse_sex(token: str, line: int) -> str:
    t = token.strip().lower()
    if t in ("m", "male"):
        return "male"
    if t in ("f", "female"):
        return "female"
    raise InputError(f"line {line}: unrecognized sex {token!r}")


def _parse_float(token: str, column: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError as exc:
        raise InputError(f"line {line}: column {column!r}: not a number: {token!r}") from exc
    if not math.isfinite(value):
        raise InputError(f"line {line}: column {column!r}: non-finite value")
    return value


def _parse_binary(token: str, column: str, line: int) -> float:
    value = _BINARY_TOKENS.get(token.strip().lower())
    if value is None:
        raise InputError(f"line {line}: column {column!r}: not a binary level: {token!r}")
    return float(value)


def load_cohort(path, schema: CovariateSchema) -> Cohort:
    """Parse and validate a visit CSV into a raw-scale cohort.

    Rows missing any non-waist target are dropped (count kept on the cohort);
    duplicate (subject_id, visit_date) pairs and non-positive target values
    are errors. Records come back ordered by (subject_id, visit_date) with
    1-based visit indices assigned.
    """
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError("empty CSV: header row required")
        header = [h.strip() for h in reader.fieldnames]
        expected = _ID_COLUMNS + TARGETS + [e.name for e in schema.base_entries if e.name != "sex"]
        missing_cols = [c for c in expected if c not in header]
        if missing_cols:
            raise InputError(f"missing columns: {missing_cols}")
        unknown = [c for c in header if c not in expected]
        if unknown:
            raise InputError(f"unknown covariate columns: {unknown}")

        rows = []
        dropped = 0
        seen_keys: set[tuple[str, date]] = set()
        for line_no, row in enumerate(reader, start=2):
            if row.get(None) is not None:
                raise InputError(f"line {line_no}: more cells than header columns")
            sid = (row.get("subject_id") or "").strip()
            if not sid:
                raise InputError(f"line {line_no}: empty subject_id")
            raw_date = (row.get("visit_date") or "").strip()
            try:
                vdate = date.fromisoformat(raw_date)
            except ValueError as exc:
                raise InputError(f"line {line_no}: bad visit_date {raw_date!r}") from exc
            key = (sid, vdate)
            if key in seen_keys:
                raise InputError(f"duplicate visit for subject {sid!r} on {vdate.isoformat()}")
            seen_keys.add(key)
            sex = _parse_sex(row.get("sex") or "", line_no)

            targets: dict[str, float | None] = {}
            incomplete = False
            for name in TARGETS:
                token = (row.get(name) or "").strip()
                if token == "":
                    if name == WAIST:
                        targets[name] = None
                        continue
                    incomplete = True
                    break
                value = _parse_float(token, name, line_no)
                if value <= 0:
                    raise InputError(
                        f"line {line_no}: target {name!r} must be positive, got {value}"
                    )
                targets[name] = value
            if incomplete:
                dropped += 1
                continue

            covariates: dict[str, float | None] = {}
            for entry in schema.base_entries:
                if entry.name == "sex":
                    covariates["sex"] = 1.0 if sex == "male" else 0.0
                    continue
                token = (row.get(entry.name) or "").strip()
                if token == "":
                    covariates[entry.name] = None
                elif entry.kind == "binary":
                    covariates[entry.name] = _parse_binary(token, entry.name, line_no)
                else:
                    value = _parse_float(token, entry.name, line_no)
                    if entry.log_transformed and value <= 0:
                        raise InputError(
                            f"line {line_no}: {entry.name!r} must be positive "
                            f"for the log transform, got {value}"
                        )
                    covariates[entry.name] = value
            rows.append((sid, vdate, sex, targets, covariates))

    rows.sort(key=lambda r: (r[0], r[1]))
    records = []
    counter: dict[str, int] = {}
    for sid, vdate, sex, targets, covariates in rows:
        idx = counter.get(sid, 0) + 1
        counter[sid] = idx
        records.append(VisitRecord(sid, idx, vdate, sex, targets, covariates))
    if dropped:
        logger.info("load_cohort: dropped %d rows with missing non-waist targets", dropped)
    return Cohort(records=tuple(records), schema=schema, dropped_rows=dropped)


def _collect(records, name: str, accessor) -> np.ndarray:
    values = [accessor(r).get(name) for r in records]
    return np.array([v if v is not None else np.nan for v in values], dtype=float)


def transform_and_standardize(cohort: Cohort, train_mask) -> Cohort:
    """Apply log transforms and train-moment standardization.

    Targets and log-flagged covariates are replaced by natural logs; every
    numeric variable is centered and scaled by the training-rows mean and
    sample (n-1) standard deviation. Interaction columns are then formed as
    standardized-base times the raw 0/1 sex indicator and are not
    re-standardized. The moments used are stored on the returned cohort.
    """
    if cohort.transformed:
        raise InputError("cohort is already transformed")
    train_mask = np.asarray(list(train_mask), dtype=bool)
    if train_mask.shape != (len(cohort.records),):
        raise InputError("train_mask length does not match record count")
    if not train_mask.any():
        raise InputError("train_mask selects no rows")

    n = len(cohort.records)
    numeric_cov = [e for e in cohort.schema.base_entries if e.kind == "numeric"]
    work: dict[str, np.ndarray] = {}
    for name in TARGETS:
        col = _collect(cohort.records, name, lambda r: r.targets)
        work[name] = np.log(col)
    for e in numeric_cov:
        col = _collect(cohort.records, e.name, lambda r: r.covariates)
        work[e.name] = np.log(col) if e.log_transformed else col

    moments: dict[str, tuple[float, float]] = {}
    for name, col in work.items():
        train_vals = col[train_mask]
        train_vals = train_vals[~np.isnan(train_vals)]
        if train_vals.size < 2:
            raise InputError(f"variable {name!r}: fewer than 2 observed training values")
        mean = float(np.mean(train_vals))
        sd = float(np.std(train_vals, ddof=1))
        if sd == 0.0:
            raise InputError(f"variable {name!r}: zero sd on the training rows")
        moments[name] = (mean, sd)
        work[name] = (col - mean) / sd

    sex_ind = np.array(
        [1.0 if r.sex == "male" else 0.0 for r in cohort.records], dtype=float
    )
    interactions: dict[str, np.ndarray] = {}
    for e in cohort.schema.interaction_entries:
        base_col = work.get(e.base)
        if base_col is None:  # binary base: raw 0/1 values
            base_col = _collect(cohort.records, e.base, lambda r: r.covariates)
        interactions[e.name] = base_col * sex_ind

    records = []
    for i in range(n):
        r = cohort.records[i]
        targets = {name: (float(work[name][i]) if not np.isnan(work[name][i]) else None)
                   for name in TARGETS}
        covariates = dict(r.covariates)
        for e in numeric_cov:
            v = work[e.name][i]
            covariates[e.name] = float(v) if not np.isnan(v) else None
        for e in cohort.schema.interaction_entries:
            v = interactions[e.name][i]
            covariates[e.name] = float(v) if not np.isnan(v) else None
        records.append(replace(r, targets=targets, covariates=covariates))
    return Cohort(
        records=tuple(records),
        schema=cohort.schema,
        standardization=moments,
        transformed=True,
        dropped_rows=cohort.dropped_rows,
    )


def unstandardize_targets(standardized: np.ndarray, standardization: dict) -> np.ndarray:
    """Map model-scale target rows (..., 5) back to clinical units."""
    out = np.empty_like(standardized, dtype=float)
    for k, name in enumerate(TARGETS):
        mean, sd = standardization[name]
        out[..., k] = np.exp(mean + sd * standardized[..., k])
    return out


def standardize_covariate(name: str, value: float, schema: CovariateSchema,
                          standardization: dict) -> float:
    """Clinical-unit covariate value -> model scale, per the stored moments."""
    entry = next(e for e in schema.entries if e.name == name)
    if entry.kind == "binary":
        return float(value)
    if entry.kind == "interaction":
        raise InputError("interactions are derived, not standardized directly")
    v = math.log(value) if entry.log_transformed else float(value)
    mean, sd = standardization[name]
    return (v - mean) / sd


def split_last_visit(cohort: Cohort) -> tuple[Cohort, Cohort]:
    """Hold out each subject's most recent visit as the test partition."""
    by_subject: dict[str, list[VisitRecord]] = {}
    for r in cohort.records:
        by_subject.setdefault(r.subject_id, []).append(r)
    for sid, visits in by_subject.items():
        if len(visits) < 2:
            raise InputError(f"subject {sid!r} has a single visit; cannot split")
    short = [sid for sid, v in by_subject.items() if len(v) < 4]
    if short:
        warnings.warn(
            f"{len(short)} subject(s) have fewer than 4 visits; "
            "estimates for them will lean heavily on the pooled prior",
            stacklevel=2,
        )
    mask = cohort.last_visit_mask()
    train = [r for r, is_last in zip(cohort.records, mask) if not is_last]
    test = [r for r, is_last in zip(cohort.records, mask) if is_last]
    common = dict(schema=cohort.schema, standardization=cohort.standardization,
                  transformed=cohort.transformed)
    return (
        Cohort(records=tuple(train), dropped_rows=cohort.dropped_rows, **common),
        Cohort(records=tuple(test), **common),
    )


def complete_target_subject_ids(cohort: Cohort) -> list[str]:
    """Subjects all of whose visits have observed waist (fully labeled rows)."""
    incomplete = {r.subject_id for r in cohort.records if r.targets.get(WAIST) is None}
    return [sid for sid in cohort.subject_ids() if sid not in incomplete]


def impute_covariates(cohort: Cohort, iterations: int = 10, rng_seed: int = 0) -> Cohort:
    """Fill missing covariate cells by chained predictive mean matching.

    Single-level stand-in for a two-level imputer: each pass regresses the
    covariate on all other covariates plus the subject's own observed mean of
    that covariate, then copies the observed value of one of the k=5 donors
    whose predicted means are closest. Targets are never used as predictors.
    Covariates are visited in order of ascending missingness; the whole
    procedure is deterministic given the seed.
    """
    base = [e for e in cohort.schema.base_entries]
    names = [e.name for e in base]
    n = len(cohort.records)
    if n == 0:
        return cohort
    cols = {e.name: _collect(cohort.records, e.name, lambda r: r.covariates) for e in base}
    miss = {name: np.isnan(cols[name]) for name in names}
    for name in names:
        frac = miss[name].mean()
        if frac >= 0.5:
            raise InputError(
                f"covariate {name!r} is {frac:.0%} missing; drop it upstream "
                "(imputation requires < 50% missingness)"
            )
    targets_missing = [name for name in names if miss[name].any()]
    if not targets_missing:
        return cohort
    targets_missing.sort(key=lambda name: (miss[name].mean(), names.index(name)))

    subject_idx = {sid: i for i, sid in enumerate(cohort.subject_ids())}
    subj_of = np.array([subject_idx[r.subject_id] for r in cohort.records], dtype=np.intp)
    n_subj = len(subject_idx)

    filled = {name: cols[name].copy() for name in names}
    for name in names:
        col = filled[name]
        if miss[name].any():
            col[miss[name]] = np.nanmean(cols[name])

    rng = RngStream(rng_seed, ("pmm",)).generator
    for _ in range(iterations):
        for name in targets_missing:
            observed = ~miss[name]
            obs_values = cols[name][observed]
            # subject-level mean of the *observed* cells, global mean elsewhere
            subj_sum = np.bincount(subj_of[observed], weights=obs_values, minlength=n_subj)
            subj_cnt = np.bincount(subj_of[observed], minlength=n_subj)
            global_mean = obs_values.mean()
            subj_mean = np.where(subj_cnt > 0, subj_sum / np.maximum(subj_cnt, 1), global_mean)
            predictors = [filled[other] for other in names if other != name]
            predictors.append(subj_mean[subj_of])
            design = np.column_stack([np.ones(n)] + predictors)
            coef, *_ = np.linalg.lstsq(design[observed], obs_values, rcond=None)
            pred = design @ coef
            pred_obs = pred[observed]
            for i in np.flatnonzero(miss[name]):
                order = np.argsort(np.abs(pred_obs - pred[i]), kind="stable")
                donors = order[: min(5, order.size)]
                filled[name][i] = obs_values[donors[rng.integers(donors.size)]]

    records = []
    for i, r in enumerate(cohort.records):
        covariates = dict(r.covariates)
        for name in names:
            covariates[name] = float(filled[name][i])
        records.append(replace(r, covariates=covariates))
    return replace(cohort, records=tuple(records))


def default_schema() -> CovariateSchema:
    """The 34-column covariate layout used by the full pipeline.

    18 numeric markers (ALT and ferritin on the log scale), the sex and
    physical-activity indicators, and 14 sex interactions.
    """
    numeric = [
        "age", "height", "bmi", "heart_rate", "hemoglobin", "total_proteins",
        "creatinine", "ferritin", "platelets", "lymphocytes_pct",
        "eosinophils_pct", "basophils_pct", "monocytes_pct", "mch", "mchc",
        "wbc", "volume_distribution", "alt",
    ]
    log_scaled = {"alt", "ferritin"}
    interactions = [
        "alt", "age", "bmi", "creatinine", "ferritin", "height", "heart_rate",
        "hemoglobin", "lymphocytes_pct", "mch", "physical_activity",
        "platelets", "volume_distribution", "wbc",
    ]
    entries = [
        CovariateEntry(name, "numeric", "Numerical", log_transformed=name in log_scaled)
        for name in numeric
    ]
    entries.append(CovariateEntry("sex", "binary", "Binary"))
    entries.append(CovariateEntry("physical_activity", "binary", "Binary"))
    entries.extend(
        CovariateEntry(f"{base}_x_sex", "interaction", "Interactions", base=base)
        for base in interactions
    )
    return CovariateSchema(tuple(entries))


def sim_schema() -> CovariateSchema:
    """Minimal three-covariate layout used by the synthetic validation study."""
    return CovariateSchema(
        (
            CovariateEntry("bmi", "numeric", "Numerical"),
            CovariateEntry("age", "numeric", "Numerical"),
            CovariateEntry("sex", "binary", "Binary"),
        )
    )
