"""Blocked Gibbs sampler for the multivariate mixed-effects posterior.

Every block except the lag decay rates has a conjugate full conditional:

* random intercepts, their mean, and the coefficient columns are Gaussian;
* both covariance matrices are inverse-Wishart;
* the half-Cauchy shrinkage scales use the inverse-gamma auxiliary
  representation (so their conditionals are inverse-gamma given the
  auxiliaries);
* missing waist components are drawn from their conditional normal;
* the decay rates (lagged variant only) take a random-walk Metropolis step
  on the log scale, with the step size adapted during burn-in and frozen
  afterwards.

Chains are independent given (seed, chain_id); reruns with the same seed,
settings and data reproduce draws bit-for-bit on a fixed kernel backend.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from . import kernels
from .distributions import SpdMatrix, inverse_wishart_sample
from .errors import InputError, NumericalError
from .model import DesignData, ModelConfig, ParameterState
from .rng import RngStream

__all__ = [
    "SamplerSettings",
    "PosteriorDraws",
    "GibbsChain",
    "fit",
    "geweke_test",
    "split_rhat",
    "rank_ess",
    "rhat_ess",
]

DEFAULT_BLOCKS = ("b", "mu_b", "sigma_b", "sigma_y", "beta", "scales", "missing", "phi")


@dataclass(frozen=True)
class SamplerSettings:
    chains: int = 4
    burn_in: int = 1000
    samples: int = 1000
    thin: int = 1
    seed: int = 0
    update_order: tuple[str, ...] = DEFAULT_BLOCKS
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.samples < 1 or self.thin < 1 or self.burn_in < 0:
            raise InputError("chains and samples must be >= 1, thin >= 1, burn_in >= 0")
        unknown = set(self.update_order) - set(DEFAULT_BLOCKS)
        if unknown:
            raise InputError(f"unknown update blocks: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "chains": self.chains, "burn_in": self.burn_in, "samples": self.samples,
            "thin": self.thin, "seed": self.seed, "update_order": list(self.update_order),
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerSettings":
        d = dict(d)
        d["update_order"] = tuple(d.get("update_order", DEFAULT_BLOCKS))
        return cls(**d)


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws from all chains, plus per-row log-likelihoods.

    Component arrays are stacked draw-major; ``chain_of[d]`` tags each draw.
    ``loglik`` has one column per training row and covers observed outcome
    components only (the waist column is marginalized out where missing).
    """

    beta: np.ndarray  # (D, P, K)
    z: np.ndarray
    lam: np.ndarray  # (D, P)
    tau: np.ndarray  # (D, 3)
    b: np.ndarray  # (D, I, K)
    mu_b: np.ndarray  # (D, K)
    sigma_y: np.ndarray  # (D, K, K)
    sigma_b: np.ndarray  # (D, K, K)
    y_missing: np.ndarray  # (D, M)
    phi: np.ndarray | None  # (D, K) or None
    chain_of: np.ndarray  # (D,)
    loglik: np.ndarray  # (D, N)
    n_chains: int
    subject_ids: tuple[str, ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def draws_per_chain(self) -> int:
        return self.n_draws // self.n_chains

    def state(self, d: int) -> ParameterState:
        return ParameterState(
            beta=self.beta[d], z=self.z[d], lam=self.lam[d], tau=self.tau[d],
            aux_lam=np.ones_like(self.lam[d]), aux_tau=np.ones_like(self.tau[d]),
            b=self.b[d], mu_b=self.mu_b[d], sigma_y=self.sigma_y[d],
            sigma_b=self.sigma_b[d], y_missing=self.y_missing[d],
            phi=None if self.phi is None else self.phi[d],
        )

    @property
    def states(self) -> list[ParameterState]:
        return [self.state(d) for d in range(self.n_draws)]

    def per_chain(self, values: np.ndarray) -> np.ndarray:
        """Reshape a (D,) scalar series to (chains, draws-per-chain)."""
        return values.reshape(self.n_chains, self.draws_per_chain)


def _spd_inverse(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(inverse, lower Cholesky of the matrix); raises NumericalError if not SPD."""
    try:
        chol = cholesky(matrix, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance update produced a non-SPD matrix") from exc
    inv = cho_solve((chol, True), np.eye(matrix.shape[0]))
    return 0.5 * (inv + inv.T), chol


class GibbsChain:
    """Single-chain state and block updates. Owned by one thread of control.

    ``corrupt_sigma_y_scale`` deliberately mis-scales the residual-covariance
    update; it exists solely so the Geweke harness can prove it would catch
    a broken kernel.
    """

    def __init__(self, data: DesignData, config: ModelConfig, rng: RngStream,
                 corrupt_sigma_y_scale: float = 1.0):
        if data.n_covariates != config.n_covariates:
            raise InputError("design and config disagree on covariate count")
        self.data = data
        self.config = config
        self.rng = rng
        self.corrupt_sigma_y_scale = corrupt_sigma_y_scale
        self.k = config.k_outcomes
        self.n = data.n_rows
        self.p = data.n_covariates
        self.n_subjects = data.n_subjects

        self.x = np.ascontiguousarray(data.x)
        self.sxx = np.einsum("np,np->p", self.x, self.x) if self.n else np.zeros(self.p)
        self.visit_counts = np.bincount(data.subject_of, minlength=self.n_subjects)
        self.miss = np.asarray(data.missing_rows, dtype=np.intp)
        self.lagged = np.flatnonzero(data.prev_row >= 0)
        # row whose lag term reads this row's outcomes (-1 if none)
        self.next_row = np.full(self.n, -1, dtype=np.intp)
        self.next_row[data.prev_row[self.lagged]] = self.lagged

        self.state = self._initial_state()
        self.yw = np.nan_to_num(data.y, nan=0.0)
        if self.miss.size:
            self.yw[self.miss, 0] = self.state.y_missing
        self.phi_step = np.full(self.k, 0.5)
        self._phi_accepts = np.zeros(self.k)
        self._phi_window = 0
        self.sweep_index = 0

    def _initial_state(self) -> ParameterState:
        cfg = self.config
        k, p = self.k, self.p
        sigma_y0 = cfg.psi_y / (cfg.nu_y - k - 1)
        sigma_b0 = cfg.psi_b / (cfg.nu_b - k - 1)
        phi = None
        if cfg.tcar_enabled:
            phi = np.full(k, cfg.phi_prior[0] / cfg.phi_prior[1])
        # missing waist: conditional mean of component 0 given the observed
        # components under the initial (zero-mean) state
        y_missing = np.zeros(len(self.data.missing_rows) if self.data.missing_rows is not None else 0)
        if y_missing.size:
            w, _ = _conditional_coeffs(sigma_y0)
            obs = self.data.y[self.data.missing_rows][:, 1:]
            y_missing = obs @ w
        return ParameterState(
            beta=np.zeros((p, k)), z=np.zeros((p, k)), lam=np.ones(p),
            tau=np.ones(3), aux_lam=np.ones(p), aux_tau=np.ones(3),
            b=np.zeros((self.n_subjects, k)), mu_b=np.zeros(k),
            sigma_y=sigma_y0, sigma_b=sigma_b0, y_missing=y_missing, phi=phi,
        )

    # -- workspace helpers -------------------------------------------------

    def _offset(self) -> np.ndarray:
        out = np.zeros((self.n, self.k))
        if self.config.tcar_enabled and self.lagged.size:
            decay = np.exp(-np.outer(self.data.delta_t[self.lagged], self.state.phi))
            out[self.lagged] = decay * self.yw[self.data.prev_row[self.lagged]]
        return out

    def _adjusted(self) -> np.ndarray:
        return self.yw - self._offset()

    # -- block updates -----------------------------------------------------

    def update_b(self):
        st = self.state
        q_y, _ = _spd_inverse(st.sigma_y)
        q_b, _ = _spd_inverse(st.sigma_b)
        resid = self._adjusted() - self.x @ st.beta
        sums = kernels.subject_sums(resid, self.data.subject_of, self.n_subjects)
        eta = sums @ q_y + st.mu_b @ q_b
        eps = self.rng.generator.standard_normal((self.n_subjects, self.k))
        for count in np.unique(self.visit_counts):
            idx = np.flatnonzero(self.visit_counts == count)
            lam = q_b + count * q_y
            chol = cholesky(lam, lower=True)
            mean = cho_solve((chol, True), eta[idx].T).T
            st.b[idx] = mean + solve_triangular(chol.T, eps[idx].T, lower=False).T

    def update_mu_b(self):
        st = self.state
        q_b, _ = _spd_inverse(st.sigma_b)
        lam = np.eye(self.k) + self.n_subjects * q_b
        chol = cholesky(lam, lower=True)
        eta = q_b @ st.b.sum(axis=0)
        mean = cho_solve((chol, True), eta)
        eps = self.rng.generator.standard_normal(self.k)
        st.mu_b = mean + solve_triangular(chol.T, eps, lower=False)

    def update_sigma_b(self):
        st = self.state
        dev = st.b - st.mu_b
        scatter = dev.T @ dev
        scale = SpdMatrix(self.config.psi_b + 0.5 * (scatter + scatter.T))
        st.sigma_b = inverse_wishart_sample(
            self.config.nu_b + self.n_subjects, scale, self.rng
        ).values

    def update_sigma_y(self):
        st = self.state
        resid = self._adjusted() - self.x @ st.beta - st.b[self.data.subject_of]
        scatter = resid.T @ resid
        scale_mat = self.config.psi_y + 0.5 * (scatter + scatter.T)
        scale_mat = self.corrupt_sigma_y_scale * scale_mat
        st.sigma_y = inverse_wishart_sample(
            self.config.nu_y + self.n, SpdMatrix(scale_mat), self.rng
        ).values

    def update_beta(self):
        st = self.state
        q_y, _ = _spd_inverse(st.sigma_y)
        resid = self._adjusted() - self.x @ st.beta - st.b[self.data.subject_of]
        prior_sd = st.tau[self.config.groups] * st.lam
        prior_var = prior_sd * prior_sd
        eps = self.rng.generator.standard_normal((self.p, self.k))
        kernels.beta_scan(self.x, resid, st.beta, self.sxx, prior_var, q_y, eps)

    def update_scales(self):
        st = self.state
        g = self.rng.generator
        groups = self.config.groups
        ssq = np.einsum("pk,pk->p", st.beta, st.beta)
        if self.p:
            st.aux_lam = (1.0 + 1.0 / st.lam**2) / g.standard_gamma(1.0, self.p)
            tau_sq_of = st.tau[groups] ** 2
            rate = 1.0 / st.aux_lam + ssq / (2.0 * tau_sq_of)
            lam_sq = rate / g.standard_gamma(0.5 * (self.k + 1), self.p)
            st.lam = np.sqrt(lam_sq)
        st.aux_tau = (1.0 + 1.0 / st.tau**2) / g.standard_gamma(1.0, 3)
        for c in range(3):
            members = np.flatnonzero(groups == c)
            rate = 1.0 / st.aux_tau[c]
            if members.size:
                rate += float(np.sum(ssq[members] / (2.0 * st.lam[members] ** 2)))
            shape = 0.5 * (members.size * self.k + 1)
            tau_sq = rate / g.standard_gamma(shape)
            st.tau[c] = math.sqrt(tau_sq)
        denom = st.tau[groups, None] * st.lam[:, None]
        st.z = st.beta / denom if self.p else st.z

    def update_missing(self):
        if not self.miss.size:
            return
        st = self.state
        w, cond_var = _conditional_coeffs(st.sigma_y)
        eps = self.rng.generator.standard_normal(self.miss.size)
        if not self.config.tcar_enabled:
            mu = self.x[self.miss] @ st.beta + st.b[self.data.subject_of[self.miss]]
            m = mu[:, 0] + (self.yw[self.miss, 1:] - mu[:, 1:]) @ w
            self.yw[self.miss, 0] = m + math.sqrt(cond_var) * eps
        else:
            q_y, _ = _spd_inverse(st.sigma_y)
            mu_base = self.x @ st.beta + st.b[self.data.subject_of]
            kernels.impute_waist_lagged(
                self.yw, mu_base, st.phi, self.data.delta_t, self.data.prev_row,
                self.next_row, self.miss, st.sigma_y, q_y, w, cond_var, eps,
            )
        st.y_missing = self.yw[self.miss, 0].copy()

    def update_phi(self):
        if not self.config.tcar_enabled:
            return
        st = self.state
        shape, rate = self.config.phi_prior
        q_y, _ = _spd_inverse(st.sigma_y)
        offset = self._offset()
        resid = self.yw - offset - self.x @ st.beta - st.b[self.data.subject_of]
        lag = self.lagged
        if not lag.size:
            # no lagged rows: conditional reduces to the prior
            st.phi = self.rng.generator.standard_gamma(shape, self.k) / rate
            return
        dt = self.data.delta_t[lag]
        y_prev = self.yw[self.data.prev_row[lag]]
        g = self.rng.generator
        steps = g.standard_normal(self.k)
        unifs = g.random(self.k)
        for k in range(self.k):
            theta = math.log(st.phi[k])
            theta_new = theta + self.phi_step[k] * steps[k]
            phi_new = math.exp(theta_new)
            delta = (np.exp(-phi_new * dt) - np.exp(-st.phi[k] * dt)) * y_prev[:, k]
            qr_k = resid[lag] @ q_y[:, k]
            dloglik = float(delta @ qr_k) - 0.5 * q_y[k, k] * float(delta @ delta)
            dprior = shape * (theta_new - theta) - rate * (phi_new - st.phi[k])
            if math.log(unifs[k]) < dloglik + dprior:
                st.phi[k] = phi_new
                resid[lag, k] -= delta
                self._phi_accepts[k] += 1
        self._phi_window += 1
        if self.sweep_index < self._burn_in and self._phi_window == 50:
            rates = self._phi_accepts / 50.0
            self.phi_step *= np.where(rates > 0.5, 1.4, np.where(rates < 0.3, 1 / 1.4, 1.0))
            self._phi_accepts[:] = 0.0
            self._phi_window = 0

    _burn_in = 0  # set by run(); used only to freeze step adaptation

    BLOCKS = {
        "b": update_b, "mu_b": update_mu_b, "sigma_b": update_sigma_b,
        "sigma_y": update_sigma_y, "beta": update_beta, "scales": update_scales,
        "missing": update_missing, "phi": update_phi,
    }

    def sweep(self, order=DEFAULT_BLOCKS):
        for name in order:
            self.BLOCKS[name](self)
        self.sweep_index += 1
        if not (np.all(np.isfinite(self.state.beta)) and np.all(np.isfinite(self.state.sigma_y))
                and np.all(np.isfinite(self.yw))):
            raise NumericalError(f"non-finite state after sweep {self.sweep_index}")

    # -- observation-level log-likelihood -----------------------------------

    def loglik_rows(self) -> np.ndarray:
        """Per-row log density of the *observed* outcome components."""
        st = self.state
        mu = self.x @ st.beta + st.b[self.data.subject_of]
        if self.config.tcar_enabled:
            mu = mu + self._offset()
        resid = self.yw - mu
        out = np.empty(self.n)
        chol_full = cholesky(st.sigma_y, lower=True)
        logdet_full = 2.0 * float(np.sum(np.log(np.diag(chol_full))))
        complete = np.ones(self.n, dtype=bool)
        complete[self.miss] = False
        if complete.any():
            w = solve_triangular(chol_full, resid[complete].T, lower=True)
            out[complete] = -0.5 * (self.k * _LOG_2PI + logdet_full + np.sum(w * w, axis=0))
        if self.miss.size:
            sub = st.sigma_y[1:, 1:]
            chol_sub = cholesky(sub, lower=True)
            logdet_sub = 2.0 * float(np.sum(np.log(np.diag(chol_sub))))
            w = solve_triangular(chol_sub, resid[self.miss][:, 1:].T, lower=True)
            out[self.miss] = -0.5 * ((self.k - 1) * _LOG_2PI + logdet_sub + np.sum(w * w, axis=0))
        return out


_LOG_2PI = math.log(2.0 * math.pi)


def _conditional_coeffs(sigma: np.ndarray) -> tuple[np.ndarray, float]:
    """Coefficients of component 0 given the rest: (weights, conditional variance)."""
    rest = sigma[1:, 1:]
    cross = sigma[1:, 0]
    chol = cholesky(rest, lower=True)
    w = cho_solve((chol, True), cross)
    cond_var = float(sigma[0, 0] - cross @ w)
    if cond_var <= 0:
        raise NumericalError("conditional variance of the augmented component is not positive")
    return w, cond_var


def _run_chain(data: DesignData, config: ModelConfig, settings: SamplerSettings,
               chain_id: int) -> dict:
    rng = RngStream(settings.seed, chain_id)
    chain = GibbsChain(data, config, rng)
    chain._burn_in = settings.burn_in
    keep = settings.samples
    out = {
        "beta": np.empty((keep, chain.p, chain.k)),
        "z": np.empty((keep, chain.p, chain.k)),
        "lam": np.empty((keep, chain.p)),
        "tau": np.empty((keep, 3)),
        "b": np.empty((keep, chain.n_subjects, chain.k)),
        "mu_b": np.empty((keep, chain.k)),
        "sigma_y": np.empty((keep, chain.k, chain.k)),
        "sigma_b": np.empty((keep, chain.k, chain.k)),
        "y_missing": np.empty((keep, chain.miss.size)),
        "phi": np.empty((keep, chain.k)) if config.tcar_enabled else None,
        "loglik": np.empty((keep, chain.n)),
    }
    try:
        for _ in range(settings.burn_in):
            chain.sweep(settings.update_order)
        for s in range(keep):
            for _ in range(settings.thin):
                chain.sweep(settings.update_order)
            st = chain.state
            out["beta"][s] = st.beta
            out["z"][s] = st.z
            out["lam"][s] = st.lam
            out["tau"][s] = st.tau
            out["b"][s] = st.b
            out["mu_b"][s] = st.mu_b
            out["sigma_y"][s] = st.sigma_y
            out["sigma_b"][s] = st.sigma_b
            out["y_missing"][s] = st.y_missing
            if out["phi"] is not None:
                out["phi"][s] = st.phi
            out["loglik"][s] = chain.loglik_rows()
    except NumericalError as exc:
        raise NumericalError(f"chain {chain_id}: {exc} (sweep {chain.sweep_index})") from exc
    return out


def fit(data: DesignData, config: ModelConfig, settings: SamplerSettings) -> PosteriorDraws:
    """Run the blocked Gibbs sampler and return the retained posterior draws."""
    if data.n_rows == 0:
        raise InputError("fit requires nonempty training data")
    counts = np.bincount(data.subject_of, minlength=data.n_subjects)
    if np.any(counts == 0):
        raise InputError("every subject must contribute at least one training visit")

    results = []
    if settings.workers > 1 and settings.chains > 1:
        with ProcessPoolExecutor(max_workers=settings.workers) as pool:
            futures = [
                pool.submit(_run_chain, data, config, settings, c)
                for c in range(settings.chains)
            ]
            results = [f.result() for f in futures]
    else:
        results = [_run_chain(data, config, settings, c) for c in range(settings.chains)]

    def stack(key):
        if results[0][key] is None:
            return None
        return np.concatenate([r[key] for r in results], axis=0)

    chain_of = np.repeat(np.arange(settings.chains), settings.samples)
    draws = PosteriorDraws(
        beta=stack("beta"), z=stack("z"), lam=stack("lam"), tau=stack("tau"),
        b=stack("b"), mu_b=stack("mu_b"), sigma_y=stack("sigma_y"),
        sigma_b=stack("sigma_b"), y_missing=stack("y_missing"), phi=stack("phi"),
        chain_of=chain_of, loglik=stack("loglik"), n_chains=settings.chains,
        subject_ids=data.subject_ids,
    )
    if settings.chains >= 2 and settings.samples >= 4:
        draws.diagnostics = _diagnostic_panel(draws, config)
    return draws


def _diagnostic_panel(draws: PosteriorDraws, config: ModelConfig) -> dict:
    panel = {
        "loglik_total": draws.loglik.sum(axis=1),
        "tr_sigma_y": np.trace(draws.sigma_y, axis1=1, axis2=2),
        "tr_sigma_b": np.trace(draws.sigma_b, axis1=1, axis2=2),
        "mean_log_lambda": np.log(draws.lam).mean(axis=1) if draws.lam.shape[1] else None,
    }
    for c in np.unique(config.groups):
        panel[f"tau[{c}]"] = draws.tau[:, c]
    for k in range(draws.mu_b.shape[1]):
        panel[f"mu_b[{k}]"] = draws.mu_b[:, k]
    out = {}
    for name, series in panel.items():
        if series is None:
            continue
        chains = draws.per_chain(series)
        out[name] = {"rhat": split_rhat(chains), "ess": rank_ess(chains)}
    return out


# -- convergence diagnostics ------------------------------------------------


def split_rhat(chains: np.ndarray) -> float:
    """Split potential-scale-reduction factor over a (chains, draws) array.

    Constant-and-equal chains return exactly 1.0 by convention.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise InputError("split_rhat needs at least two chains")
    half = chains.shape[1] // 2
    if half < 2:
        raise InputError("split_rhat needs at least 4 draws per chain")
    split = np.vstack([chains[:, :half], chains[:, half:2 * half]])
    if np.ptp(split) == 0.0:
        return 1.0
    m, n = split.shape
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean()
    bn = means.var(ddof=1)  # B / n
    if w == 0.0:
        return math.inf
    var_plus = (n - 1) / n * w + bn
    return float(math.sqrt(var_plus / w))


def _rank_normalize(chains: np.ndarray) -> np.ndarray:
    from scipy.stats import norm, rankdata

    flat = chains.reshape(-1)
    ranks = rankdata(flat, method="average")
    z = norm.ppf((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(chains.shape)


def rank_ess(chains: np.ndarray) -> float:
    """Rank-normalized bulk effective sample size (split chains, Geyer pairing).

    Constant-and-equal chains report the total draw count by convention.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2:
        raise InputError("rank_ess expects a (chains, draws) array")
    total = chains.size
    if np.ptp(chains) == 0.0:
        return float(total)
    half = chains.shape[1] // 2
    split = np.vstack([chains[:, :half], chains[:, half:2 * half]])
    z = _rank_normalize(split)
    m, n = z.shape
    centered = z - z.mean(axis=1, keepdims=True)
    # per-chain autocovariance via FFT
    size = 2 * n
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n].real / n
    chain_var = z.var(axis=1, ddof=1)
    w = chain_var.mean()
    bn = z.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * w + bn
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial monotone positive sequence over pair sums (rho0+rho1, ...)
    pair_sum = 0.0
    prev_pair = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev_pair)
        pair_sum += pair
        prev_pair = pair
        t += 2
    tau_hat = max(-1.0 + 2.0 * pair_sum, 1.0 / math.log10(max(total, 10)))
    return float(min(m * n / tau_hat, total))


_SCALAR_ARRAYS = ("beta", "z", "lam", "tau", "b", "mu_b", "sigma_y", "sigma_b", "phi")


def rhat_ess(draws: PosteriorDraws, scalar) -> tuple[float, float]:
    """(split R-hat, rank ESS) for one scalar function of the draws.

    ``scalar`` is either a callable mapping a draw index to a float, or an
    index expression such as ``"beta[2,0]"``, ``"tau[1]"``, ``"sigma_y[0,0]"``.
    """
    if draws.n_chains < 2:
        raise InputError("R-hat is undefined for a single chain")
    if callable(scalar):
        series = np.array([float(scalar(d)) for d in range(draws.n_draws)])
    else:
        name, _, rest = scalar.partition("[")
        if name not in _SCALAR_ARRAYS or not rest.endswith("]"):
            raise InputError(f"unknown scalar selector {scalar!r}")
        idx = tuple(int(tok) for tok in rest[:-1].split(","))
        arr = getattr(draws, name)
        if arr is None:
            raise InputError(f"{name} was not sampled for this model")
        series = arr[(slice(None),) + idx]
    chains = draws.per_chain(series)
    return split_rhat(chains), rank_ess(chains)


# -- Geweke joint-distribution correctness harness ---------------------------


def _sample_prior_state(chain: GibbsChain, rng: RngStream) -> None:
    """Overwrite the chain's parameter state with a draw from the prior."""
    cfg, k, p = chain.config, chain.k, chain.p
    g = rng.generator
    st = chain.state
    st.tau = np.abs(np.tan(0.5 * math.pi * g.random(3)))
    st.lam = np.abs(np.tan(0.5 * math.pi * g.random(p))) if p else st.lam
    st.z = g.standard_normal((p, k))
    st.beta = st.tau[cfg.groups, None] * st.lam[:, None] * st.z
    st.sigma_y = inverse_wishart_sample(cfg.nu_y, SpdMatrix(cfg.psi_y), rng).values
    st.sigma_b = inverse_wishart_sample(cfg.nu_b, SpdMatrix(cfg.psi_b), rng).values
    st.mu_b = g.standard_normal(k)
    chol_b = cholesky(st.sigma_b, lower=True)
    st.b = st.mu_b + g.standard_normal((chain.n_subjects, k)) @ chol_b.T
    if cfg.tcar_enabled:
        st.phi = g.standard_gamma(cfg.phi_prior[0], k) / cfg.phi_prior[1]


def _simulate_outcomes(chain: GibbsChain, rng: RngStream) -> None:
    """Draw all outcome rows from the likelihood given the current parameters."""
    st = chain.state
    chol_y = cholesky(st.sigma_y, lower=True)
    g = rng.generator
    eps = g.standard_normal((chain.n, chain.k))
    base = chain.x @ st.beta + st.b[chain.data.subject_of]
    for n in range(chain.n):  # ascending row order keeps lag references valid
        mu = base[n].copy()
        if chain.config.tcar_enabled and chain.data.prev_row[n] >= 0:
            mu += np.exp(-st.phi * chain.data.delta_t[n]) * chain.yw[chain.data.prev_row[n]]
        chain.yw[n] = mu + chol_y @ eps[n]
    if chain.miss.size:
        st.y_missing = chain.yw[chain.miss, 0].copy()


def _redraw_observed(chain: GibbsChain, rng: RngStream) -> None:
    """Successive-conditional data step: observed cells | parameters and imputations."""
    st = chain.state
    g = rng.generator
    chol_y = cholesky(st.sigma_y, lower=True)
    w, cond_var = _conditional_coeffs(st.sigma_y)
    # conditional covariance of the observed block given component 0
    sigma = st.sigma_y
    cond_cov = sigma[1:, 1:] - np.outer(sigma[1:, 0], sigma[0, 1:]) / sigma[0, 0]
    chol_cond = cholesky(0.5 * (cond_cov + cond_cov.T), lower=True)
    base = chain.x @ st.beta + st.b[chain.data.subject_of]
    is_missing = np.zeros(chain.n, dtype=bool)
    is_missing[chain.miss] = True
    for n in range(chain.n):
        mu = base[n].copy()
        if chain.config.tcar_enabled and chain.data.prev_row[n] >= 0:
            mu += np.exp(-st.phi * chain.data.delta_t[n]) * chain.yw[chain.data.prev_row[n]]
        if is_missing[n]:
            shift = (chain.yw[n, 0] - mu[0]) / sigma[0, 0] * sigma[1:, 0]
            chain.yw[n, 1:] = mu[1:] + shift + chol_cond @ g.standard_normal(chain.k - 1)
        else:
            chain.yw[n] = mu + chol_y @ g.standard_normal(chain.k)


def _geweke_panel(chain: GibbsChain) -> dict:
    """Bounded/robust scalar functions with finite variance under the prior."""
    st = chain.state
    stats = {
        "mean_tanh_beta": float(np.tanh(st.beta).mean()),
        "mean_log_lam_sq": float(np.mean(np.log(st.lam**2))),
        "mean_tanh_b": float(np.tanh(st.b).mean()),
        "mean_b_sq": float(np.mean(st.b**2)),
        "tr_sigma_y": float(np.trace(st.sigma_y)),
        "tr_sigma_b": float(np.trace(st.sigma_b)),
        "offdiag_sigma_y": float(st.sigma_y[0, 1]),
        "offdiag_sigma_b": float(st.sigma_b[0, 1]),
        "logdet_sigma_y": float(2 * np.sum(np.log(np.diag(cholesky(st.sigma_y, lower=True))))),
        "mean_tanh_y": float(np.tanh(chain.yw).mean()),
        "mean_tanh_y_sq": float(np.mean(np.tanh(chain.yw) ** 2)),
        "cross_y01": float(np.mean(np.tanh(chain.yw[:, 0]) * np.tanh(chain.yw[:, 1]))),
    }
    for c in np.unique(chain.config.groups):
        stats[f"log_tau_sq[{c}]"] = float(np.log(st.tau[c] ** 2))
    for k in range(chain.k):
        stats[f"mu_b[{k}]"] = float(st.mu_b[k])
    if chain.miss.size:
        stats["mean_tanh_y_mis"] = float(np.tanh(st.y_missing).mean())
    if chain.config.tcar_enabled:
        stats["mean_phi"] = float(st.phi.mean())
    return stats


def geweke_test(config: ModelConfig, data_shape: dict, n_forward: int = 4000,
                n_chains: int = 24, n_cycles: int = 600, seed: int = 0,
                corrupt_sigma_y_scale: float = 1.0,
                update_order=DEFAULT_BLOCKS) -> list[tuple[str, float]]:
    """Joint-distribution test of the Gibbs kernels (forward vs successive).

    Compares moments of a panel of robust scalar functions of (parameters,
    data) between (a) independent prior + likelihood simulations and (b)
    chains alternating Gibbs parameter updates with data regeneration. With
    correct kernels both target the same joint law, so all z-scores should
    be small; a corrupted kernel shows up as |z| >> 4 on some panel entry.

    The successive side runs ``n_chains`` independent replicate chains, each
    started from an exact joint draw (prior + likelihood), so the replicate
    means are i.i.d. and their spread gives an honest standard error even
    when the heavy-tailed shrinkage coordinates mix slowly within a chain.
    """
    if n_forward < 10 or n_cycles < 10:
        raise InputError("insufficient draws for the Geweke comparison")
    if n_chains < 4:
        raise InputError("need at least 4 replicate chains for the successive side")
    n_subjects = data_shape.get("subjects", 5)
    visits = data_shape.get("visits", 3)
    p = data_shape.get("covariates", 3)
    k = config.k_outcomes
    missing_frac = data_shape.get("missing_frac", 0.0 if config.tcar_enabled else 0.2)
    if config.tcar_enabled and missing_frac > 0:
        # with both the lag and augmentation active the observed-data
        # regeneration step would need a full smoother; test them separately
        raise InputError("geweke harness supports missingness only without the lagged term")

    design_rng = RngStream(seed, ("geweke", "design"))
    n = n_subjects * visits
    x = design_rng.generator.standard_normal((n, p))
    subject_of = np.repeat(np.arange(n_subjects), visits)
    prev_row = np.full(n, -1, dtype=np.intp)
    delta_t = np.full(n, np.nan)
    for i in range(n):
        if i % visits:
            prev_row[i] = i - 1
            delta_t[i] = 0.5
    y = np.zeros((n, k))
    n_miss = int(round(missing_frac * n))
    miss_rows = np.sort(design_rng.generator.choice(n, size=n_miss, replace=False))
    y[miss_rows, 0] = np.nan
    data = DesignData(
        x=x, y=y, subject_of=subject_of,
        subject_ids=tuple(f"s{i}" for i in range(n_subjects)),
        subject_sex=tuple("male" for _ in range(n_subjects)),
        prev_row=prev_row, delta_t=delta_t,
    )

    fwd_rng = RngStream(seed, ("geweke", "forward"))
    forward_chain = GibbsChain(data, config, fwd_rng)
    fwd_stats: dict[str, list] = {}
    for _ in range(n_forward):
        _sample_prior_state(forward_chain, fwd_rng)
        _simulate_outcomes(forward_chain, fwd_rng)
        for name, value in _geweke_panel(forward_chain).items():
            fwd_stats.setdefault(name, []).append(value)

    chain_means: dict[str, list] = {}
    for r in range(n_chains):
        succ_rng = RngStream(seed, ("geweke", "successive", r))
        chain = GibbsChain(data, config, succ_rng,
                           corrupt_sigma_y_scale=corrupt_sigma_y_scale)
        _sample_prior_state(chain, succ_rng)
        _simulate_outcomes(chain, succ_rng)
        totals: dict[str, float] = {}
        for _ in range(n_cycles):
            chain.sweep(update_order)
            _redraw_observed(chain, succ_rng)
            for name, value in _geweke_panel(chain).items():
                totals[name] = totals.get(name, 0.0) + value
        for name, total in totals.items():
            chain_means.setdefault(name, []).append(total / n_cycles)

    results = []
    for name in fwd_stats:
        a = np.asarray(fwd_stats[name])
        means = np.asarray(chain_means[name])
        se_a = float(a.std(ddof=1) / math.sqrt(a.size))
        se_b = float(means.std(ddof=1) / math.sqrt(means.size))
        denom = math.sqrt(se_a**2 + se_b**2)
        z = (a.mean() - means.mean()) / denom if denom > 0 else 0.0
        results.append((name, float(z)))
    return results
