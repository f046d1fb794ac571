"""Monte Carlo study of the weighting estimators under measurement error.

A population of states with nested regions is drawn once per grid cell;
each replication samples ``m1`` states, draws outcomes with within-state
correlated errors, adds survey noise to outcomes and covariates, and
evaluates every requested estimator at the fixed target ``v0``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from .balancing import EstimatorConfig, fit
from .calibration import NoiseCovarianceSet
from .errors import DomainError, HSBWError
from .inference import jackknife_variance
from .panel import RegionPanel

logger = logging.getLogger(__name__)

INPUT_SETS = {
    "W": "none",
    "X": "none",
    "Xhat-hom": "homogeneous",
    "Xhat-het": "heterogeneous",
    "Xhat-cor": "correlated",
}
SIZE_LOW, SIZE_HIGH = 300.0, 2300.0
METRIC_COLUMNS = [
    "tau", "rho_x", "size_model", "input_set", "rho", "estimator",
    "bias", "var", "mse", "coverage", "ci_length", "n_effective", "n_failed",
]


def mean_inverse_size(size_model: str) -> float:
    """``E[1/r]`` under the size model: ``ln(2300/300)/2000`` for uniform sizes."""
    if size_model == "constant":
        return 1.0
    if size_model == "uniform":
        return float(np.log(SIZE_HIGH / SIZE_LOW) / (SIZE_HIGH - SIZE_LOW))
    raise DomainError(f"unknown size model {size_model!r}")


@dataclass(frozen=True)
class SimConfig:
    """One cell of the simulation design.

    Outcome error variances are scaled so that state effect, region effect
    and average noise variance sum to ``outcome_total`` (default 4), with
    the state share equal to ``rho_star``.
    """

    tau: float = 0.9
    rho_x: float = 0.25
    size_model: str = "constant"
    rho_star: float = 0.25
    M1: int = 5000
    m1: int = 25
    exp_mean: float = 10.0
    min_regions: int = 10
    q: int = 3
    sigma2_x: float = 2.0
    cor_x: float = 0.25
    outcome_total: float = 4.0
    alpha: float = 0.0
    beta: tuple = (1.0, 1.0, 1.0)
    v0: tuple = (1.0, 1.0, 1.0)
    n_sims: int = 500
    base_seed: int = 0
    inputs: tuple = ("W", "X", "Xhat-hom", "Xhat-het", "Xhat-cor")
    rhos: tuple = (0.0, 0.25, 0.5)
    jackknife: bool = True
    jitter: float = 0.001

    def __post_init__(self):
        if not self.sigma2_x > 0:
            raise DomainError("sigma2_x must be positive")
        if not 0 < self.tau <= 1:
            raise DomainError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0 <= self.rho_star < 1:
            raise DomainError(f"rho_star must lie in [0, 1), got {self.rho_star}")
        if not 0 <= self.rho_x <= 1:
            raise DomainError(f"rho_x must lie in [0, 1], got {self.rho_x}")
        if self.m1 > self.M1:
            raise DomainError(f"cannot sample m1={self.m1} of M1={self.M1} states")
        if len(self.beta) != self.q or len(self.v0) != self.q:
            raise DomainError("beta and v0 must have q entries")
        for name in self.inputs:
            if name not in INPUT_SETS:
                raise DomainError(f"unknown input set {name!r}")
        mean_inverse_size(self.size_model)
        if self.sigma2_nu + self.sigma2_state > self.outcome_total:
            raise DomainError("outcome variance budget is smaller than noise plus state variance")
        if np.linalg.eigvalsh(self.sigma_v).min() < -1e-12:
            raise DomainError("within-state covariance is not positive semidefinite")

    @property
    def sigma_x(self) -> np.ndarray:
        s = np.full((self.q, self.q), self.cor_x * self.sigma2_x)
        np.fill_diagonal(s, self.sigma2_x)
        return s

    @property
    def sigma_b(self) -> np.ndarray:
        return self.rho_x * self.sigma_x

    @property
    def sigma_v(self) -> np.ndarray:
        return (1 - self.rho_x) * self.sigma_x

    @property
    def sigma2_nu(self) -> float:
        """Average noise variance implied by ``tau``."""
        return self.sigma2_x * (1 - self.tau) / self.tau

    @property
    def sigma2_nu_star(self) -> float:
        return self.sigma2_nu / mean_inverse_size(self.size_model)

    @property
    def sigma2_state(self) -> float:
        return self.rho_star * self.outcome_total

    @property
    def sigma2_region(self) -> float:
        return self.outcome_total - self.sigma2_state - self.sigma2_nu

    @property
    def psi_true(self) -> float:
        return float(self.alpha + np.dot(self.v0, self.beta))

    def estimators(self):
        return [(inp, float(r)) for inp in self.inputs for r in self.rhos]


@dataclass
class Population:
    sizes: np.ndarray
    offsets: np.ndarray
    X: np.ndarray

    @property
    def M(self) -> int:
        return self.sizes.size

    def state_rows(self, s):
        return slice(self.offsets[s], self.offsets[s] + self.sizes[s])


def draw_population(config: SimConfig, seed) -> Population:
    """States with ``floor(Exp + 10)`` regions and covariates ``mu_s + V_sc``."""
    rng = np.random.default_rng(seed)
    sizes = np.floor(rng.exponential(config.exp_mean, config.M1) + config.min_regions).astype(int)
    mu = rng.multivariate_normal(np.zeros(config.q), config.sigma_b, size=config.M1)
    within = rng.multivariate_normal(np.zeros(config.q), config.sigma_v, size=int(sizes.sum()))
    X = np.repeat(mu, sizes, axis=0) + within
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return Population(sizes, offsets, X)


@dataclass
class SimDraw:
    """One sampled panel with its latent quantities."""

    X: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    J: np.ndarray
    state_id: np.ndarray
    region_id: np.ndarray
    sample_sizes: np.ndarray
    noise_var: np.ndarray
    noise_hat: np.ndarray = field(repr=False, default=None)

    def panel(self, input_set: str = "W") -> RegionPanel:
        cov = self.X if input_set == "X" else self.W
        names = tuple(f"x{j + 1}" for j in range(cov.shape[1]))
        n = cov.shape[0]
        return RegionPanel(
            self.state_id, self.region_id, np.ones(n, dtype=int), self.J, cov, names,
            np.repeat(self.sample_sizes[:, None], cov.shape[1], axis=1),
        )

    def noise_set(self) -> NoiseCovarianceSet:
        return NoiseCovarianceSet.from_raw(
            self.noise_hat, np.ones(self.W.shape[0], dtype=bool), self.sample_sizes
        )


def draw_sample_and_observe(population: Population, config: SimConfig, seed) -> SimDraw:
    """Sample states, draw outcomes and add survey noise.

    ``Y = alpha + X beta + e_s + e_sc``; ``(J, W) = (Y, X) + noise`` with
    independent coordinates of variance ``sigma2_nu_sc``.  Estimated noise
    covariances are the truth plus diagonal jitter of variance
    ``jitter * n1``, scaled with ``1/r_sc``.
    """
    rng = np.random.default_rng(seed)
    states = np.sort(rng.choice(population.M, size=config.m1, replace=False))
    rows = np.concatenate([np.arange(population.offsets[s], population.offsets[s] + population.sizes[s])
                           for s in states])
    sizes = population.sizes[states]
    X = population.X[rows]
    n, q = X.shape
    codes = np.repeat(np.arange(config.m1), sizes)
    state_effect = rng.normal(0.0, np.sqrt(config.sigma2_state), config.m1)[codes]
    region_effect = rng.normal(0.0, np.sqrt(config.sigma2_region), n)
    Y = config.alpha + X @ np.asarray(config.beta) + state_effect + region_effect

    if config.size_model == "uniform":
        r = rng.uniform(SIZE_LOW, SIZE_HIGH, n)
    else:
        r = np.ones(n)
    rel = (1.0 / r) / mean_inverse_size(config.size_model)
    var = config.sigma2_nu * rel
    noise = rng.standard_normal((n, q + 1)) * np.sqrt(var)[:, None]
    J = Y + noise[:, 0]
    W = X + noise[:, 1:]
    jit = rng.normal(0.0, np.sqrt(config.jitter * n), (n, q)) * rel[:, None]
    noise_hat = np.zeros((n, q, q))
    idx = np.arange(q)
    noise_hat[:, idx, idx] = var[:, None] + jit

    state_id = np.array([f"s{s:05d}" for s in states])[codes]
    region_id = np.array([str(i) for i in range(n)])
    return SimDraw(X, Y, W, J, state_id, region_id, r, var, noise_hat)


def _estimate(draw: SimDraw, input_set, rho, config: SimConfig):
    panel = draw.panel(input_set)
    ecfg = EstimatorConfig(adjustment=INPUT_SETS[input_set], rho=rho, tolerances=0.0)
    noise = draw.noise_set() if ecfg.adjustment != "none" else None
    v0 = np.asarray(config.v0, dtype=float)
    res = fit(panel, ecfg, noise, target=v0, relax=True)
    psi1 = float(res.gamma @ panel.outcome)
    var = np.nan
    if config.jackknife:
        var, _ = jackknife_variance(panel, ecfg, noise, target=v0)
    return psi1, var, res.relax_rounds


def simulate_cell(config: SimConfig, cell: int = 0, reps=None) -> pd.DataFrame:
    """Per-replication records for one grid cell.

    Columns: ``rep, input_set, rho, psi1, var_jk, relax_rounds, failed,
    error``.  Failures are recorded, not dropped.
    """
    pop = draw_population(config, np.random.SeedSequence([config.base_seed, cell, 0]))
    records = []
    for rep in range(config.n_sims) if reps is None else reps:
        draw = draw_sample_and_observe(
            pop, config, np.random.SeedSequence([config.base_seed, cell, 1, rep])
        )
        for inp, rho in config.estimators():
            try:
                psi1, var, rounds = _estimate(draw, inp, rho, config)
                records.append((rep, inp, rho, psi1, var, rounds, False, ""))
            except HSBWError as exc:
                logger.warning("cell %d rep %d %s rho=%g failed: %s", cell, rep, inp, rho, exc)
                records.append((rep, inp, rho, np.nan, np.nan, 0, True, str(exc)))
    return pd.DataFrame(
        records,
        columns=["rep", "input_set", "rho", "psi1", "var_jk", "relax_rounds", "failed", "error"],
    )


def summarize_cell(records: pd.DataFrame, config: SimConfig) -> pd.DataFrame:
    """Bias, variance, MSE, normal-quantile coverage and interval length per estimator."""
    z = stats.norm.ppf(0.975)
    truth = config.psi_true
    rows = []
    for (inp, rho), g in records.groupby(["input_set", "rho"], sort=False):
        ok = g[~g["failed"]]
        psi = ok["psi1"].to_numpy()
        n = psi.size
        se = np.sqrt(ok["var_jk"].to_numpy())
        cover = np.abs(psi - truth) <= z * se
        rows.append({
            "tau": config.tau,
            "rho_x": config.rho_x,
            "size_model": config.size_model,
            "input_set": inp,
            "rho": rho,
            "estimator": "SBW" if rho == 0 else f"H-SBW({rho:g})",
            "bias": psi.mean() - truth if n else np.nan,
            "var": psi.var(ddof=1) if n > 1 else np.nan,
            "mse": np.mean((psi - truth) ** 2) if n else np.nan,
            "coverage": cover.mean() if (n and config.jackknife) else np.nan,
            "ci_length": 2 * z * se.mean() if (n and config.jackknife) else np.nan,
            "n_effective": n,
            "n_failed": int(g["failed"].sum()),
        })
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def expand_grid(base: SimConfig, taus=None, rho_xs=None, size_models=None) -> list[SimConfig]:
    """Cells in ``tau x rho_x x size_model`` order."""
    taus = taus or [base.tau]
    rho_xs = rho_xs or [base.rho_x]
    size_models = size_models or [base.size_model]
    return [
        replace(base, tau=t, rho_x=r, size_model=s)
        for t, r, s in itertools.product(taus, rho_xs, size_models)
    ]


def run_study(cells) -> pd.DataFrame:
    """Long-format metrics over grid cells; cell ``i`` uses seed stream ``i``."""
    frames = []
    for i, cfg in enumerate(cells):
        logger.info("cell %d: tau=%g rho_x=%g size=%s", i, cfg.tau, cfg.rho_x, cfg.size_model)
        frames.append(summarize_cell(simulate_cell(cfg, i), cfg))
    if not frames:
        raise DomainError("the simulation grid is empty")
    return pd.concat(frames, ignore_index=True)


def theoretical_attenuation_bias(config: SimConfig) -> float:
    """Bias of the unadjusted estimator: ``v0' (kappa - I) beta``.

    ``kappa = (Sigma_X + sigma2_nu I)^{-1} Sigma_X`` and the treated mean is 0.
    """
    sx = config.sigma_x
    kappa = np.linalg.solve(sx + config.sigma2_nu * np.eye(config.q), sx)
    v0 = np.asarray(config.v0, dtype=float)
    return float(v0 @ (kappa - np.eye(config.q)) @ np.asarray(config.beta, dtype=float))
