"""Effect estimates, jackknife and cluster-robust variances, intervals, placebo checks."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from .balancing import EstimatorConfig, ToleranceSpec, fit
from .calibration import NoiseCovarianceSet
from .errors import DomainError, FoldFailureError, InfeasibleError, SchemaError
from .panel import RegionPanel
from .qp import BlockCorrelation, least_norm_gls_weights

logger = logging.getLogger(__name__)


@dataclass
class JackknifeTrace:
    """Leave-one-state-out estimates in sorted state order."""

    states: list
    estimates: np.ndarray
    relax_rounds: list
    recalibrated: bool
    targets: list = field(default_factory=list, repr=False)

    @property
    def m(self) -> int:
        return len(self.states)

    @property
    def mean(self) -> float:
        return float(np.mean(self.estimates))

    def variance(self) -> float:
        return jackknife_from_estimates(self.estimates)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "state_id": self.states,
                "estimate": self.estimates,
                "relax_rounds": self.relax_rounds,
            }
        )


@dataclass
class EffectEstimate:
    psi1_hat: float
    psi0_hat: float
    var_psi1: float = float("nan")
    var_psi0: float = float("nan")
    df: int | None = None
    ci: tuple = (float("nan"), float("nan"))
    trace: JackknifeTrace | None = field(default=None, repr=False)

    @property
    def psi_hat(self) -> float:
        return self.psi1_hat - self.psi0_hat

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_psi1 + self.var_psi0))

    def summary(self, digits: int = 2) -> str:
        """Format like ``-2.33 (-3.54, -1.11)``."""
        f = f"{{:.{digits}f}}"
        lo, hi = self.ci
        return f"{f.format(self.psi_hat)} ({f.format(lo)}, {f.format(hi)})"

    def to_dict(self) -> dict:
        return {
            "psi_hat": self.psi_hat,
            "psi1_hat": self.psi1_hat,
            "psi0_hat": self.psi0_hat,
            "var_psi1": self.var_psi1,
            "var_psi0": self.var_psi0,
            "df": self.df,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
        }


def jackknife_from_estimates(estimates) -> float:
    """``(m - 1) / m * sum((S_s - mean(S))**2)``."""
    s = np.asarray(estimates, dtype=float)
    m = s.size
    if m < 2:
        raise DomainError("jackknife needs at least 2 leave-out estimates")
    return float((m - 1) / m * np.sum((s - s.mean()) ** 2))


def point_estimate(weights, panel: RegionPanel) -> EffectEstimate:
    """Weighted treated outcome and unweighted control mean.

    ``weights`` follow the order of ``panel.treated()``.

    Examples
    --------
    >>> p = RegionPanel(["a", "a", "b"], ["1", "2", "1"], [1, 1, 0], [10.0, 10.0, 12.0], [[0], [0], [0]], ["w"])
    >>> point_estimate([0.5, 0.5], p).psi_hat
    -2.0
    """
    gamma = np.asarray(getattr(weights, "gamma", weights), dtype=float)
    J1 = panel.outcome[panel.treated_mask]
    if gamma.shape != J1.shape:
        raise SchemaError(f"{gamma.size} weights for {J1.size} treated regions")
    if panel.n0 == 0:
        raise DomainError("panel has no control regions")
    return EffectEstimate(float(gamma @ J1), float(panel.outcome[panel.control_mask].mean()))


def _fold_noise(noise, mask):
    return None if noise is None else noise.subset(mask)


def jackknife_variance(
    panel: RegionPanel,
    config: EstimatorConfig,
    noise: NoiseCovarianceSet | None = None,
    target=None,
) -> tuple[float, JackknifeTrace]:
    """Leave-one-treated-state-out variance of the weighted treated mean.

    Every fold recalibrates from the remaining regions and balances toward
    the same target (the full-panel control mean unless ``target`` is
    given).  Infeasible folds relax their tolerances; a fold still
    infeasible after the allowed rounds raises :class:`FoldFailureError`.
    """
    states = sorted(panel.treated_states.tolist())
    if len(states) < 2:
        raise DomainError(f"jackknife needs at least 2 treated states, got {len(states)}")
    v = panel.control_mean() if target is None else np.asarray(target, dtype=float)
    est, rounds, targets = [], [], []
    for s in states:
        mask = panel.state_id != s
        fold = panel.subset(mask)
        try:
            res = fit(fold, config, _fold_noise(noise, mask), target=v, relax=True)
        except InfeasibleError as exc:
            raise FoldFailureError(
                f"jackknife fold leaving out state {s!r} is infeasible: {exc}", s, exc.max_violation
            ) from None
        est.append(float(res.gamma @ fold.outcome[fold.treated_mask]))
        rounds.append(res.relax_rounds)
        targets.append(res.problem.v)
        if res.relax_rounds:
            logger.info("fold %s needed %d relaxation rounds", s, res.relax_rounds)
    trace = JackknifeTrace(states, np.asarray(est), rounds, config.adjustment != "none", targets)
    return trace.variance(), trace


def _independent_columns(X, tol=1e-10):
    keep = []
    for j in range(X.shape[1]):
        cand = keep + [j]
        sv = np.linalg.svd(X[:, cand], compute_uv=False)
        if sv[-1] > tol * max(1.0, sv[0]):
            keep = cand
    return keep


def control_mean_variance(panel: RegionPanel) -> float:
    """State-clustered CR0 variance of the control mean outcome.

    The control outcome is regressed on an intercept and the covariates and
    the sandwich variance of ``alpha + W0' beta`` is returned; since least
    squares with an intercept passes through the means, this functional is
    the control mean itself.
    """
    cp = panel.control()
    if len(cp.control_states) < 2:
        raise DomainError("control regions must span at least 2 states")
    n0 = cp.n
    X = np.column_stack([np.ones(n0), cp.covariates])
    keep = _independent_columns(X)
    if len(keep) < X.shape[1]:
        dropped = [cp.covariate_names[j - 1] for j in range(1, X.shape[1]) if j not in keep]
        msg = f"control design is rank deficient; dropping collinear columns {dropped}"
        warnings.warn(msg, stacklevel=2)
        logger.warning(msg)
    X = X[:, keep]
    y = cp.outcome
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ (X.T @ y)
    u = y - X @ beta
    a = X.mean(axis=0)
    _, codes = np.unique(cp.state_id, return_inverse=True)
    scores = np.zeros((codes.max() + 1, X.shape[1]))
    np.add.at(scores, codes.ravel(), X * u[:, None])
    meat = scores.T @ scores
    ga = XtX_inv @ a
    return float(max(ga @ meat @ ga, 0.0))


def confidence_interval(estimate: EffectEstimate, m1: int, level: float = 0.95) -> tuple:
    """``psi_hat +/- t_{(1+level)/2, m1-1} * sqrt(var_psi1 + var_psi0)``."""
    if m1 < 2:
        raise DomainError(f"intervals need at least 2 treated states, got {m1}")
    if not (np.isfinite(estimate.var_psi1) and np.isfinite(estimate.var_psi0)):
        raise DomainError("variances are not set")
    half = stats.t.ppf(0.5 + level / 2, m1 - 1) * estimate.se
    return (estimate.psi_hat - half, estimate.psi_hat + half)


def estimate_effect(
    panel: RegionPanel,
    config: EstimatorConfig,
    noise: NoiseCovarianceSet | None = None,
    jackknife: bool = True,
):
    """Fit the weights and return ``(EffectEstimate, FitResult)``."""
    res = fit(panel, config, noise)
    est = point_estimate(res.gamma, panel)
    if jackknife:
        m1 = len(panel.treated_states)
        var1, trace = jackknife_variance(panel, config, noise)
        est = replace(est, var_psi1=var1, var_psi0=control_mean_variance(panel), df=m1 - 1,
                      trace=trace)
        est.ci = confidence_interval(est, m1)
    return est, res


def oaxaca_blinder_weights(
    panel: RegionPanel, covariates=None, mode: str = "OLS", rho: float = 0.0, target=None
) -> np.ndarray:
    """Implied weights of a regression prediction at the control mean.

    ``sum(w * J1)`` equals ``alpha + v' beta`` from an OLS fit (``mode="OLS"``)
    or a GLS fit with block-equicorrelated errors (``mode="GLS"``) of the
    treated outcome on the covariates.  Weights may be negative.
    """
    mode = mode.upper()
    if mode not in ("OLS", "GLS"):
        raise DomainError(f"mode must be OLS or GLS, got {mode!r}")
    tp = panel.treated()
    Z = tp.covariates if covariates is None else covariates.X_hat
    v = panel.control_mean() if target is None else np.asarray(target, dtype=float)
    omega = BlockCorrelation(tp.state_id, rho if mode == "GLS" else 0.0)
    return least_norm_gls_weights(Z, v, omega, names=panel.covariate_names)


def _with_lagged_outcomes(panel, noise, outcomes, years, prefix):
    cols = [outcomes[y].to_numpy(dtype=float) for y in years]
    names = panel.covariate_names + tuple(f"{prefix}{y}" for y in years)
    cov = np.column_stack([panel.covariates] + cols)
    sizes = None
    if panel.sample_sizes is not None:
        sizes = np.column_stack([panel.sample_sizes] + [panel.sample_sizes[:, :1]] * len(years))
    out = panel.with_covariates(cov, names, sizes)
    if noise is None:
        return out, None
    q0, k = panel.q, len(years)
    raw = np.zeros((panel.n, q0 + k, q0 + k))
    raw[:, :q0, :q0] = noise.raw_per_unit
    nn = NoiseCovarianceSet.from_raw(
        raw, noise.treated_mask, sizes, noise.replicate_count, noise.scale_factor, noise.keys
    )
    return out, nn


def _extend_tolerances(tol, names, prefix):
    if not isinstance(tol, ToleranceSpec):
        return tol
    tiers = dict(tol.tiers)
    for nm in names:
        if nm.startswith(prefix) and nm not in tol.values and nm not in tiers:
            tiers[nm] = "pre_outcome"
    return ToleranceSpec(dict(tol.values), tiers, tol.default)


def placebo_validation(
    panel: RegionPanel,
    outcomes: pd.DataFrame,
    windows: dict,
    configs,
    noise: NoiseCovarianceSet | None = None,
    prefix: str = "outcome_",
) -> pd.DataFrame:
    """Pre-period prediction errors of each estimator.

    Parameters
    ----------
    panel : RegionPanel
        Covariates measured before the target years.
    outcomes : DataFrame
        One column per year, rows aligned with ``panel``.
    windows : dict
        ``target_year -> list of training years``.  Training-year outcomes
        join the covariates (named ``prefix + year``) and the weights then
        predict the target year.
    configs : sequence of EstimatorConfig

    Returns
    -------
    DataFrame
        One row per config: ``adjustment``, ``estimator``, ``error_<year>``
        for every target year, and ``rmse`` across target years.  The error
        is the weighted treated mean minus the control mean.
    """
    if len(outcomes) != panel.n:
        raise SchemaError("outcome history rows do not match the panel")
    needed = set(windows) | {y for ys in windows.values() for y in ys}
    missing = sorted(str(y) for y in needed if y not in outcomes.columns)
    if missing:
        raise SchemaError(f"outcome history is missing year columns {missing}")
    rows = []
    for cfg in configs:
        row = {"adjustment": cfg.adjustment, "estimator": cfg.label}
        errs = []
        for year, train in windows.items():
            p, nn = _with_lagged_outcomes(panel, noise, outcomes, list(train), prefix)
            p = p.with_outcome(outcomes[year].to_numpy(dtype=float))
            c = replace(cfg, tolerances=_extend_tolerances(cfg.tolerances, p.covariate_names, prefix))
            res = fit(p, c, nn)
            err = point_estimate(res.gamma, p).psi_hat
            row[f"error_{year}"] = err
            errs.append(err)
        row["rmse"] = float(np.sqrt(np.mean(np.square(errs))))
        rows.append(row)
    return pd.DataFrame(rows)
