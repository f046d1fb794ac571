"""Balance problems built from panels, weights, ridge correction and diagnostics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .calibration import CalibratedCovariates, NoiseCovarianceSet, calibrate
from .errors import AugmentationInfeasibleError, DomainError, InfeasibleError, SchemaError
from .panel import RegionPanel
from .qp import BalanceProblem, BlockCorrelation, WeightSolution, solve_balance_qp

logger = logging.getLogger(__name__)

# Default tolerance tiers in percentage points.
TIERS = {
    "pre_outcome": 0.05,
    "unemployment": 0.15,
    "population_ratio": 0.5,
    "demographic": 1.0,
    "composition": 2.0,
    "governance": 25.0,
}


@dataclass
class ToleranceSpec:
    """Per-covariate tolerances.

    Lookup order for a covariate: ``values``, then the tier named in
    ``tiers``, then ``default``.  A covariate matched by none of these is a
    schema error.

    Examples
    --------
    >>> spec = ToleranceSpec(values={"x1": 0.1}, tiers={"gov": "governance"})
    >>> spec.resolve(["x1", "gov"]).tolist()
    [0.1, 25.0]
    """

    values: dict = field(default_factory=dict)
    tiers: dict = field(default_factory=dict)
    default: float | None = None

    def __post_init__(self):
        for name, d in self.values.items():
            if not float(d) >= 0:
                raise DomainError(f"tolerance for {name!r} must be nonnegative, got {d}")
        for name, t in self.tiers.items():
            if t not in TIERS:
                raise DomainError(f"unknown tolerance tier {t!r} for {name!r}")
        if self.default is not None and not float(self.default) >= 0:
            raise DomainError("default tolerance must be nonnegative")

    @classmethod
    def uniform(cls, delta: float) -> "ToleranceSpec":
        return cls(default=float(delta))

    def resolve(self, names) -> np.ndarray:
        out = []
        for name in names:
            if name in self.values:
                out.append(float(self.values[name]))
            elif name in self.tiers:
                out.append(TIERS[self.tiers[name]])
            elif self.default is not None:
                out.append(float(self.default))
            else:
                raise SchemaError(f"no tolerance given for covariate {name!r}")
        return np.asarray(out, dtype=float)


@dataclass(frozen=True)
class AugmentationSpec:
    """Ridge bias correction settings; ``lam`` is a positive float or ``"auto"``."""

    lam: float | str = "auto"
    imbalance_cap: float = 0.5

    def __post_init__(self):
        if not self.imbalance_cap > 0:
            raise DomainError("imbalance_cap must be positive")
        if self.lam != "auto" and not (np.isfinite(self.lam) and float(self.lam) > 0):
            raise DomainError(f"lambda must be positive or 'auto', got {self.lam!r}")


def assemble_problem(
    panel: RegionPanel,
    covariates: CalibratedCovariates | None,
    tolerances,
    rho: float,
    target=None,
) -> BalanceProblem:
    """Treated covariates against the control mean.

    Parameters
    ----------
    panel : RegionPanel
    covariates : CalibratedCovariates or None
        Adjusted treated rows; ``None`` balances the raw ``W``.
    tolerances : ToleranceSpec, float or array
    rho : float
    target : array, optional
        Overrides the control mean of ``W``.
    """
    names = panel.covariate_names
    if covariates is None:
        tp = panel.treated()
        Z = tp.covariates
        states = tp.state_id
    else:
        if tuple(covariates.names) != names:
            raise SchemaError(
                f"calibrated covariates {covariates.names} do not match panel covariates {names}"
            )
        Z = covariates.X_hat
        states = covariates.state_id
    if Z.shape[0] == 0:
        raise DomainError("panel has no treated regions")
    v = panel.control_mean() if target is None else np.asarray(target, dtype=float)
    if isinstance(tolerances, ToleranceSpec):
        delta = tolerances.resolve(names)
    else:
        delta = np.broadcast_to(np.asarray(tolerances, dtype=float), (len(names),)).copy()
    return BalanceProblem(Z, v, delta, BlockCorrelation(states, rho), names)


def solve_weights(problem: BalanceProblem, **kwargs) -> WeightSolution:
    """Solve the balancing QP and attach the balance table."""
    sol = solve_balance_qp(problem, **kwargs)
    sol.info["balance"] = _balance_frame(problem.Z, sol.gamma, problem.v, problem.names)
    return sol


# ----------------------------------------------------------------------
# ridge correction


@dataclass
class _RidgePath:
    """Eigen-decomposed pieces of the correction, reused across lambdas."""

    OiZc: np.ndarray
    U: np.ndarray
    e: np.ndarray
    r: np.ndarray

    def correction(self, lam):
        coef = np.where(self.e > 0, 1.0 / (self.e + lam), 0.0) * (self.U.T @ self.r)
        return self.OiZc @ (self.U @ coef)

    def imbalance(self, lam):
        """Imbalance ``Z'(gamma + correction) - v`` as a function of lambda."""
        shrink = np.where(self.e > 0, lam / (self.e + lam), 1.0)
        return -self.U @ (shrink * (self.U.T @ self.r))


def _ridge_path(gamma, Z, v, omega: BlockCorrelation):
    Z = np.asarray(Z, dtype=float)
    w1 = omega.solve(np.ones(Z.shape[0]))
    mu = Z.T @ w1 / w1.sum()
    Zc = Z - mu
    OiZc = omega.solve(Zc)
    M = Zc.T @ OiZc
    e, U = np.linalg.eigh(0.5 * (M + M.T))
    e = np.where(e > 1e-12 * max(e.max(initial=0.0), 1.0), e, 0.0)
    return _RidgePath(OiZc, U, e, v - Z.T @ gamma)


def ridge_augment(
    solution: WeightSolution, Z, v, spec: AugmentationSpec, omega: BlockCorrelation
) -> WeightSolution:
    """Ridge bias correction of balancing weights.

    Adds ``Omega^{-1} Zc (Zc' Omega^{-1} Zc + lam I)^{-1} (v - Z' gamma)``,
    where ``Zc`` is ``Z`` centered at its ``Omega^{-1}``-weighted mean.  The
    centering keeps the weights summing to one.  The remaining imbalance is
    ``-lam (M + lam I)^{-1} (v - Z' gamma)``, so a larger ``lam`` means a
    smaller correction.

    With ``lam="auto"`` the largest ``lam`` in ``[1e-8, 1e8]`` whose maximum
    absolute imbalance is within the cap is found by log-scale bisection.
    The search trace is stored in ``info["ridge_trace"]`` as
    ``(lam, max_imbalance, correction_norm)`` triples.
    """
    if solution.status == "infeasible":
        raise InfeasibleError("cannot augment an infeasible base solution", solution.max_violation)
    v = np.asarray(v, dtype=float)
    path = _ridge_path(solution.gamma, Z, v, omega)
    cap = spec.imbalance_cap
    trace = []

    def evaluate(lam):
        imb = path.imbalance(lam)
        m = float(np.abs(imb).max(initial=0.0))
        trace.append((float(lam), m, float(np.linalg.norm(path.correction(lam)))))
        return m

    if spec.lam == "auto":
        base = float(np.abs(path.r).max(initial=0.0))
        if base <= cap:
            out = replace(solution, info=dict(solution.info))
            out.info.update(ridge_lambda=np.inf, ridge_trace=[])
            return out
        lo, hi = 1e-8, 1e8
        if evaluate(lo) > cap:
            best = trace[-1][1]
            raise AugmentationInfeasibleError(
                f"no lambda in [1e-8, 1e8] brings the maximum imbalance below {cap}; "
                f"best achieved {best:.6g}",
                best,
            )
        if evaluate(hi) <= cap:
            lam = hi
        else:
            llo, lhi = np.log(lo), np.log(hi)
            for _ in range(60):
                mid = 0.5 * (llo + lhi)
                if evaluate(np.exp(mid)) <= cap:
                    llo = mid
                else:
                    lhi = mid
            lam = float(np.exp(llo))
    else:
        lam = float(spec.lam)
        evaluate(lam)

    gamma = solution.gamma + path.correction(lam)
    if (gamma < 0).any():
        logger.info("ridge correction produced %d negative weights", int((gamma < 0).sum()))
    info = dict(solution.info)
    info.update(ridge_lambda=lam, ridge_trace=trace, base_gamma=solution.gamma)
    return replace(
        solution,
        gamma=gamma,
        imbalance=Z.T @ gamma - v,
        objective=omega.quad(gamma),
        info=info,
    )


# ----------------------------------------------------------------------
# diagnostics


def _balance_frame(Z, gamma, v, names=None):
    Z = np.asarray(Z, dtype=float)
    q = Z.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(q)]
    unweighted = Z.mean(axis=0) - v
    weighted = Z.T @ gamma - v
    sd = Z.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        std_u = np.where(sd > 0, unweighted / sd, np.nan)
        std_w = np.where(sd > 0, weighted / sd, np.nan)
    return pd.DataFrame(
        {
            "variable": names,
            "unweighted_diff": unweighted,
            "weighted_diff": weighted,
            "std_unweighted_diff": std_u,
            "std_weighted_diff": std_w,
        }
    )


def balance_table(solution, panel: RegionPanel, covariates=None, target=None) -> pd.DataFrame:
    """Unweighted and weighted treated-minus-target differences per covariate.

    Standardized columns divide by the treated standard deviation and are
    NaN for zero-variance covariates.
    """
    gamma = np.asarray(getattr(solution, "gamma", solution), dtype=float)
    Z = panel.treated().covariates if covariates is None else covariates.X_hat
    v = panel.control_mean() if target is None else np.asarray(target, dtype=float)
    return _balance_frame(Z, gamma, v, panel.covariate_names)


def state_weight_summary(solution, state_id) -> pd.DataFrame:
    """Positive and negative weight mass per state, scaled so the net total is 100.

    ``state_id`` holds the state of every weighted unit (or pass the panel).
    """
    gamma = np.asarray(getattr(solution, "gamma", solution), dtype=float)
    if isinstance(state_id, RegionPanel):
        state_id = state_id.treated().state_id
    state_id = np.asarray(state_id).astype(str)
    total = gamma.sum()
    df = pd.DataFrame(
        {"state_id": state_id, "positive": np.maximum(gamma, 0), "negative": np.minimum(gamma, 0)}
    )
    out = df.groupby("state_id", sort=True)[["positive", "negative"]].sum() * (100.0 / total)
    out["net"] = out["positive"] + out["negative"]
    return out.reset_index()


# ----------------------------------------------------------------------
# end-to-end estimator


@dataclass(frozen=True)
class EstimatorConfig:
    """One weighting estimator: adjustment, objective and tolerances.

    Attributes
    ----------
    adjustment : {"none", "homogeneous", "heterogeneous", "correlated"}
    rho : float
        Assumed within-state correlation; 0 gives SBW.
    tolerances : ToleranceSpec or float
    augmentation : AugmentationSpec, optional
    relax_factor, relax_rounds : float, int
        Tolerance relaxation used when a problem is infeasible and
        relaxation is allowed.
    """

    adjustment: str = "none"
    rho: float = 0.0
    tolerances: object = 0.0
    augmentation: AugmentationSpec | None = None
    relax_factor: float = 1.2
    relax_rounds: int = 25
    name: str | None = None

    def __post_init__(self):
        if self.adjustment not in ("none", "homogeneous", "heterogeneous", "correlated"):
            raise DomainError(f"unknown adjustment {self.adjustment!r}")
        if not 0 <= self.rho < 1:
            raise DomainError(f"rho must lie in [0, 1), got {self.rho}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        base = "SBW" if self.rho == 0 else f"H-SBW({self.rho:g})"
        return ("BC-" + base) if self.augmentation else base


@dataclass
class FitResult:
    calibrated: CalibratedCovariates
    problem: BalanceProblem
    solution: WeightSolution
    relax_rounds: int = 0

    @property
    def gamma(self):
        return self.solution.gamma


def relax_tolerances(delta, violation, factor=1.2):
    """One relaxation round: violated rows grow by ``factor`` plus a share of the violation.

    The additive part lets exact-balance rows (tolerance 0) move.
    """
    delta = np.asarray(delta, dtype=float).copy()
    viol = np.asarray(violation, dtype=float)
    hit = viol > 0
    delta[hit] = factor * delta[hit] + (factor - 1.0) * viol[hit]
    return delta


def fit(
    panel: RegionPanel,
    config: EstimatorConfig,
    noise: NoiseCovarianceSet | None = None,
    target=None,
    relax: bool = False,
) -> FitResult:
    """Calibrate, assemble, solve and optionally augment.

    Raises :class:`InfeasibleError` when the tolerances cannot be met, after
    up to ``config.relax_rounds`` relaxation rounds if ``relax`` is set.
    """
    if target is None:
        panel.require_estimable()
    elif panel.n1 < 2:
        raise DomainError(f"estimation needs at least 2 treated regions, got {panel.n1}")
    cal = calibrate(panel, noise, config.adjustment)
    covs = None if config.adjustment == "none" else cal
    problem = assemble_problem(panel, covs, config.tolerances, config.rho, target)
    sol = solve_weights(problem)
    rounds = 0
    while sol.status == "infeasible":
        if not relax or rounds >= config.relax_rounds:
            msg = f"balance constraints are infeasible; maximal violation {sol.max_violation:.6g}"
            if rounds:
                msg += f" after {rounds} relaxation rounds"
            raise InfeasibleError(msg, sol.max_violation)
        rounds += 1
        problem = problem.with_delta(
            relax_tolerances(problem.delta, sol.row_violation, config.relax_factor)
        )
        logger.info("relaxation round %d: tolerances %s", rounds, problem.delta.tolist())
        sol = solve_weights(problem)
    if config.augmentation is not None:
        sol = ridge_augment(sol, problem.Z, problem.v, config.augmentation, problem.omega)
    return FitResult(cal, problem, sol, rounds)
