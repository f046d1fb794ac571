"""Balancing quadratic program over the simplex.

Solves

    min  gamma' Omega gamma
    s.t. |Z' gamma - v| <= delta,  sum(gamma) = 1,  gamma >= 0

where Omega is block-equicorrelated: ones on the diagonal, ``rho`` between
units of the same group and zero otherwise.

The objective is rewritten as ``(1 - rho) |gamma|^2 + rho |t|^2`` with one
auxiliary group total ``t_s = sum_c gamma_sc`` per group, which makes the
Hessian diagonal.  A primal-dual interior point method (Mehrotra
predictor-corrector) then needs only a small dense system per iteration, of
order ``1 + groups + balance rows``.  The interior point iterate is finished
by a primal-dual active-set pass that solves the equality-constrained KKT
system on the detected support exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse

from .errors import DomainError, RankDeficiencyError

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000
FEASIBILITY_CERTIFICATE_TOL = 1e-6


class BlockCorrelation:
    """Equicorrelated block-diagonal matrix kept in implicit form.

    Parameters
    ----------
    group_labels : array-like
        Group (state) label of every unit.
    rho : float
        Within-group correlation, ``0 <= rho < 1``.

    Notes
    -----
    Products with ``Omega`` and ``Omega^{-1}`` cost O(n): each block
    ``(1 - rho) I + rho 11'`` has the Sherman-Morrison inverse
    ``(I - rho / (1 - rho + p rho) 11') / (1 - rho)``.
    """

    def __init__(self, group_labels, rho):
        rho = float(rho)
        if not np.isfinite(rho) or not 0.0 <= rho < 1.0:
            raise DomainError(f"rho must lie in [0, 1), got {rho}")
        labels = np.asarray(group_labels)
        if labels.ndim != 1 or labels.size == 0:
            raise DomainError("at least one unit is required")
        self.labels = labels
        self.rho = rho
        self.groups, self.codes, self.sizes = np.unique(
            labels, return_inverse=True, return_counts=True
        )
        self.codes = self.codes.ravel()
        n = labels.size
        self.indicator = sparse.csr_matrix(
            (np.ones(n), (self.codes, np.arange(n))), shape=(len(self.groups), n)
        )

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def unit_group_sizes(self) -> np.ndarray:
        return self.sizes[self.codes]

    def group_sums(self, x):
        return self.indicator @ np.asarray(x, dtype=float)

    def quad(self, gamma) -> float:
        gamma = np.asarray(gamma, dtype=float)
        t = self.group_sums(gamma)
        return float((1 - self.rho) * gamma @ gamma + self.rho * t @ t)

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if self.rho == 0.0:
            return x.copy()
        return (1 - self.rho) * x + self.rho * self.group_sums(x)[self.codes]

    def solve(self, x):
        """Return ``Omega^{-1} x`` for a vector or a matrix with n rows."""
        x = np.asarray(x, dtype=float)
        if self.rho == 0.0:
            return x.copy()
        rho = self.rho
        c = rho / (1 - rho + rho * self.sizes)
        sums = self.group_sums(x)
        corr = (c[:, None] * sums if x.ndim == 2 else c * sums)[self.codes]
        return (x - corr) / (1 - rho)

    def min_eigenvalue(self) -> float:
        return 1.0 - self.rho if (self.sizes > 1).any() else 1.0

    def subset(self, index) -> "BlockCorrelation":
        return BlockCorrelation(self.labels[index], self.rho)

    def toarray(self) -> np.ndarray:
        if self.n > DENSE_LIMIT:
            raise MemoryError(f"refusing to materialize a {self.n}x{self.n} correlation matrix")
        same = self.codes[:, None] == self.codes[None, :]
        out = np.where(same, self.rho, 0.0)
        np.fill_diagonal(out, 1.0)
        return out


def build_equicorrelated_omega(group_labels, rho) -> BlockCorrelation:
    return BlockCorrelation(group_labels, rho)


@dataclass
class BalanceProblem:
    """Inputs of one balancing QP.

    ``Z`` holds one row per unit; ``delta`` may contain ``inf`` to drop a row.
    """

    Z: np.ndarray
    v: np.ndarray
    delta: np.ndarray
    omega: BlockCorrelation
    names: tuple | None = None

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Z.ndim == 1:
            self.Z = self.Z[:, None]
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        delta = np.asarray(self.delta, dtype=float)
        if delta.ndim == 0:
            delta = np.full(self.Z.shape[1], float(delta))
        self.delta = delta
        q = self.Z.shape[1]
        if self.v.shape != (q,) or self.delta.shape != (q,):
            raise DomainError(
                f"Z has {q} columns but v has {self.v.size} and delta {self.delta.size} entries"
            )
        if not np.isfinite(self.Z).all() or not np.isfinite(self.v).all():
            raise DomainError("Z and v must be finite")
        if np.isnan(self.delta).any() or (self.delta < 0).any():
            raise DomainError("delta must be nonnegative")
        if self.omega.n != self.Z.shape[0]:
            raise DomainError("omega dimension does not match the rows of Z")
        if self.names is not None:
            self.names = tuple(self.names)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    def with_delta(self, delta) -> "BalanceProblem":
        return BalanceProblem(self.Z, self.v, delta, self.omega, self.names)


@dataclass
class WeightSolution:
    gamma: np.ndarray
    imbalance: np.ndarray
    objective: float
    status: str
    iterations: int = 0
    polish_passes: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    max_violation: float = 0.0
    row_violation: np.ndarray | None = None
    multipliers: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.gamma > 0)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class KKTReport:
    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(
            self.stationarity, self.primal_feasibility, self.dual_feasibility, self.complementarity
        )


# ----------------------------------------------------------------------
# closed forms


def closed_form_dispersion(group_labels, rho) -> np.ndarray:
    """Minimizer of ``gamma' Omega gamma`` on the simplex with no balance rows."""
    omega = BlockCorrelation(group_labels, rho)
    w = 1.0 / ((omega.unit_group_sizes - 1) * omega.rho + 1.0)
    return w / w.sum()


def _omega_solve(omega, x):
    if isinstance(omega, BlockCorrelation):
        return omega.solve(x)
    return linalg.cho_solve(linalg.cho_factor(np.asarray(omega, dtype=float)), x)


def _first_dependent_column(M, tol):
    for k in range(1, M.shape[0] + 1):
        ev = np.linalg.eigvalsh(M[:k, :k])
        if ev[0] <= tol * max(1.0, ev[-1]):
            return k - 1
    return None


def least_norm_gls_weights(Z_Q, v, omega_Q, names=None) -> np.ndarray:
    """Least-norm weights reproducing ``v`` with generalized inner product.

    Parameters
    ----------
    Z_Q : ndarray, shape (n_Q, q)
        Covariates of the units in the support, one row per unit.
    v : ndarray, shape (q,)
        Target.
    omega_Q : BlockCorrelation or ndarray
        Positive definite weight matrix on the support.
    names : sequence of str, optional
        Column names used in error messages.

    Returns
    -------
    ndarray
        ``Omega^{-1} C [C' Omega^{-1} C]^{-1} (v - mu) + Omega^{-1} 1 / (1' Omega^{-1} 1)``
        with ``C = Z_Q - 1 mu'`` and ``mu = Z_Q' Omega^{-1} 1 / (1' Omega^{-1} 1)``.
        These are the prediction weights of a GLS fit of an outcome on
        ``[1, Z_Q]`` evaluated at ``v``; no sign constraint is imposed.
    """
    Z_Q = np.asarray(Z_Q, dtype=float)
    if Z_Q.ndim == 1:
        Z_Q = Z_Q[:, None]
    v = np.atleast_1d(np.asarray(v, dtype=float))
    n = Z_Q.shape[0]
    w1 = _omega_solve(omega_Q, np.ones(n))
    mu = Z_Q.T @ w1 / w1.sum()
    C = Z_Q - mu
    OiC = _omega_solve(omega_Q, C)
    M = C.T @ OiC
    try:
        factor = linalg.cho_factor(M)
        ev = np.linalg.eigvalsh(M)
        if ev[0] <= 1e-12 * max(1.0, ev[-1]):
            raise linalg.LinAlgError
    except linalg.LinAlgError:
        col = _first_dependent_column(M, 1e-12)
        label = names[col] if (names is not None and col is not None) else col
        raise RankDeficiencyError(
            f"centered design is rank deficient; column {label!r} is collinear with earlier columns",
            column=label,
        ) from None
    return OiC @ linalg.cho_solve(factor, v - mu) + w1 / w1.sum()


# ----------------------------------------------------------------------
# KKT diagnostics


def _active_rows(imb, delta, tol=1e-9):
    finite = np.isfinite(delta)
    d = np.where(finite, delta, 0.0)
    upper = finite & (imb >= d - tol * np.maximum(1.0, d))
    lower = finite & (imb <= -d + tol * np.maximum(1.0, d))
    return upper, lower


def kkt_residuals(problem: BalanceProblem, solution) -> KKTReport:
    """Recompute KKT residuals of a candidate from scratch.

    Multipliers are re-estimated by least squares on the support of
    ``gamma`` so the report does not depend on the solver that produced it.
    """
    g = np.asarray(getattr(solution, "gamma", solution), dtype=float)
    Z, v, delta, omega = problem.Z, problem.v, problem.delta, problem.omega
    Zc = Z - v
    imb = Zc.T @ g
    finite = np.isfinite(delta)
    viol = np.where(finite, np.abs(imb) - delta, -np.inf)
    primal = max(abs(g.sum() - 1.0), max(0.0, viol.max(initial=0.0)), max(0.0, -g.min()))

    upper, lower = _active_rows(imb, delta)
    rows = np.flatnonzero(upper | lower)
    C = np.column_stack([np.ones(len(g))] + [Zc[:, j] for j in rows])
    support = g > 1e-14
    Og = omega.matvec(g)
    lam, *_ = np.linalg.lstsq(C[support], Og[support], rcond=None)
    z = Og - C @ lam
    stationarity = float(np.abs(z[support]).max(initial=0.0))
    dual = max(0.0, float(-z[~support].min(initial=0.0)))
    for k, j in enumerate(rows):
        if delta[j] == 0:
            continue
        lj = lam[k + 1]
        if upper[j] and lj > 0:
            dual = max(dual, lj)
        if lower[j] and lj < 0:
            dual = max(dual, -lj)
    slack = np.where(finite, delta - np.abs(imb), 0.0)[rows]
    comp = float(np.abs(np.maximum(g, 0) * np.where(support, 0.0, z)).max(initial=0.0))
    comp = max(comp, float(np.abs(lam[1:] * slack).max(initial=0.0)))
    return KKTReport(stationarity, float(primal), float(dual), comp)


# ----------------------------------------------------------------------
# solver


class _Reduced:
    """Row-scaled data of a problem, with inactive rows removed."""

    def __init__(self, problem: BalanceProblem):
        Z, v, delta = problem.Z, problem.v, problem.delta
        self.omega = problem.omega
        self.n = problem.n
        Zc = Z - v
        finite = np.isfinite(delta)
        nonzero = np.abs(Zc).max(axis=0) > 0
        self.rows = np.flatnonzero(finite & nonzero)
        self.scale = np.abs(Zc[:, self.rows]).max(axis=0) if self.rows.size else np.zeros(0)
        self.Zs = Zc[:, self.rows] / self.scale
        self.ds = delta[self.rows] / self.scale
        self.eq = np.flatnonzero(self.ds == 0)
        self.ineq = np.flatnonzero(self.ds > 0)


def _ipm(red: _Reduced, tol, max_iter):
    """Mehrotra predictor-corrector on the reduced formulation."""
    n, omega = red.n, red.omega
    rho = omega.rho
    m = omega.n_groups if rho > 0 else 0
    ni = red.ineq.size
    N = n + m + ni

    H = np.concatenate([np.full(n, 1 - rho), np.full(m, rho), np.zeros(ni)])
    blocks = [np.hstack([np.ones((1, n)), np.zeros((1, m + ni))])]
    if red.eq.size:
        blocks.append(np.hstack([red.Zs[:, red.eq].T, np.zeros((red.eq.size, m + ni))]))
    if ni:
        blocks.append(np.hstack([red.Zs[:, red.ineq].T, np.zeros((ni, m)), -np.eye(ni)]))
    if m:
        G = omega.indicator.toarray()
        blocks.append(np.hstack([G, -np.eye(m), np.zeros((m, ni))]))
    A = np.vstack(blocks)
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    k = A.shape[0]

    L = np.arange(n)  # gamma >= 0
    B = np.arange(n + m, N)  # -d <= e <= d
    lo = -red.ds[red.ineq]
    hi = red.ds[red.ineq]

    x = np.zeros(N)
    x[:n] = 1.0 / n
    if m:
        x[n : n + m] = omega.group_sums(x[:n])
    y = np.zeros(k)
    zl = np.full(n, 1.0 / n)
    zb_lo = np.full(ni, 1.0 / n)
    zb_hi = np.full(ni, 1.0 / n)
    nb = n + 2 * ni

    def max_step(s, ds):
        neg = ds < 0
        return np.min(-s[neg] / ds[neg]) if neg.any() else np.inf

    status = "max_iter"
    it = 0
    history = []
    last = (x, y, zl, zb_lo, zb_hi)
    for it in range(1, max_iter + 1):
        s_l = x[L]
        s_blo = x[B] - lo
        s_bhi = hi - x[B]
        zfull = np.zeros(N)
        zfull[L] += zl
        zfull[B] += zb_lo - zb_hi
        r_d = H * x - A.T @ y - zfull
        r_p = A @ x - b
        mu = (s_l @ zl + s_blo @ zb_lo + s_bhi @ zb_hi) / nb
        rp_norm = np.abs(r_p).max()
        rd_norm = np.abs(r_d).max()
        history.append(rp_norm)
        if not np.isfinite(rp_norm + rd_norm + mu):
            status = "nonfinite"
            x, y, zl, zb_lo, zb_hi = last
            break
        if rp_norm <= tol and rd_norm <= tol and mu <= tol * 1e-2:
            status = "optimal"
            break
        if mu < 1e-18 and rp_norm <= 1e3 * tol:
            # complementarity is exhausted; the polish pass finishes the job
            status = "optimal"
            break
        last = (x, y, zl, zb_lo, zb_hi)
        if it > 30 and rp_norm > 1e-7 and history[-15] < 2.0 * rp_norm:
            status = "stalled"
            break

        Dg = H.copy()
        Dg[L] += zl / s_l
        Dg[B] += zb_lo / s_blo + zb_hi / s_bhi
        AD = A / Dg
        M = AD @ A.T
        M[np.diag_indices_from(M)] += 1e-14 * max(1.0, np.abs(np.diag(M)).max())
        try:
            fac = linalg.cho_factor(M, check_finite=False)
        except linalg.LinAlgError:
            status = "singular"
            break

        def newton(rl, rblo, rbhi):
            r = -r_d.copy()
            r[L] += rl / s_l
            r[B] += rblo / s_blo - rbhi / s_bhi
            dy = linalg.cho_solve(fac, -r_p - AD @ r, check_finite=False)
            dx = (r + A.T @ dy) / Dg
            dzl = (rl - zl * dx[L]) / s_l
            dzblo = (rblo - zb_lo * dx[B]) / s_blo
            dzbhi = (rbhi + zb_hi * dx[B]) / s_bhi
            return dx, dy, dzl, dzblo, dzbhi

        def step_len(dx, dzl, dzblo, dzbhi):
            return min(
                max_step(s_l, dx[L]),
                max_step(s_blo, dx[B]),
                max_step(s_bhi, -dx[B]),
                max_step(zl, dzl),
                max_step(zb_lo, dzblo),
                max_step(zb_hi, dzbhi),
            )

        aff = newton(-s_l * zl, -s_blo * zb_lo, -s_bhi * zb_hi)
        dx, _, dzl, dzblo, dzbhi = aff
        a = min(1.0, step_len(dx, dzl, dzblo, dzbhi))
        mu_aff = (
            (s_l + a * dx[L]) @ (zl + a * dzl)
            + (s_blo + a * dx[B]) @ (zb_lo + a * dzblo)
            + (s_bhi - a * dx[B]) @ (zb_hi + a * dzbhi)
        ) / nb
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        sm = sigma * mu
        dx, dy, dzl, dzblo, dzbhi = newton(
            sm - s_l * zl - aff[0][L] * aff[2],
            sm - s_blo * zb_lo - aff[0][B] * aff[3],
            sm - s_bhi * zb_hi + aff[0][B] * aff[4],
        )
        a = min(1.0, 0.995 * step_len(dx, dzl, dzblo, dzbhi))
        x = x + a * dx
        y = y + a * dy
        zl = zl + a * dzl
        zb_lo = zb_lo + a * dzblo
        zb_hi = zb_hi + a * dzbhi

    gamma = x[:n]
    e = x[B]
    return {
        "status": status,
        "iterations": it,
        "gamma": gamma,
        "zl": zl,
        "upper": (hi - e) < zb_hi,
        "lower": (e - lo) < zb_lo,
        "primal_residual": float(history[-1]) if history else float("nan"),
    }


def _eqp(red: _Reduced, support, upper, lower):
    """Exact solve on a fixed support and set of active inequality rows."""
    omega, n = red.omega, red.n
    act_eq = red.eq
    act_up = red.ineq[upper]
    act_lo = red.ineq[lower]
    cols = np.concatenate([act_eq, act_up, act_lo]).astype(int)
    rhs = np.concatenate([[1.0], np.zeros(act_eq.size), red.ds[act_up], -red.ds[act_lo]])
    Q = np.flatnonzero(support)
    C = np.column_stack([np.ones(n)] + [red.Zs[:, j] for j in cols])
    CQ = C[Q]
    omQ = omega.subset(Q)
    W = omQ.solve(CQ)
    M = CQ.T @ W
    try:
        lam = linalg.solve(M, rhs, assume_a="pos")
        if not np.isfinite(lam).all():
            raise linalg.LinAlgError
    except (linalg.LinAlgError, ValueError):
        lam = np.linalg.lstsq(M, rhs, rcond=None)[0]
    gamma = np.zeros(n)
    gamma[Q] = W @ lam
    z = omega.matvec(gamma) - C @ lam
    z[Q] = 0.0
    lam_rows = np.zeros(red.rows.size)
    lam_rows[cols] = lam[1:]
    return gamma, z, lam[0], lam_rows


def _start_from_point(red: _Reduced, gamma, ipm):
    """Active-set guess read off a feasible point instead of the IPM iterate."""
    r = red.Zs[:, red.ineq].T @ gamma
    d = red.ds[red.ineq]
    out = dict(ipm)
    out.update(
        gamma=gamma,
        zl=np.zeros_like(gamma),
        upper=r >= d - 1e-9,
        lower=r <= -d + 1e-9,
    )
    return out


def _polish(red: _Reduced, ipm, max_passes, tol):
    support = ipm["gamma"] > ipm["zl"]
    upper = ipm["upper"].copy()
    lower = ipm["lower"].copy() & ~upper
    for p in range(1, max_passes + 1):
        if not support.any():
            support = ipm["gamma"] >= ipm["gamma"].max()
        gamma, z, lam0, lam_rows = _eqp(red, support, upper, lower)
        r = red.Zs.T @ gamma
        ri = r[red.ineq]
        di = red.ds[red.ineq]
        li = lam_rows[red.ineq]
        new_support = (gamma - z) > 0
        new_upper = (-li + (ri - di)) > 0
        new_lower = (li + (-di - ri)) > 0
        both = new_upper & new_lower
        new_lower[both] = False
        if (
            (new_support == support).all()
            and (new_upper == upper).all()
            and (new_lower == lower).all()
        ):
            ok = (
                gamma.min() >= -1e-14
                and np.all(np.abs(ri) <= di + tol)
                and np.all(np.abs(r[red.eq]) <= tol)
                and abs(gamma.sum() - 1) <= tol
            )
            if ok:
                gamma = np.maximum(gamma, 0.0)
                return gamma, p, {"sum": lam0, "rows": lam_rows, "bound": z}
            return None, p, None
        support, upper, lower = new_support, new_upper, new_lower
    return None, max_passes, None


def minimal_violation(problem: BalanceProblem):
    """Smallest common violation ``s`` with ``|Z' gamma - v| <= delta + s``.

    Returns ``(s, gamma)``; solved as a linear program.
    """
    Z, v, delta = problem.Z, problem.v, problem.delta
    n = problem.n
    rows = np.flatnonzero(np.isfinite(delta))
    Zc = (Z - v)[:, rows]
    r = rows.size
    if r == 0:
        return 0.0, np.full(n, 1.0 / n)
    A_ub = np.block([[Zc.T, -np.ones((r, 1))], [-Zc.T, -np.ones((r, 1))]])
    b_ub = np.concatenate([delta[rows], delta[rows]])
    A_eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    res = optimize.linprog(
        c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (n + 1), method="highs"
    )
    if res.status != 0:
        raise RuntimeError(f"minimal-violation LP failed: {res.message}")
    return max(0.0, float(res.x[-1])), np.maximum(res.x[:n], 0.0)


def solve_balance_qp(
    problem: BalanceProblem, *, tol: float = 1e-8, max_iter: int = 200, max_polish: int = 50
) -> WeightSolution:
    """Minimize ``gamma' Omega gamma`` over the approximate-balance simplex.

    Returns a :class:`WeightSolution` whose ``status`` is ``"converged"`` when
    every KKT residual is below ``tol``, ``"relaxed"`` when iteration caps
    were hit first, and ``"infeasible"`` when the minimal-violation
    certificate exceeds 1e-6.  An infeasible solution carries that
    certificate in ``max_violation`` and ``row_violation``.
    """
    red = _Reduced(problem)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ipm = _ipm(red, tol * 1e-1, max_iter)
    if ipm["status"] != "optimal":
        s, g_lp = minimal_violation(problem)
        if s > FEASIBILITY_CERTIFICATE_TOL:
            imb = problem.Z.T @ g_lp - problem.v
            viol = np.where(np.isfinite(problem.delta), np.abs(imb) - problem.delta, 0.0)
            logger.info("balance constraints infeasible; minimal violation %.3g", s)
            return WeightSolution(
                gamma=g_lp,
                imbalance=imb,
                objective=problem.omega.quad(g_lp),
                status="infeasible",
                iterations=ipm["iterations"],
                primal_residual=ipm["primal_residual"],
                max_violation=s,
                row_violation=np.maximum(viol, 0.0),
            )
        if not np.isfinite(ipm["gamma"]).all():
            ipm = _start_from_point(red, g_lp, ipm)

    gamma, passes, mult = _polish(red, ipm, max_polish, tol * 1e-2)
    if gamma is None:
        gamma = np.maximum(ipm["gamma"], 0.0)
        gamma /= gamma.sum()
        mult = {}
    report = kkt_residuals(problem, gamma)
    status = "converged" if report.max() <= tol else "relaxed"
    if status == "relaxed":
        logger.warning("QP stopped at caps with KKT residual %.3g", report.max())
    return WeightSolution(
        gamma=gamma,
        imbalance=problem.Z.T @ gamma - problem.v,
        objective=problem.omega.quad(gamma),
        status=status,
        iterations=ipm["iterations"],
        polish_passes=passes,
        primal_residual=report.primal_feasibility,
        dual_residual=max(report.stationarity, report.dual_feasibility),
        multipliers=mult,
        info={"kkt": report, "ipm_status": ipm["status"]},
    )
