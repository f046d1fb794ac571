"""Measurement-error covariances and regression-calibration adjustments.

The observed covariates are ``W = X + nu`` with sampling noise ``nu``.  The
adjustments replace each treated row of ``W`` by an estimate of its
conditional mean given the data, shrinking toward the treated mean ``W1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DomainError, NumericalError, SchemaError
from .panel import RegionPanel

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
RIDGE = 1e-10


@dataclass(frozen=True)
class PSDRepair:
    """What was done to make a matrix usable: clipped eigenvalues and ridge."""

    clipped: tuple = ()
    ridge: float = 0.0

    @property
    def repaired(self) -> bool:
        return bool(self.clipped) or self.ridge > 0


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def clip_psd(a, label="matrix"):
    """Clip negative eigenvalues of a symmetric matrix to zero."""
    a = symmetrize(a)
    w, V = np.linalg.eigh(a)
    neg = w < 0
    if not neg.any():
        return a, PSDRepair()
    clipped = tuple(float(x) for x in w[neg])
    logger.info("%s: clipped %d negative eigenvalue(s) %s", label, neg.sum(), clipped)
    out = symmetrize((V * np.maximum(w, 0.0)) @ V.T)
    return out, PSDRepair(clipped=clipped)


def _freeze(*arrays):
    for a in arrays:
        if isinstance(a, np.ndarray):
            a.setflags(write=False)


@dataclass(frozen=True)
class NoiseCovarianceSet:
    """Per-region noise covariances and their pooled summaries.

    Attributes
    ----------
    raw_per_unit : ndarray, shape (n, q, q)
        Replicate-based covariance of every region in the source panel.
    treated_mask : ndarray of bool
        Which rows are treated; pooling uses those only.
    pooled : ndarray, shape (q, q)
        Mean of the treated raw covariances.
    sample_sizes : ndarray, shape (n, q), optional
        Enables the size model.
    pooled_star : ndarray, shape (q, q), optional
        Size-weighted pooled matrix ``mean(S_sc * raw_sc)`` with
        ``S_sc = sqrt(s_sc) sqrt(s_sc)'``.
    per_unit_scaled : ndarray, shape (n, q, q), optional
        ``pooled_star / S_sc`` for every region.
    """

    raw_per_unit: np.ndarray
    treated_mask: np.ndarray
    pooled: np.ndarray
    sample_sizes: np.ndarray | None = None
    pooled_star: np.ndarray | None = None
    per_unit_scaled: np.ndarray | None = None
    replicate_count: int | None = None
    scale_factor: float | None = None
    keys: tuple | None = field(default=None, repr=False)

    @classmethod
    def from_raw(
        cls, raw, treated_mask, sample_sizes=None, replicate_count=None, scale_factor=None, keys=None
    ):
        raw = symmetrize(raw)
        if raw.ndim != 3 or raw.shape[1] != raw.shape[2]:
            raise SchemaError("raw noise covariances must have shape (n, q, q)")
        treated_mask = np.asarray(treated_mask, dtype=bool)
        if treated_mask.shape != (raw.shape[0],):
            raise SchemaError("treated_mask does not match the number of regions")
        if not treated_mask.any():
            raise DomainError("no treated regions to pool noise covariances over")
        pooled = raw[treated_mask].mean(axis=0)
        star = scaled = None
        if sample_sizes is not None:
            ss = np.asarray(sample_sizes, dtype=float)
            if ss.ndim == 1:
                ss = np.repeat(ss[:, None], raw.shape[1], axis=1)
            if ss.shape != raw.shape[:2]:
                raise SchemaError("sample_sizes must have shape (n, q)")
            if not np.isfinite(ss).all() or (ss <= 0).any():
                raise DomainError("sample sizes must be positive")
            S = size_matrices(ss)
            star = symmetrize((S[treated_mask] * raw[treated_mask]).mean(axis=0))
            scaled = star / S
            sample_sizes = ss
        out = cls(
            raw, treated_mask, pooled, sample_sizes, star, scaled, replicate_count, scale_factor, keys
        )
        _freeze(raw, pooled, star, scaled, sample_sizes)
        return out

    @property
    def q(self) -> int:
        return self.raw_per_unit.shape[1]

    def subset(self, mask) -> "NoiseCovarianceSet":
        """Rebuild the set on a subset of regions, re-pooling from scratch."""
        mask = np.asarray(mask, dtype=bool)
        return NoiseCovarianceSet.from_raw(
            self.raw_per_unit[mask],
            self.treated_mask[mask],
            None if self.sample_sizes is None else self.sample_sizes[mask],
            self.replicate_count,
            self.scale_factor,
            None if self.keys is None else tuple(k for k, m in zip(self.keys, mask) if m),
        )

    def treated_raw(self):
        return self.raw_per_unit[self.treated_mask]

    def treated_scaled(self):
        if self.per_unit_scaled is None:
            raise DomainError("sample sizes were not supplied; the size model is unavailable")
        return self.per_unit_scaled[self.treated_mask]


def size_matrices(sample_sizes):
    """``S_sc = sqrt(s_sc) sqrt(s_sc)'`` for every row of ``sample_sizes``."""
    r = np.sqrt(np.asarray(sample_sizes, dtype=float))
    return r[:, :, None] * r[:, None, :]


def replicate_noise_covariance(
    replicate_panels, point_panel: RegionPanel, scale_factor: float = 4.0, use_sample_sizes=True
) -> NoiseCovarianceSet:
    """Noise covariances from replicate-weight datasets.

    Parameters
    ----------
    replicate_panels : sequence of RegionPanel
        ``B`` replicate estimates of the covariates, keyed like the point panel.
    point_panel : RegionPanel
        Point estimates; deviations are taken around these rows.
    scale_factor : float
        Numerator of the prefactor ``scale_factor / B`` (4 for successive
        difference replicate weights).

    Returns
    -------
    NoiseCovarianceSet
    """
    reps = list(replicate_panels)
    B = len(reps)
    if B < 2:
        raise DomainError(f"at least 2 replicates are required, got {B}")
    point_keys = point_panel.keys
    index = {k: i for i, k in enumerate(point_keys)}
    W0 = point_panel.covariates
    acc = np.zeros((point_panel.n, point_panel.q, point_panel.q))
    for b, rep in enumerate(reps):
        if rep.covariate_names != point_panel.covariate_names:
            raise SchemaError(f"replicate {b} has covariates {rep.covariate_names}")
        rk = rep.keys
        if len(rk) != len(point_keys) or set(rk) != set(index):
            raise SchemaError(f"replicate {b} region keys do not match the point panel")
        order = np.array([index[k] for k in rk])
        Wb = np.empty_like(W0)
        Wb[order] = rep.covariates
        d = Wb - W0
        acc += d[:, :, None] * d[:, None, :]
    raw = (scale_factor / B) * acc
    sizes = point_panel.sample_sizes if use_sample_sizes else None
    return NoiseCovarianceSet.from_raw(
        raw, point_panel.treated_mask, sizes, B, scale_factor, tuple(point_keys)
    )


def treated_covariance(W):
    """Covariance with divisor ``n`` (not ``n - 1``)."""
    W = np.asarray(W, dtype=float)
    d = W - W.mean(axis=0)
    return symmetrize(d.T @ d / W.shape[0])


def signal_covariance(panel: RegionPanel, pooled_noise) -> tuple[np.ndarray, PSDRepair]:
    """Signal covariance ``cov(W1) - Sigma_nu`` with eigenvalue clipping.

    ``panel`` may contain controls; only treated rows are used.
    """
    W = panel.covariates[panel.treated_mask] if isinstance(panel, RegionPanel) else panel
    if W.shape[0] < 2:
        raise DomainError("signal covariance needs at least 2 treated regions")
    raw = treated_covariance(W) - np.asarray(pooled_noise, dtype=float)
    return clip_psd(raw, "signal covariance")


@dataclass(frozen=True)
class CalibratedCovariates:
    """Adjusted treated covariates ``X_hat`` and what produced them."""

    X_hat: np.ndarray
    kind: str
    kappa: object
    signal_cov: np.ndarray
    treated_mean: np.ndarray
    names: tuple
    state_id: np.ndarray
    region_id: np.ndarray
    between_cov: np.ndarray | None = None
    repair: PSDRepair = PSDRepair()

    def __post_init__(self):
        if self.kind not in ("homogeneous", "heterogeneous", "correlated", "none"):
            raise DomainError(f"unknown calibration kind {self.kind!r}")
        _freeze(self.X_hat, self.signal_cov, self.treated_mean, self.between_cov)
        if isinstance(self.kappa, np.ndarray):
            _freeze(self.kappa)


def _treated_parts(panel: RegionPanel):
    tp = panel.treated() if panel.n0 else panel
    if tp.n < 1:
        raise DomainError("panel has no treated regions")
    return tp, tp.covariates, tp.covariates.mean(axis=0)


def _regularize(sigma_w, label="Sigma_W"):
    cond = np.linalg.cond(sigma_w)
    ridge = 0.0
    if not np.isfinite(cond) or cond > COND_LIMIT:
        ridge = RIDGE
        sigma_w = sigma_w + ridge * np.eye(sigma_w.shape[-1])
        cond2 = np.linalg.cond(sigma_w)
        logger.info("%s condition number %.3g; added ridge %g", label, cond, ridge)
        if not np.isfinite(cond2) or cond2 > 1.0 / np.finfo(float).eps:
            raise NumericalError(f"{label} is singular (condition number {cond2:.3g}) after ridge")
    return sigma_w, ridge


def unadjusted(panel: RegionPanel) -> CalibratedCovariates:
    """Wrap the raw treated covariates in the calibrated container."""
    tp, W, wbar = _treated_parts(panel)
    q = W.shape[1]
    return CalibratedCovariates(
        W.copy(), "none", np.eye(q), treated_covariance(W), wbar, tp.covariate_names,
        tp.state_id, tp.region_id,
    )


def calibrate_homogeneous(panel: RegionPanel, sigma_x, sigma_nu) -> CalibratedCovariates:
    """Shrink treated rows by the common ``kappa = (Sigma_X + Sigma_nu)^{-1} Sigma_X``.

    Examples
    --------
    >>> p = RegionPanel(["a", "b"], ["1", "1"], [1, 1], [0.0, 0.0], [[2.0], [-2.0]], ["w"])
    >>> calibrate_homogeneous(p, [[1.0]], [[1.0]]).X_hat.ravel()
    array([ 1., -1.])
    """
    tp, W, wbar = _treated_parts(panel)
    sigma_x = symmetrize(np.atleast_2d(sigma_x))
    sigma_nu = symmetrize(np.atleast_2d(sigma_nu))
    q = W.shape[1]
    if sigma_x.shape != (q, q) or sigma_nu.shape != (q, q):
        raise SchemaError(f"covariance matrices must be {q}x{q}")
    ridge = 0.0
    if not sigma_nu.any():
        kappa, X = np.eye(q), W.copy()
    else:
        sigma_w, ridge = _regularize(sigma_x + sigma_nu)
        kappa = linalg.solve(sigma_w, sigma_x, assume_a="sym")
        X = wbar + (W - wbar) @ kappa
    return CalibratedCovariates(
        X, "homogeneous", kappa, sigma_x, wbar, tp.covariate_names, tp.state_id, tp.region_id,
        repair=PSDRepair(ridge=ridge),
    )


def calibrate_heterogeneous(panel: RegionPanel, sigma_x, raw_covariances, sample_sizes):
    """Per-region shrinkage with noise scaled by sample size.

    Parameters
    ----------
    panel : RegionPanel
    sigma_x : ndarray, shape (q, q)
    raw_covariances : ndarray, shape (n1, q, q)
        Raw noise covariances of the treated regions, in panel order.
    sample_sizes : ndarray, shape (n1, q) or (n1,)
        Positive sample sizes of the treated regions.
    """
    tp, W, wbar = _treated_parts(panel)
    n1, q = W.shape
    raw = symmetrize(raw_covariances)
    if raw.shape != (n1, q, q):
        raise SchemaError(f"raw covariances must have shape ({n1}, {q}, {q})")
    noise = NoiseCovarianceSet.from_raw(raw, np.ones(n1, dtype=bool), sample_sizes)
    return _heterogeneous(tp, W, wbar, symmetrize(np.atleast_2d(sigma_x)), noise.per_unit_scaled)


def _heterogeneous(tp, W, wbar, sigma_x, per_unit):
    q = W.shape[1]
    if not np.any(per_unit):
        kappa, X = np.broadcast_to(np.eye(q), per_unit.shape).copy(), W.copy()
        ridge = 0.0
    else:
        sigma_w = sigma_x + per_unit
        conds = np.linalg.cond(sigma_w)
        ridge = 0.0
        if not np.isfinite(conds).all() or conds.max() > COND_LIMIT:
            ridge = RIDGE
            sigma_w = sigma_w + ridge * np.eye(q)
            logger.info("heterogeneous Sigma_W ill conditioned; added ridge %g", ridge)
        try:
            kappa = np.linalg.solve(sigma_w, np.broadcast_to(sigma_x, sigma_w.shape))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"per-region Sigma_W is singular: {exc}") from None
        X = wbar + np.einsum("ni,nij->nj", W - wbar, kappa)
    return CalibratedCovariates(
        X, "heterogeneous", kappa, sigma_x, wbar, tp.covariate_names, tp.state_id, tp.region_id,
        repair=PSDRepair(ridge=ridge),
    )


def between_state_covariance(panel: RegionPanel, center=None) -> tuple[np.ndarray, PSDRepair]:
    """Average centered cross-product of distinct regions in the same state.

    Rows are centered by the treated mean unless ``center`` is given; the
    average runs over all ordered within-state pairs ``c != d``.
    """
    tp, W, wbar = _treated_parts(panel)
    d = W - (wbar if center is None else np.asarray(center, dtype=float))
    states, codes, sizes = np.unique(tp.state_id, return_inverse=True, return_counts=True)
    pairs = float(np.sum(sizes * (sizes - 1)))
    if pairs == 0:
        raise DomainError("between-state covariance needs a treated state with at least 2 regions")
    q = W.shape[1]
    sums = np.zeros((len(states), q))
    np.add.at(sums, codes.ravel(), d)
    total = sums.T @ sums - d.T @ d
    return clip_psd(total / pairs, "between-state covariance")


def calibrate_correlated(panel: RegionPanel, sigma_x, sigma_nu, sigma_b) -> CalibratedCovariates:
    """Joint conditional mean of each state's stacked covariates.

    Within a state, ``cov(X_sc, X_sd) = cov(W_sc, W_sd) = Sigma_B`` for
    ``c != d``; diagonal blocks are ``Sigma_X`` and ``Sigma_X + Sigma_nu``.
    """
    tp, W, wbar = _treated_parts(panel)
    q = W.shape[1]
    sigma_x = symmetrize(np.atleast_2d(sigma_x))
    sigma_nu = symmetrize(np.atleast_2d(sigma_nu))
    sigma_b = symmetrize(np.atleast_2d(sigma_b))
    if not sigma_b.any():
        hom = calibrate_homogeneous(tp, sigma_x, sigma_nu)
        return CalibratedCovariates(
            hom.X_hat, "correlated", hom.kappa, sigma_x, wbar, hom.names, hom.state_id,
            hom.region_id, between_cov=sigma_b, repair=hom.repair,
        )
    if not sigma_nu.any():
        X = W.copy()
        return CalibratedCovariates(
            X, "correlated", {}, sigma_x, wbar, tp.covariate_names, tp.state_id, tp.region_id,
            between_cov=sigma_b,
        )
    X = np.empty_like(W)
    ops = {}
    for s in np.unique(tp.state_id):
        idx = np.flatnonzero(tp.state_id == s)
        p = idx.size
        off = np.kron(np.ones((p, p)) - np.eye(p), sigma_b)
        sx = np.kron(np.eye(p), sigma_x) + off
        sw = np.kron(np.eye(p), sigma_x + sigma_nu) + off
        try:
            fac = linalg.cho_factor(sw)
        except linalg.LinAlgError:
            raise NumericalError(
                f"state {s!r}: joint covariance block is not positive definite"
            ) from None
        dev = (W[idx] - wbar).ravel()
        X[idx] = wbar + (sx @ linalg.cho_solve(fac, dev)).reshape(p, q)
        ops[s] = (sx, sw)
    return CalibratedCovariates(
        X, "correlated", ops, sigma_x, wbar, tp.covariate_names, tp.state_id, tp.region_id,
        between_cov=sigma_b,
    )


def calibrate(panel: RegionPanel, noise: NoiseCovarianceSet | None, kind: str):
    """Run one adjustment end to end from a panel and its noise set.

    ``kind`` is one of ``none``, ``homogeneous``, ``heterogeneous``,
    ``correlated``.  ``noise`` rows must align with ``panel`` rows.
    """
    if kind == "none":
        return unadjusted(panel)
    if noise is None:
        raise DomainError(f"{kind} calibration needs noise covariances")
    if noise.raw_per_unit.shape[0] != panel.n:
        raise SchemaError("noise covariances do not align with the panel")
    sigma_x, rep = signal_covariance(panel, noise.pooled)
    if kind == "homogeneous":
        out = calibrate_homogeneous(panel, sigma_x, noise.pooled)
    elif kind == "heterogeneous":
        tp, W, wbar = _treated_parts(panel)
        out = _heterogeneous(tp, W, wbar, sigma_x, noise.treated_scaled())
    elif kind == "correlated":
        sigma_b, _ = between_state_covariance(panel)
        out = calibrate_correlated(panel, sigma_x, noise.pooled, sigma_b)
    else:
        raise DomainError(f"unknown calibration kind {kind!r}")
    if rep.clipped:
        out = _with_repair(out, PSDRepair(rep.clipped, out.repair.ridge))
    return out


def _with_repair(cal, repair):
    from dataclasses import replace

    return replace(cal, repair=repair)
