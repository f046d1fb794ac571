"""Region-level panel container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrityError, SchemaError


@dataclass(frozen=True)
class RegionPanel:
    """Region records nested in states.

    Parameters
    ----------
    state_id, region_id : array of str
        Keys; the pair must be unique.
    treatment : array of int
        0/1 flag, constant within a state.
    outcome : array of float
        Noisy outcome J (percentage points).
    covariates : ndarray, shape (n, q)
        Noisy covariates W.
    covariate_names : tuple of str
    sample_sizes : ndarray, shape (n, q), optional
        Per-covariate sample sizes, used by the heterogeneous adjustment.
    """

    state_id: np.ndarray
    region_id: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple
    sample_sizes: np.ndarray | None = None
    _validated: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        obj = object.__setattr__
        obj(self, "state_id", np.asarray(self.state_id).astype(str))
        obj(self, "region_id", np.asarray(self.region_id).astype(str))
        obj(self, "treatment", np.asarray(self.treatment).astype(int))
        obj(self, "outcome", np.asarray(self.outcome, dtype=float))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        obj(self, "covariates", cov)
        obj(self, "covariate_names", tuple(str(c) for c in self.covariate_names))
        if self.sample_sizes is not None:
            ss = np.asarray(self.sample_sizes, dtype=float)
            if ss.ndim == 1:
                ss = np.repeat(ss[:, None], cov.shape[1], axis=1)
            obj(self, "sample_sizes", ss)
        if not self._validated:
            self._validate()

    def _validate(self):
        n = len(self.state_id)
        for name in ("region_id", "treatment", "outcome"):
            if len(getattr(self, name)) != n:
                raise SchemaError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.covariates.shape[0] != n:
            raise SchemaError("covariate rows do not match the number of regions")
        if self.covariates.shape[1] != len(self.covariate_names):
            raise SchemaError("covariate_names does not match the covariate columns")
        if self.sample_sizes is not None and self.sample_sizes.shape != self.covariates.shape:
            raise SchemaError("sample_sizes must have the same shape as covariates")
        if not np.isin(self.treatment, (0, 1)).all():
            raise DomainError("treatment must be 0 or 1")
        keys = np.char.add(np.char.add(self.state_id, "\x1f"), self.region_id)
        if len(np.unique(keys)) != n:
            raise IntegrityError("(state_id, region_id) pairs are not unique")
        for s in np.unique(self.state_id):
            if len(np.unique(self.treatment[self.state_id == s])) > 1:
                raise IntegrityError(f"state {s!r} mixes treated and control regions")

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.state_id)

    @property
    def q(self) -> int:
        return self.covariates.shape[1]

    @property
    def keys(self) -> list[tuple[str, str]]:
        return list(zip(self.state_id.tolist(), self.region_id.tolist()))

    @property
    def treated_mask(self) -> np.ndarray:
        return self.treatment == 1

    @property
    def control_mask(self) -> np.ndarray:
        return self.treatment == 0

    @property
    def n1(self) -> int:
        return int(self.treated_mask.sum())

    @property
    def n0(self) -> int:
        return int(self.control_mask.sum())

    @property
    def treated_states(self) -> np.ndarray:
        return np.unique(self.state_id[self.treated_mask])

    @property
    def control_states(self) -> np.ndarray:
        return np.unique(self.state_id[self.control_mask])

    def subset(self, mask) -> "RegionPanel":
        mask = np.asarray(mask)
        return RegionPanel(
            self.state_id[mask],
            self.region_id[mask],
            self.treatment[mask],
            self.outcome[mask],
            self.covariates[mask],
            self.covariate_names,
            None if self.sample_sizes is None else self.sample_sizes[mask],
            _validated=True,
        )

    def treated(self) -> "RegionPanel":
        return self.subset(self.treated_mask)

    def control(self) -> "RegionPanel":
        return self.subset(self.control_mask)

    def drop_state(self, state) -> "RegionPanel":
        return self.subset(self.state_id != str(state))

    def control_mean(self) -> np.ndarray:
        if self.n0 == 0:
            raise DomainError("panel has no control regions")
        return self.covariates[self.control_mask].mean(axis=0)

    def require_estimable(self):
        if self.n1 < 2 or self.n0 < 1:
            raise DomainError(
                f"estimation needs at least 2 treated and 1 control region (got n1={self.n1}, n0={self.n0})"
            )

    def with_covariates(self, covariates, names=None, sample_sizes=None) -> "RegionPanel":
        return RegionPanel(
            self.state_id,
            self.region_id,
            self.treatment,
            self.outcome,
            covariates,
            self.covariate_names if names is None else names,
            sample_sizes,
            _validated=True,
        )

    def with_outcome(self, outcome) -> "RegionPanel":
        return RegionPanel(
            self.state_id,
            self.region_id,
            self.treatment,
            outcome,
            self.covariates,
            self.covariate_names,
            self.sample_sizes,
            _validated=True,
        )
