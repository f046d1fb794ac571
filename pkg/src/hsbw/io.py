"""CSV and JSON readers and writers with round-trip float formatting."""

from __future__ import annotations

import glob
import json
import math
import os

import numpy as np
import pandas as pd

from .errors import ParseError, SchemaError
from .panel import RegionPanel

FLOAT_FORMAT = "%.17g"
KEY_COLUMNS = ("state_id", "region_id")
PANEL_COLUMNS = ("state_id", "region_id", "treatment", "outcome")
SIZE_SUFFIX = ":n"


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: file is empty") from None
    except pd.errors.ParserError as exc:
        raise ParseError(f"{path}: {exc}") from None


def _numeric(df: pd.DataFrame, columns, path) -> np.ndarray:
    out = np.empty((len(df), len(columns)))
    for j, col in enumerate(columns):
        text = df[col].str.strip().to_numpy(dtype=str)
        try:
            # numpy's string conversion is correctly rounded; pandas' fast parser is not
            out[:, j] = text.astype(float)
        except ValueError:
            bad = pd.to_numeric(pd.Series(text), errors="coerce").isna().to_numpy()
            i = int(np.flatnonzero(bad)[0])
            raise ParseError(
                f"{path}: non-numeric value {df[col].iloc[i]!r} at data row {i + 1}, column {col!r}"
            ) from None
        if np.isnan(out[:, j]).any():
            i = int(np.flatnonzero(np.isnan(out[:, j]))[0])
            raise ParseError(f"{path}: missing value at data row {i + 1}, column {col!r}")
    return out


def load_panel(path) -> RegionPanel:
    """Read a panel CSV.

    The header starts with ``state_id, region_id, treatment, outcome``; the
    remaining columns are covariates, except columns named ``<covariate>:n``,
    which hold that covariate's sample size.
    """
    df = _read_csv(path)
    cols = list(df.columns)
    if tuple(cols[:4]) != PANEL_COLUMNS:
        raise SchemaError(f"{path}: header must start with {', '.join(PANEL_COLUMNS)}; got {cols[:4]}")
    rest = cols[4:]
    size_cols = [c for c in rest if c.endswith(SIZE_SUFFIX)]
    names = [c for c in rest if not c.endswith(SIZE_SUFFIX)]
    if not names:
        raise SchemaError(f"{path}: no covariate columns")
    sizes = None
    if size_cols:
        owners = {c[: -len(SIZE_SUFFIX)]: c for c in size_cols}
        unknown = sorted(set(owners) - set(names))
        missing = [n for n in names if n not in owners]
        if unknown or missing:
            raise SchemaError(
                f"{path}: sample-size columns must match covariates one to one "
                f"(unknown {unknown}, missing {missing})"
            )
        sizes = _numeric(df, [owners[n] for n in names], path)
    treat = _numeric(df, ["treatment"], path)[:, 0]
    if not np.isin(treat, (0, 1)).all():
        raise ParseError(f"{path}: treatment must be 0 or 1")
    return RegionPanel(
        df["state_id"].to_numpy(),
        df["region_id"].to_numpy(),
        treat.astype(int),
        _numeric(df, ["outcome"], path)[:, 0],
        _numeric(df, names, path),
        names,
        sizes,
    )


def panel_frame(panel: RegionPanel) -> pd.DataFrame:
    df = pd.DataFrame(
        {
            "state_id": panel.state_id,
            "region_id": panel.region_id,
            "treatment": panel.treatment,
            "outcome": panel.outcome,
        }
    )
    for j, name in enumerate(panel.covariate_names):
        df[name] = panel.covariates[:, j]
    if panel.sample_sizes is not None:
        for j, name in enumerate(panel.covariate_names):
            df[name + SIZE_SUFFIX] = panel.sample_sizes[:, j]
    return df


def write_panel(panel: RegionPanel, path):
    write_csv(panel_frame(panel), path)


def write_csv(df: pd.DataFrame, path):
    """Write with 17 significant digits and Unix line endings."""
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv_frame(path) -> pd.DataFrame:
    return pd.read_csv(path)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(obj, path):
    """JSON with insertion-ordered keys; non-finite floats become null."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")
    return path


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _align(df, point: RegionPanel, label):
    keys = list(zip(df["state_id"], df["region_id"]))
    if len(set(keys)) != len(keys):
        raise SchemaError(f"{label}: duplicate region keys")
    want = point.keys
    have = set(keys)
    missing = [k for k in want if k not in have]
    extra = sorted(have - set(want))
    if missing or extra:
        raise SchemaError(
            f"{label}: region keys differ from the panel; missing {missing[:5]}"
            f"{' ...' if len(missing) > 5 else ''}, unexpected {extra[:5]}"
        )
    pos = {k: i for i, k in enumerate(keys)}
    return np.array([pos[k] for k in want])


def _replicate_panel(df, point: RegionPanel, label):
    names = list(point.covariate_names)
    absent = [n for n in names if n not in df.columns]
    if absent:
        raise SchemaError(f"{label}: missing covariate columns {absent}")
    order = _align(df, point, label)
    W = _numeric(df, names, label)[order]
    return RegionPanel(
        point.state_id, point.region_id, point.treatment, point.outcome, W, point.covariate_names,
        _validated=True,
    )


def load_replicates(source, point: RegionPanel) -> list[RegionPanel]:
    """Replicate covariate estimates aligned to ``point`` by region key.

    ``source`` is either one long CSV with a ``replicate_index`` column or a
    glob matching one CSV per replicate (taken in sorted path order).
    """
    paths = sorted(glob.glob(str(source)))
    if not paths:
        raise FileNotFoundError(f"no replicate files match {source!r}")
    if len(paths) == 1:
        df = _read_csv(paths[0])
        if "replicate_index" in df.columns:
            idx = _numeric(df, ["replicate_index"], paths[0])[:, 0]
            out = []
            for b in np.unique(idx):
                sub = df[idx == b].reset_index(drop=True)
                out.append(_replicate_panel(sub, point, f"{paths[0]} replicate {b:g}"))
            return out
    return [_replicate_panel(_read_csv(p), point, p) for p in paths]


def calibrated_frame(cal) -> pd.DataFrame:
    df = pd.DataFrame({"state_id": cal.state_id, "region_id": cal.region_id, "kind": cal.kind})
    for j, name in enumerate(cal.names):
        df[name] = cal.X_hat[:, j]
    return df


def load_calibrated(path, panel: RegionPanel):
    """Read a calibrated-covariate CSV back into a :class:`CalibratedCovariates`."""
    from .calibration import CalibratedCovariates, treated_covariance

    df = _read_csv(path)
    for col in KEY_COLUMNS + ("kind",):
        if col not in df.columns:
            raise SchemaError(f"{path}: missing column {col!r}")
    names = [c for c in df.columns if c not in KEY_COLUMNS + ("kind",)]
    if tuple(names) != panel.covariate_names:
        raise SchemaError(f"{path}: covariates {names} do not match the panel {panel.covariate_names}")
    tp = panel.treated()
    order = _align(df, tp, str(path))
    X = _numeric(df, names, path)[order]
    kinds = set(df["kind"])
    if len(kinds) != 1:
        raise SchemaError(f"{path}: mixed calibration kinds {sorted(kinds)}")
    q = X.shape[1]
    return CalibratedCovariates(
        X, kinds.pop(), np.eye(q), treated_covariance(X), tp.covariates.mean(axis=0),
        tp.covariate_names, tp.state_id, tp.region_id,
    )


def covariance_bundle(cal, noise=None) -> dict:
    """Covariances as row-major lists, keyed by role."""
    out = {"q": len(cal.names), "names": list(cal.names), "kind": cal.kind}
    out["signal_cov"] = np.asarray(cal.signal_cov).ravel().tolist()
    out["treated_mean"] = np.asarray(cal.treated_mean).tolist()
    if noise is not None:
        out["noise_pooled"] = np.asarray(noise.pooled).ravel().tolist()
        if noise.pooled_star is not None:
            out["noise_pooled_star"] = np.asarray(noise.pooled_star).ravel().tolist()
        out["replicate_count"] = noise.replicate_count
        out["scale_factor"] = noise.scale_factor
    if cal.between_cov is not None:
        out["between_cov"] = np.asarray(cal.between_cov).ravel().tolist()
    if cal.repair.clipped:
        out["clipped_eigenvalues"] = list(cal.repair.clipped)
    if cal.repair.ridge:
        out["ridge"] = cal.repair.ridge
    return out


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
