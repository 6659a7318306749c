"""From raw study records to a model-ready :class:`~synantag.model.Dataset`.

Pipeline: drop unusable records, multiply response and exposures by the
urine flow rate, log-transform, map each exposure through a kernel-density
CDF estimate, standardize the response, and encode covariates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import ndtr

from .errors import DegeneracyError, DomainError, EmptyDatasetError, SchemaError
from .model import Dataset

KDE_GRID = 2048
KDE_PAD = 3.0


@dataclass(frozen=True)
class RawRecord:
    response: float
    exposures: tuple
    flow_rate: float = 1.0
    covariates: dict = field(default_factory=dict)
    acr: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "exposures", tuple(self.exposures))


def _missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def clean(records, acr_threshold: float = 30.0, response_lod: float | None = None,
          positive_response: bool = True, positive_exposures: bool = True) -> list[RawRecord]:
    """Keep records with complete, positive measurements and ACR below the threshold.

    Records with ``acr >= acr_threshold`` are treated as albuminuric and
    dropped. When ``response_lod`` is given, responses below it are dropped;
    exposure values below their detection limits are kept as recorded.
    The positivity checks can be switched off for data that will not be
    log-transformed.
    """
    kept = []
    for r in records:
        if r.acr is not None and not _missing(r.acr) and r.acr >= acr_threshold:
            continue
        fields = [r.response, r.flow_rate, *r.exposures, *r.covariates.values()]
        if any(_missing(v) for v in fields):
            continue
        if positive_response and r.response <= 0:
            continue
        if positive_exposures and any(e <= 0 for e in r.exposures):
            continue
        if response_lod is not None and r.response < response_lod:
            continue
        kept.append(r)
    if not kept:
        raise EmptyDatasetError("no records left after cleaning")
    return kept


def dilution_adjust(record: RawRecord) -> RawRecord:
    """Multiply the response and every exposure by the flow rate."""
    tau = record.flow_rate
    if _missing(tau) or not tau > 0:
        raise DomainError(f"flow rate must be positive, got {tau!r}")
    return replace(record, response=record.response * tau, exposures=tuple(e * tau for e in record.exposures))


def silverman_bandwidth(x: np.ndarray) -> float:
    """Silverman's rule of thumb, 0.9 min(sd, IQR/1.34) n^(-1/5)."""
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    # a collapsed IQR (heavy ties) would shrink the kernels to nothing
    if not spread > 1e-8 * sd:
        spread = sd
    return 0.9 * spread * x.size ** -0.2


def kde_cdf(column) -> tuple[np.ndarray, np.ndarray, float]:
    """Gaussian-KDE CDF tabulated on a grid; returns (grid, cdf, bandwidth)."""
    x = np.asarray(column, dtype=float)
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - KDE_PAD * h, x.max() + KDE_PAD * h, KDE_GRID)
    dens = np.zeros(KDE_GRID)
    for s in range(0, x.size, 512):
        z = (grid[:, None] - x[None, s: s + 512]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * math.sqrt(2.0 * math.pi)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    return grid, cum / cum[-1], h


def kde_cdf_at(data, points, h: float, chunk: int = 512) -> np.ndarray:
    """Exact CDF of the Gaussian KDE of ``data`` with bandwidth ``h`` at ``points``.

    The kernel integrals are normal CDFs, so no grid is involved and tiny
    bandwidths stay resolved.
    """
    data = np.asarray(data, dtype=float)
    points = np.asarray(points, dtype=float)
    out = np.empty(points.shape)
    for s in range(0, points.size, chunk):
        z = (points[s: s + chunk, None] - data[None, :]) / h
        out[s: s + chunk] = ndtr(z).mean(axis=1)
    return out


def cdf_transform(column) -> np.ndarray:
    """Map values to (0, 1) through the CDF of a Gaussian kernel density estimate.

    Each value's own kernel contributes half its mass on either side, so the
    output never reaches 0 or 1.
    """
    x = np.asarray(column, dtype=float)
    if x.ndim != 1 or x.size < 10:
        raise DomainError("cdf_transform needs a 1-d column with at least 10 values")
    if not np.all(np.isfinite(x)):
        raise DomainError("cdf_transform got non-finite values")
    if np.ptp(x) == 0:
        raise DegeneracyError("exposure column is constant")
    return kde_cdf_at(x, x, silverman_bandwidth(x))


def standardize_response(y) -> tuple[np.ndarray, float]:
    """Divide ``y`` by its sample standard deviation (ddof=1); returns (y_std, scale)."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise DegeneracyError("need at least two responses to standardize")
    scale = float(np.std(y, ddof=1))
    if not scale > 0:
        raise DegeneracyError("response has zero variance")
    return y / scale, scale


# Summaries on the response scale; "sigma2" scales with the square.
LINEAR_KEYS = ("alpha", "eta", "main_effects", "interactions", "sigma", "fitted")


def backscale(summaries: dict, y_scale: float) -> dict:
    """Return summaries in original response units.

    Every entry under a key in :data:`LINEAR_KEYS` (numbers, arrays, or
    nested dicts/lists of them) is multiplied by ``y_scale``; ``sigma2`` by
    its square. Other keys pass through.
    """

    def mul(obj, f):
        if isinstance(obj, dict):
            return {k: mul(v, f) for k, v in obj.items()}
        if isinstance(obj, list):
            return [mul(v, f) for v in obj]
        if isinstance(obj, np.ndarray):
            return obj * f
        if isinstance(obj, (int, float, np.floating)):
            return float(obj) * f
        return obj

    out = {}
    for key, val in summaries.items():
        if key in LINEAR_KEYS:
            out[key] = mul(val, y_scale)
        elif key == "sigma2":
            out[key] = mul(val, y_scale ** 2)
        else:
            out[key] = val
    return out


def encode_covariates(frame: pd.DataFrame, numeric: list[str], categorical: dict[str, str],
                      scale_numeric: bool = True) -> tuple[np.ndarray, list[str]]:
    """Numeric covariates (optionally scaled to unit variance) plus baseline-coded dummies.

    ``categorical`` maps a column name to its baseline level.
    """
    cols, names = [], []
    for c in numeric:
        v = frame[c].to_numpy(dtype=float)
        if scale_numeric:
            sd = np.std(v, ddof=1)
            if not sd > 0:
                raise DegeneracyError(f"covariate {c!r} is constant")
            v = v / sd
        cols.append(v)
        names.append(c)
    for c, baseline in categorical.items():
        levels = sorted(frame[c].astype(str).unique())
        if str(baseline) not in levels:
            raise SchemaError(f"baseline level {baseline!r} not found in covariate {c!r}")
        for lev in levels:
            if lev == str(baseline):
                continue
            cols.append((frame[c].astype(str) == lev).to_numpy(dtype=float))
            names.append(f"{c}[{lev}]")
    Z = np.column_stack(cols) if cols else np.zeros((len(frame), 0))
    return Z, names


@dataclass
class ColumnRoles:
    response: str
    exposures: list[str]
    covariates: list[str] = field(default_factory=list)
    categorical: dict = field(default_factory=dict)
    flow_rate: str | None = None
    acr: str | None = None

    def all_columns(self) -> list[str]:
        cols = [self.response, *self.exposures, *self.covariates, *self.categorical]
        return cols + [c for c in (self.flow_rate, self.acr) if c]

    def check(self, frame: pd.DataFrame) -> None:
        groups = [[self.response], self.exposures, self.covariates, list(self.categorical),
                  [self.flow_rate] if self.flow_rate else [], [self.acr] if self.acr else []]
        seen = set()
        for g in groups:
            for c in g:
                if c in seen:
                    raise SchemaError(f"column {c!r} is assigned more than one role")
                seen.add(c)
        for c in self.all_columns():
            if c not in frame.columns:
                raise SchemaError(f"column {c!r} named in the role map is missing from the data")
        if not self.exposures:
            raise SchemaError("at least one exposure column is required")


def records_from_frame(frame: pd.DataFrame, roles: ColumnRoles) -> list[RawRecord]:
    roles.check(frame)
    recs = []
    cov_cols = [*roles.covariates, *roles.categorical]
    for row in frame.to_dict("records"):
        covs = {c: (None if pd.isna(row[c]) else row[c]) for c in cov_cols}
        recs.append(RawRecord(
            response=float(row[roles.response]) if not pd.isna(row[roles.response]) else None,
            exposures=tuple(float(row[c]) if not pd.isna(row[c]) else None for c in roles.exposures),
            flow_rate=float(row[roles.flow_rate]) if roles.flow_rate else 1.0,
            covariates=covs,
            acr=float(row[roles.acr]) if roles.acr and not pd.isna(row[roles.acr]) else None,
        ))
    return recs


def prepare(frame: pd.DataFrame, roles: ColumnRoles, *, acr_threshold: float = 30.0,
            response_lod: float | None = None, log_response: bool = True, log_exposures: bool = True,
            cdf: bool = True, scale_covariates: bool = True) -> tuple[Dataset, pd.DataFrame]:
    """Run the full preprocessing pipeline; returns the dataset and the kept rows."""
    records = records_from_frame(frame, roles)
    kept = clean(records, acr_threshold, response_lod, positive_response=log_response,
                 positive_exposures=log_exposures)
    if roles.flow_rate:
        kept = [dilution_adjust(r) for r in kept]
    y = np.array([r.response for r in kept])
    E = np.array([r.exposures for r in kept], dtype=float)
    if log_response:
        y = np.log(y)
    if log_exposures:
        E = np.log(E)
    if cdf:
        X = np.column_stack([cdf_transform(E[:, j]) for j in range(E.shape[1])])
    else:
        X = E
        if np.any(X < 0) or np.any(X > 1):
            raise DomainError("exposures outside [0, 1]; enable the CDF transform")
    kept_frame = pd.DataFrame([{**r.covariates} for r in kept]) if kept[0].covariates else pd.DataFrame(index=range(len(kept)))
    Z, znames = encode_covariates(kept_frame, roles.covariates, roles.categorical, scale_covariates)
    if len(kept) < len(records):
        warnings.warn(f"dropped {len(records) - len(kept)} of {len(records)} records during cleaning", stacklevel=2)
    data = Dataset.from_raw(y, X, Z, exposure_names=list(roles.exposures), covariate_names=znames)
    return data, kept_frame
