"""Chain and fit diagnostics: effective sample size and posterior predictive checks."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .model import Dataset
from .posterior import mean_draws
from .sampler import PosteriorSamples
from .splines import BasisSet


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelations at lags 0..N-1 (biased estimator, via FFT)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(chain) -> float:
    """ESS = N / (1 + 2 sum rho_k), truncated by the initial positive sequence.

    Consecutive lag pairs rho_{2k} + rho_{2k+1} are summed while they stay
    positive. The result is capped at N. A constant chain returns N with a
    warning.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ShapeError(f"need at least 10 draws for an ESS estimate, got {n}")
    if not np.all(np.isfinite(x)):
        raise ShapeError("chain contains non-finite values")
    if np.ptp(x) == 0:
        warnings.warn("constant chain; ESS set to the number of draws", RuntimeWarning, stacklevel=2)
        return float(n)
    rho = autocorrelation(x)
    total = -1.0  # the k = 0 pair counts rho_0 = 1 twice
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        # FFT round-off is ~1e-15; a pair that small is zero, whatever its sign
        if pair <= 1e-10:
            break
        total += 2.0 * pair
    # strongly antithetic chains can push the sum below 1 (even negative); cap ESS at N
    return float(n / max(total, 1.0))


def interval_coverage(lower, upper, values) -> float:
    """Share of ``values`` inside the closed intervals [lower, upper]."""
    lower, upper, values = (np.asarray(a, dtype=float) for a in (lower, upper, values))
    if not lower.shape == upper.shape == values.shape:
        raise ShapeError("interval bounds and values must have the same shape")
    if values.size == 0:
        raise ShapeError("no values to check")
    return float(np.mean((values >= lower) & (values <= upper)))


def credible_interval(draws, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Equal-tailed pointwise interval over the first axis."""
    a = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(np.asarray(draws, dtype=float), [a, 100.0 - a], axis=0)
    return lo, hi


@dataclass
class PredictiveCheck:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sd: np.ndarray
    coverage: float
    residuals: np.ndarray

    def residual_summary(self) -> dict:
        r = self.residuals
        q = np.quantile(r, [0.005, 0.025, 0.5, 0.975, 0.995])
        return {"mean": float(r.mean()), "variance": float(r.var(ddof=1)) if r.size > 1 else 0.0,
                "q005": float(q[0]), "q025": float(q[1]), "median": float(q[2]), "q975": float(q[3]),
                "q995": float(q[4])}


def posterior_predictive(samples: PosteriorSamples, data: Dataset, bases: BasisSet | None = None,
                         rng: np.random.Generator | None = None, level: float = 0.95,
                         max_draws: int = 2000) -> PredictiveCheck:
    """Posterior predictive draws at the training points, on the standardized scale.

    Draws are thinned evenly to at most ``max_draws``. Residuals are
    ``(y - predictive mean) / predictive sd``; where the predictive sd is
    zero the spread of the raw residuals is used instead.
    """
    if samples.n_draws == 0:
        raise ShapeError("no posterior draws")
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = np.unique(np.linspace(0, samples.n_draws - 1, min(max_draws, samples.n_draws)).astype(int))
    sub = samples.subset(idx)
    mu = mean_draws(sub, data.X, data.Z, bases)
    ytilde = mu + np.sqrt(sub.sigma2)[:, None] * rng.standard_normal(mu.shape)
    lo, hi = credible_interval(ytilde, level)
    mean = ytilde.mean(axis=0)
    sd = ytilde.std(axis=0, ddof=1) if len(idx) > 1 else np.zeros(data.n)
    # identical draws leave round-off in the sd; treat them as exactly degenerate
    sd[np.ptp(ytilde, axis=0) == 0] = 0.0
    raw = data.y - mean
    fallback = np.std(raw, ddof=1) if raw.size > 1 else 1.0
    sd = np.where(sd > 0, sd, fallback if fallback > 0 else 1.0)
    return PredictiveCheck(mean=mean, lower=lo, upper=hi, sd=sd,
                           coverage=interval_coverage(lo, hi, data.y), residuals=raw / sd)


@dataclass
class DiagnosticsReport:
    n_draws: int
    ess: dict = field(default_factory=dict)
    ess_fraction: dict = field(default_factory=dict)
    accept_rate: list = field(default_factory=list)
    mean_rejected: list = field(default_factory=list)
    predictive_coverage: float | None = None
    residuals: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_draws": self.n_draws,
            "ess": self.ess,
            "ess_fraction": self.ess_fraction,
            "hmc_accept_rate": self.accept_rate,
            "mean_rejected_proposals": self.mean_rejected,
            "predictive_coverage_95": self.predictive_coverage,
            "standardized_residuals": self.residuals,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def monitored_scalars(samples: PosteriorSamples) -> dict[str, np.ndarray]:
    out = {"sigma2": samples.sigma2, "nu2": samples.nu2, "alpha": samples.alpha}
    for i, (u, v) in enumerate(samples.pairs):
        out[f"kappa_{u + 1}_{v + 1}"] = samples.kappa[:, i]
    return out


def diagnose(samples: PosteriorSamples, data: Dataset | None = None, bases: BasisSet | None = None,
             rng: np.random.Generator | None = None) -> DiagnosticsReport:
    """ESS of the monitored scalars, HMC statistics and, given data, a predictive check."""
    T = samples.n_draws
    report = DiagnosticsReport(n_draws=T)
    report.accept_rate = [float(a) for a in samples.accept_rate]
    report.mean_rejected = [float(c) for c in samples.n_rejected.mean(axis=0)] if T else []
    if T >= 10:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for name, chain in monitored_scalars(samples).items():
                ess = effective_sample_size(chain)
                report.ess[name] = ess
                report.ess_fraction[name] = ess / T
    if data is not None and T:
        check = posterior_predictive(samples, data, bases, rng)
        report.predictive_coverage = check.coverage
        report.residuals = check.residual_summary()
    return report
