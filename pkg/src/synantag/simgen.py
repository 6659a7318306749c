"""Simulation scenarios with known truth, evaluation metrics, and the prior-draw study."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .model import Dataset, pair_list, quadratic_forms
from .splines import BasisSet, eval_design, make_bases


class Kind(str, enum.Enum):
    SN = "sn"
    QR = "qr"
    MIS = "mis"
    P10 = "p10"


class TrueClass(str, enum.Enum):
    SYNERGISTIC = "synergistic"
    ANTAGONISTIC = "antagonistic"
    NULL = "null"
    # neither sign-definite nor zero (the MIS interaction)
    MIXED = "mixed"


E_MINUS_1 = math.e - 1.0


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


# Interactions of the ten-exposure scenario, keyed by 0-based pair.
P10_SYNERGISTIC = {
    (0, 1): lambda a, b: 4.0 * (a - a * a) * b,
    (0, 8): lambda a, b: a * b,
    (1, 2): lambda a, b: a * a * b * b,
    (2, 7): lambda a, b: a * b,
    (4, 9): lambda a, b: (np.exp(a) - 1.0) * b / E_MINUS_1,
}
P10_ANTAGONISTIC = {
    (0, 2): lambda a, b: -(a * b),
    (1, 4): lambda a, b: -(a * a * b),
    (3, 8): lambda a, b: -(27.0 / 4.0) * a * a * (1.0 - a) * b,
    (6, 9): lambda a, b: -(a * b),
    (7, 8): lambda a, b: -(a * b * b),
}
P10_ALPHA = -5.0 / 6.0


def p10_main(X: np.ndarray) -> np.ndarray:
    return (X[:, 0] + X[:, 0] ** 2) + X[:, 1] / 2.0 + X[:, 6] ** 3


@dataclass
class Scenario:
    kind: Kind | str = Kind.SN
    gamma0: float = 1.0
    sigma0_sq: float = 0.1
    n_train: int = 500
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.kind, Kind):
            try:
                self.kind = Kind(str(self.kind).lower())
            except ValueError as exc:
                raise ConfigError(f"unknown scenario {self.kind!r}") from exc
        if self.kind is Kind.P10:
            self.sigma0_sq = 0.2
            self.n_train = 1000
            self.n_test = 500
        if not self.sigma0_sq > 0:
            raise ConfigError("noise variance must be positive")
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("sample sizes must be positive")

    @property
    def p(self) -> int:
        return 10 if self.kind is Kind.P10 else 2

    def interactions(self) -> dict[tuple[int, int], callable]:
        """True interaction function for every pair (null pairs included)."""
        g = self.gamma0
        if self.kind is Kind.P10:
            funcs = {pq: _zero for pq in pair_list(10)}
            funcs.update(P10_SYNERGISTIC)
            funcs.update(P10_ANTAGONISTIC)
            return funcs
        if self.kind is Kind.SN:
            return {(0, 1): lambda a, b: g * a * a * b * b}
        if self.kind is Kind.QR:
            return {(0, 1): lambda a, b: g * a * b}
        return {(0, 1): lambda a, b: g * (a * b - 2.0 * a * a * b * b)}

    def main_surface(self, X: np.ndarray) -> np.ndarray:
        """Intercept plus main effects."""
        if self.kind is Kind.P10:
            return P10_ALPHA + p10_main(X)
        if self.kind is Kind.SN:
            return 0.5 + X[:, 0] ** 2 + X[:, 1] ** 2
        return 0.5 + X[:, 0] + X[:, 1]

    def surface(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = self.main_surface(X)
        for (u, v), f in self.interactions().items():
            out = out + f(X[:, u], X[:, v])
        return out


@dataclass(eq=False)
class GroundTruth:
    scenario: Scenario
    X_train: np.ndarray
    X_test: np.ndarray
    H_train: np.ndarray
    H_test: np.ndarray
    h_train: dict = field(default_factory=dict)
    h_test: dict = field(default_factory=dict)
    classes: dict = field(default_factory=dict)

    @property
    def interaction_test(self) -> np.ndarray:
        """Sum of all true interactions at the test points."""
        return np.sum([v for v in self.h_test.values()], axis=0)

    def to_json(self) -> dict:
        counts = {c.value: 0 for c in TrueClass}
        for c in self.classes.values():
            counts[c.value] += 1
        return {
            "scenario": {
                "kind": self.scenario.kind.value,
                "gamma0": self.scenario.gamma0,
                "sigma0_sq": self.scenario.sigma0_sq,
                "n_train": self.scenario.n_train,
                "n_test": self.scenario.n_test,
                "seed": self.scenario.seed,
            },
            "classes": {f"{u + 1}-{v + 1}": c.value for (u, v), c in sorted(self.classes.items())},
            "class_counts": counts,
            "H_test": self.H_test.tolist(),
            "h_test": {f"{u + 1}-{v + 1}": vals.tolist() for (u, v), vals in sorted(self.h_test.items())},
        }


def classify_function(f, grid: int = 100, tol: float = 1e-12) -> TrueClass:
    """Class of a bivariate function from its signs on a regular grid over [0, 1]^2."""
    g = np.linspace(0.0, 1.0, grid)
    a, b = np.meshgrid(g, g, indexing="ij")
    vals = f(a, b)
    pos, neg = np.any(vals > tol), np.any(vals < -tol)
    if pos and neg:
        return TrueClass.MIXED
    if pos:
        return TrueClass.SYNERGISTIC
    if neg:
        return TrueClass.ANTAGONISTIC
    return TrueClass.NULL


def generate(scenario: Scenario) -> tuple[Dataset, GroundTruth]:
    """Draw training and test designs uniformly on the unit cube and noisy responses."""
    rng = np.random.default_rng(scenario.seed)
    p = scenario.p
    X = rng.random((scenario.n_train, p))
    X_test = rng.random((scenario.n_test, p))
    H = scenario.surface(X)
    y = H + math.sqrt(scenario.sigma0_sq) * rng.standard_normal(scenario.n_train)
    funcs = scenario.interactions()
    truth = GroundTruth(
        scenario=scenario,
        X_train=X,
        X_test=X_test,
        H_train=H,
        H_test=scenario.surface(X_test),
        h_train={pq: f(X[:, pq[0]], X[:, pq[1]]) * np.ones(len(X)) for pq, f in funcs.items()},
        h_test={pq: f(X_test[:, pq[0]], X_test[:, pq[1]]) * np.ones(len(X_test)) for pq, f in funcs.items()},
        classes={pq: classify_function(f) for pq, f in funcs.items()},
    )
    return Dataset.from_raw(y, X), truth


def rmse(estimate, truth) -> float:
    estimate, truth = np.asarray(estimate, dtype=float), np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ShapeError(f"length mismatch: {estimate.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((estimate - truth) ** 2)))


def called_class(pip: float, psp: float, pap: float) -> TrueClass:
    """Decision rule: the largest of PSP, PAP, 1 - PIP wins, provided PIP > 0.5."""
    if pip > 0.5:
        best = max(psp, pap, 1.0 - pip)
        if psp == best:
            return TrueClass.SYNERGISTIC
        if pap == best:
            return TrueClass.ANTAGONISTIC
    return TrueClass.NULL


CALLABLE = (TrueClass.SYNERGISTIC, TrueClass.ANTAGONISTIC, TrueClass.NULL)


def classification_errors(reports, truths) -> dict[str, dict[str, float]]:
    """Case-1 and case-2 error rates per class, pooled over replicates.

    Case 1: a pair truly in the class is called something else.
    Case 2: a pair truly outside the class is called into it.
    ``reports`` and ``truths`` may be single objects or equal-length lists.
    """
    if not isinstance(reports, (list, tuple)):
        reports, truths = [reports], [truths]
    if len(reports) != len(truths):
        raise ShapeError("need one truth per report")
    tally = {c: {"in": 0, "miss": 0, "out": 0, "false": 0} for c in CALLABLE}
    for report, truth in zip(reports, truths):
        calls = {pq: called_class(r.pip, r.psp, r.pap) for pq, r in report.by_pair().items()}
        if set(calls) != set(truth.classes):
            raise ShapeError("report and truth cover different pairs")
        for pq, true_c in truth.classes.items():
            call = calls[pq]
            for c in CALLABLE:
                if true_c is c:
                    tally[c]["in"] += 1
                    tally[c]["miss"] += call is not c
                else:
                    tally[c]["out"] += 1
                    tally[c]["false"] += call is c
    out = {}
    for c, t in tally.items():
        out[c.value] = {
            "case1": t["miss"] / t["in"] if t["in"] else 0.0,
            "case2": t["false"] / t["out"] if t["out"] else 0.0,
        }
    return out


# ---------------------------------------------------------------------------
# Prior-draw study
# ---------------------------------------------------------------------------


def _penalized_prior_draws(n_draws, kappa, bases: BasisSet, rng, tau1=1.0, tau2=1.0, nu=1.0, batch=200_000):
    m = bases.m
    A = bases.gram
    L = bases.sigma0.chol
    scale = nu * np.array([tau1, tau1, tau2, tau2])
    kept = []
    total = 0
    while total < n_draws:
        Y = (rng.standard_normal((batch, 4, m)) @ L.T) * scale[None, :, None]
        if kappa > 0:
            Q = np.prod(quadratic_forms(Y, A, A), axis=-1)
            Y = Y[np.log(rng.random(batch)) < -kappa * Q]
        kept.append(Y)
        total += len(Y)
    return np.concatenate(kept)[:n_draws]


def deviation_measure(psi: np.ndarray, bases: BasisSet, grid: int = 200, chunk: int = 250) -> np.ndarray:
    """(int h+)(int h-) per draw by the midpoint rule on a ``grid`` x ``grid`` mesh."""
    xg = (np.arange(grid) + 0.5) / grid
    Sg = eval_design(bases.interaction, xg)
    out = np.empty(len(psi))
    for s in range(0, len(psi), chunk):
        V = psi[s: s + chunk] @ Sg.T  # (c, 4, G)
        V = V * V
        h = V[:, 0, :, None] * V[:, 1, None, :] - V[:, 2, :, None] * V[:, 3, None, :]
        pos = np.maximum(h, 0.0).mean(axis=(1, 2))
        neg = np.maximum(-h, 0.0).mean(axis=(1, 2))
        out[s: s + chunk] = pos * neg
    return out


def prior_draw_study(kappa_values, n_draws: int = 10_000, seed: int = 0, bases: BasisSet | None = None,
                     threshold: float = 1e-3, grid: int = 200) -> list[dict]:
    """Share of penalized-prior draws with deviation measure below ``threshold`` per kappa.

    Scales are fixed at tau1 = tau2 = nu = 1 and draws come from the exact
    rejection construction.
    """
    if bases is None:
        bases = make_bases()
    rng = np.random.default_rng(seed)
    rows = []
    for kappa in kappa_values:
        psi = _penalized_prior_draws(n_draws, float(kappa), bases, rng)
        W = deviation_measure(psi, bases, grid)
        rows.append({"kappa": float(kappa), "prop_below": float(np.mean(W < threshold)), "max_w": float(W.max()),
                     "min_w": float(W.min())})
    return rows
