"""Posterior classification of interactions as synergistic, antagonistic or null.

For each draw the positive and negative parts of an interaction are
integrated over the unit square. A part counts as present when its integral
exceeds the cutoff ``c0``; the shares of draws with only a positive part,
only a negative part, or any part give PSP, PAP and PIP.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .posterior import interaction_grid_draws
from .sampler import PosteriorSamples
from .splines import BasisSet

DEFAULT_CUTOFF = 0.01
DEFAULT_GRID = 50


class Evidence(str, enum.Enum):
    NONE = "None"
    BARELY = "BarelyWorthMention"
    WEAK_TO_MODERATE = "WeakToModerate"
    STRONG = "Strong"
    VERY_STRONG = "VeryStrong"


def evidence_label(pip: float) -> Evidence:
    """Rule-of-thumb strength of evidence for an inclusion probability."""
    if pip >= 0.99:
        return Evidence.VERY_STRONG
    if pip >= 0.95:
        return Evidence.STRONG
    if pip >= 0.75:
        return Evidence.WEAK_TO_MODERATE
    if pip > 0.5:
        return Evidence.BARELY
    return Evidence.NONE


def midpoints(grid: int = DEFAULT_GRID) -> np.ndarray:
    if grid < 1:
        raise ConfigError("grid size must be >= 1")
    return (np.arange(grid) + 0.5) / grid


def integrate_pos_neg(h_grid) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint-rule integrals of h+ and h- per draw.

    ``h_grid`` has shape (T, G, G) and holds each draw evaluated at the
    G x G midpoints of the unit square.
    """
    h = np.asarray(h_grid, dtype=float)
    if h.ndim == 2:
        h = h[None]
    if h.ndim != 3 or h.shape[1] != h.shape[2]:
        raise ShapeError(f"expected (T, G, G) surface draws, got shape {h.shape}")
    if h.shape[0] == 0:
        raise ShapeError("no posterior draws to integrate")
    pos = np.maximum(h, 0.0).mean(axis=(1, 2))
    neg = np.maximum(-h, 0.0).mean(axis=(1, 2))
    return pos, neg


def integrate_function(f, grid: int = DEFAULT_GRID) -> tuple[float, float]:
    """(int f+, int f-) of a vectorized bivariate function on the midpoint grid."""
    g = midpoints(grid)
    a, b = np.meshgrid(g, g, indexing="ij")
    pos, neg = integrate_pos_neg(np.asarray(f(a, b), dtype=float)[None])
    return float(pos[0]), float(neg[0])


@dataclass(frozen=True)
class PairSelection:
    pair: tuple[int, int]
    pip: float
    psp: float
    pap: float
    evidence: Evidence
    mean_pos: float
    mean_neg: float

    @property
    def name(self) -> str:
        u, v = self.pair
        return f"{u + 1}-{v + 1}"


def probabilities(pos, neg, c0: float) -> tuple[float, float, float]:
    """(PIP, PSP, PAP) from per-draw integrals and the cutoff."""
    if not c0 > 0:
        raise ConfigError(f"cutoff must be positive, got {c0}")
    pos, neg = np.asarray(pos, dtype=float), np.asarray(neg, dtype=float)
    if pos.shape != neg.shape or pos.size == 0:
        raise ShapeError("need equal, non-empty per-draw integral arrays")
    has_pos, has_neg = pos > c0, neg > c0
    T = pos.size
    pip = np.count_nonzero(has_pos | has_neg) / T
    psp = np.count_nonzero(has_pos & ~has_neg) / T
    pap = np.count_nonzero(~has_pos & has_neg) / T
    return pip, psp, pap


def select_pair(pair, pos, neg, c0: float) -> PairSelection:
    pip, psp, pap = probabilities(pos, neg, c0)
    return PairSelection(tuple(pair), pip, psp, pap, evidence_label(pip), float(np.mean(pos)), float(np.mean(neg)))


@dataclass
class SelectionReport:
    cutoff: float
    grid: int
    pairs: list[PairSelection] = field(default_factory=list)

    def by_pair(self) -> dict[tuple[int, int], PairSelection]:
        return {s.pair: s for s in self.pairs}

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "grid": self.grid,
            "pairs": [
                {"pair": s.name, "u": s.pair[0] + 1, "v": s.pair[1] + 1, "pip": s.pip, "psp": s.psp, "pap": s.pap,
                 "evidence": s.evidence.value, "mean_int_pos": s.mean_pos, "mean_int_neg": s.mean_neg}
                for s in self.pairs
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "pip", "psp", "pap", "label"])
        for s in self.pairs:
            w.writerow([s.name, repr(s.pip), repr(s.psp), repr(s.pap), s.evidence.value])
        return buf.getvalue()


def pair_integrals(samples: PosteriorSamples, index: int, grid: int = DEFAULT_GRID,
                   bases: BasisSet | None = None, chunk: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw (int h+, int h-) for one interaction, computed in chunks of draws."""
    g = midpoints(grid)
    T = samples.n_draws
    if T == 0:
        raise ShapeError("no posterior draws")
    pos, neg = np.empty(T), np.empty(T)
    for s in range(0, T, chunk):
        sl = slice(s, min(s + chunk, T))
        pos[sl], neg[sl] = integrate_pos_neg(interaction_grid_draws(samples, index, g, bases, draws=sl))
    return pos, neg


def classify(samples: PosteriorSamples, c0: float = DEFAULT_CUTOFF, grid: int = DEFAULT_GRID,
             bases: BasisSet | None = None) -> SelectionReport:
    """Selection report for every pair in ``samples``.

    The cutoff is on the scale of the standardized response used for fitting.
    """
    if not c0 > 0:
        raise ConfigError(f"cutoff must be positive, got {c0}")
    report = SelectionReport(cutoff=float(c0), grid=int(grid))
    for i, pq in enumerate(samples.pairs):
        pos, neg = pair_integrals(samples, i, grid, bases)
        report.pairs.append(select_pair(pq, pos, neg, c0))
    return report


def classify_many(samples: PosteriorSamples, cutoffs, grid: int = DEFAULT_GRID,
                  bases: BasisSet | None = None) -> list[SelectionReport]:
    """Reports for several cutoffs, integrating each interaction once."""
    integrals = [pair_integrals(samples, i, grid, bases) for i in range(len(samples.pairs))]
    out = []
    for c0 in cutoffs:
        rep = SelectionReport(cutoff=float(c0), grid=int(grid))
        for pq, (pos, neg) in zip(samples.pairs, integrals):
            rep.pairs.append(select_pair(pq, pos, neg, c0))
        out.append(rep)
    return out
