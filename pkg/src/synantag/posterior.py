"""Evaluate posterior draws of the surface and its components at new points."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .sampler import PosteriorSamples
from .splines import BasisSet, eval_design


def interaction_draws(samples: PosteriorSamples, index: int, xu, xv, bases: BasisSet | None = None) -> np.ndarray:
    """Draws of one interaction at points ``(xu[i], xv[i])``; shape (T, n)."""
    bases = bases or samples.bases
    Su = eval_design(bases.interaction, xu)
    Sv = eval_design(bases.interaction, xv)
    psi = samples.psi[:, index]  # (T, 4, m)
    a = psi[:, 0] @ Su.T
    b = psi[:, 1] @ Sv.T
    c = psi[:, 2] @ Su.T
    d = psi[:, 3] @ Sv.T
    return (a * b) ** 2 - (c * d) ** 2


def interaction_grid_draws(samples: PosteriorSamples, index: int, grid: np.ndarray,
                           bases: BasisSet | None = None, draws=slice(None)) -> np.ndarray:
    """Draws of one interaction on the tensor grid ``grid x grid``; shape (T, G, G)."""
    bases = bases or samples.bases
    Sg = eval_design(bases.interaction, grid)
    V = samples.psi[draws, index] @ Sg.T  # (T, 4, G)
    V = V * V
    return V[:, 0, :, None] * V[:, 1, None, :] - V[:, 2, :, None] * V[:, 3, None, :]


def main_effect_draws(samples: PosteriorSamples, j: int, x, bases: BasisSet | None = None) -> np.ndarray:
    bases = bases or samples.bases
    return samples.gamma[:, j] @ eval_design(bases.main, x).T


def interaction_sum_draws(samples: PosteriorSamples, X: np.ndarray, bases: BasisSet | None = None) -> np.ndarray:
    """Draws of the summed interaction surface at the rows of ``X``."""
    bases = bases or samples.bases
    X = np.atleast_2d(X)
    out = np.zeros((samples.n_draws, X.shape[0]))
    for i, (u, v) in enumerate(samples.pairs):
        out += interaction_draws(samples, i, X[:, u], X[:, v], bases)
    return out


def surface_draws(samples: PosteriorSamples, X: np.ndarray, bases: BasisSet | None = None) -> np.ndarray:
    """Draws of the exposure surface H (no covariate term) at the rows of ``X``."""
    bases = bases or samples.bases
    X = np.atleast_2d(X)
    if X.shape[1] != samples.p:
        raise ShapeError(f"X has {X.shape[1]} columns, samples have p={samples.p}")
    out = np.repeat(samples.alpha[:, None], X.shape[0], axis=1)
    for j in range(samples.p):
        out += main_effect_draws(samples, j, X[:, j], bases)
    return out + interaction_sum_draws(samples, X, bases)


def mean_draws(samples: PosteriorSamples, X: np.ndarray, Z: np.ndarray | None = None,
               bases: BasisSet | None = None) -> np.ndarray:
    """Draws of the regression mean H(x) + eta'z on the standardized scale."""
    out = surface_draws(samples, X, bases)
    if Z is not None and Z.shape[1]:
        out += samples.eta @ np.asarray(Z, dtype=float).T
    return out
