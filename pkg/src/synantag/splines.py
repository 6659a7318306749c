"""Constrained cubic B-spline bases, P-spline covariances and Gram integrals.

Two kinds of constraint are supported for a univariate basis on [0, 1]:

* ``INTERACTION`` / ``ORIGIN``: the intercept spline (the only clamped
  B-spline that is non-zero at 0) is dropped, so every remaining function
  vanishes at x = 0.
* ``INTEGRAL``: the intercept spline is dropped and each remaining function
  is centred so that it integrates to zero over [0, 1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline

from .errors import ConfigError, DomainError


class Constraint(str, enum.Enum):
    INTERACTION = "interaction"
    ORIGIN = "origin"
    INTEGRAL = "integral"


def clamped_knots(degree: int, num_interior_knots: int) -> np.ndarray:
    """Equally spaced knot vector on [0, 1] with (degree + 1)-fold boundary knots."""
    inner = np.linspace(0.0, 1.0, num_interior_knots + 2)
    return np.concatenate([np.zeros(degree), inner, np.ones(degree)])


def _gauss_nodes(knots: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-interval Gauss-Legendre nodes and weights, exact for degree ``2*degree``."""
    npts = -(-(2 * degree + 2) // 2)
    z, w = leggauss(npts)
    breaks = np.unique(knots)
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * z[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """A univariate B-spline basis on [0, 1] with an identifiability constraint.

    Build instances with :func:`make_basis`.
    """

    degree: int
    knots: np.ndarray
    constraint: Constraint
    offsets: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.knots) - self.degree - 2

    def raw(self, x) -> np.ndarray:
        """All clamped B-splines (intercept included) evaluated at ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size == 0:
            return np.zeros((0, self.size + 1))
        return BSpline.design_matrix(x, self.knots, self.degree, extrapolate=True).toarray()

    def __call__(self, x) -> np.ndarray:
        return eval_design(self, x)


def make_basis(
    degree: int = 3,
    num_interior_knots: int = 3,
    constraint: Constraint | str = Constraint.INTERACTION,
) -> SplineBasis:
    """Construct a constrained basis of size ``num_interior_knots + degree``."""
    if int(degree) != degree or degree < 1:
        raise ConfigError(f"spline degree must be an integer >= 1, got {degree!r}")
    if int(num_interior_knots) != num_interior_knots or num_interior_knots < 0:
        raise ConfigError(f"number of interior knots must be >= 0, got {num_interior_knots!r}")
    constraint = Constraint(constraint)
    degree, num_interior_knots = int(degree), int(num_interior_knots)
    knots = clamped_knots(degree, num_interior_knots)
    size = num_interior_knots + degree
    offsets = np.zeros(size)
    if constraint is Constraint.INTEGRAL:
        nodes, weights = _gauss_nodes(knots, degree)
        raw = BSpline.design_matrix(nodes, knots, degree, extrapolate=True).toarray()
        offsets = weights @ raw[:, 1:]
    knots.setflags(write=False)
    offsets.setflags(write=False)
    return SplineBasis(degree, knots, constraint, offsets)


def basis_from_size(size: int, degree: int = 3, constraint: Constraint | str = Constraint.INTERACTION) -> SplineBasis:
    """Basis with ``size`` functions, i.e. ``size - degree`` interior knots."""
    if size < degree:
        raise ConfigError(f"basis size {size} is smaller than the degree {degree}")
    return make_basis(degree, size - degree, constraint)


def eval_design(basis: SplineBasis, x) -> np.ndarray:
    """Design matrix whose row ``i`` is the basis evaluated at ``x[i]``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise DomainError("eval_design expects a 1-d vector of points")
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("spline arguments must lie in [0, 1]")
    return basis.raw(x)[:, 1:] - basis.offsets


@dataclass(frozen=True, eq=False)
class PSplineCovariance:
    """First-order random-walk prior with a proper N(0, 1) start.

    ``precision`` is the tridiagonal matrix K and ``cov`` its inverse.
    """

    cov: np.ndarray
    precision: np.ndarray
    chol: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.cov.shape[0]


def pspline_covariance(dimension: int) -> PSplineCovariance:
    if dimension < 1:
        raise ConfigError(f"P-spline dimension must be >= 1, got {dimension}")
    K = 2.0 * np.eye(dimension) - np.eye(dimension, k=1) - np.eye(dimension, k=-1)
    K[-1, -1] = 1.0
    # K = D^T D with D unit lower-bidiagonal, so K^{-1}[i, j] = min(i, j) + 1.
    idx = np.arange(1, dimension + 1)
    cov = np.minimum.outer(idx, idx).astype(float)
    for a in (K, cov):
        a.setflags(write=False)
    chol = np.linalg.cholesky(cov)
    chol.setflags(write=False)
    return PSplineCovariance(cov, K, chol)


def gram_integral(basis: SplineBasis) -> np.ndarray:
    """Exact Gram matrix ``A[j, k] = int_0^1 s_j(x) s_k(x) dx``."""
    nodes, weights = _gauss_nodes(basis.knots, basis.degree)
    S = basis.raw(nodes)[:, 1:] - basis.offsets
    A = (S * weights[:, None]).T @ S
    return 0.5 * (A + A.T)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Everything the model needs to know about its spline bases.

    ``interaction`` houses s(.) (size m), ``main`` houses b(.) (size d).
    """

    interaction: SplineBasis
    main: SplineBasis
    gram: np.ndarray
    sigma0: PSplineCovariance
    sigma_main: PSplineCovariance

    @property
    def m(self) -> int:
        return self.interaction.size

    @property
    def d(self) -> int:
        return self.main.size

    def describe(self) -> dict:
        return {
            "degree": self.interaction.degree,
            "m": self.m,
            "d": self.d,
            "main_degree": self.main.degree,
            "constraint": self.main.constraint.value,
        }


def make_bases(m: int = 6, d: int = 6, degree: int = 3, constraint: Constraint | str = "origin") -> BasisSet:
    """Build the interaction and main-effect bases used by the regression model."""
    constraint = Constraint(constraint)
    if constraint is Constraint.INTERACTION:
        constraint = Constraint.ORIGIN
    s = basis_from_size(m, degree, Constraint.INTERACTION)
    b = basis_from_size(d, degree, constraint)
    return BasisSet(
        interaction=s,
        main=b,
        gram=gram_integral(s),
        sigma0=pspline_covariance(m),
        sigma_main=pspline_covariance(d),
    )


def bases_from_description(desc: dict) -> BasisSet:
    return make_bases(desc["m"], desc["d"], desc["degree"], desc["constraint"])
