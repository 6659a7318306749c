"""Regression surface, interaction penalty, and the log densities used by the sampler.

The exposure surface is

    H(x) = alpha + sum_j f_j(x_j) + sum_{u<v} h_uv(x_u, x_v)

with ``f_j(x) = b(x)^T gamma_j`` and each interaction written as a difference
of two products of squared spline expansions,

    h_uv = (s(x_u)^T theta1)^2 (s(x_v)^T phi1)^2 - (s(x_u)^T theta2)^2 (s(x_v)^T phi2)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DomainError, ShapeError
from .splines import BasisSet, PSplineCovariance, eval_design

LOG_2PI = math.log(2.0 * math.pi)
LOG_2_OVER_PI = math.log(2.0 / math.pi)
NEG_INF = -math.inf
# log-scale coordinates beyond this are treated as zero density
MAX_LOG_SCALE = 300.0


def pair_list(p: int) -> list[tuple[int, int]]:
    """All pairs ``(u, v)`` with ``u < v`` in lexicographic order (0-based)."""
    return list(combinations(range(p), 2))


@dataclass
class InteractionState:
    theta1: np.ndarray
    phi1: np.ndarray
    theta2: np.ndarray
    phi2: np.ndarray
    tau1: float = 1.0
    tau2: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        vecs = [np.asarray(v, dtype=float) for v in (self.theta1, self.phi1, self.theta2, self.phi2)]
        if len({v.shape for v in vecs}) != 1 or vecs[0].ndim != 1:
            raise ShapeError("interaction coefficient vectors must share one length")
        self.theta1, self.phi1, self.theta2, self.phi2 = vecs
        # kappa = 0 is allowed for fixed-penalty use; the HMC coordinates need kappa > 0
        if not (self.tau1 > 0 and self.tau2 > 0 and self.kappa >= 0):
            raise DomainError("tau1 and tau2 must be positive and kappa non-negative")

    @property
    def m(self) -> int:
        return self.theta1.shape[0]

    @property
    def psi(self) -> np.ndarray:
        """Coefficients stacked as a (4, m) array: theta1, phi1, theta2, phi2."""
        return np.stack([self.theta1, self.phi1, self.theta2, self.phi2])

    def to_coords(self) -> np.ndarray:
        """Unconstrained HMC coordinates (psi, log tau1, log tau2, log kappa)."""
        return np.concatenate(
            [self.psi.ravel(), [math.log(self.tau1), math.log(self.tau2), math.log(self.kappa)]]
        )

    @classmethod
    def from_coords(cls, z: np.ndarray, m: int) -> "InteractionState":
        psi = z[: 4 * m].reshape(4, m)
        return cls(psi[0].copy(), psi[1].copy(), psi[2].copy(), psi[3].copy(),
                   math.exp(z[4 * m]), math.exp(z[4 * m + 1]), math.exp(z[4 * m + 2]))

    @classmethod
    def zeros(cls, m: int) -> "InteractionState":
        return cls(np.zeros(m), np.zeros(m), np.zeros(m), np.zeros(m))


@dataclass
class MainEffectState:
    gamma: np.ndarray
    lam: float = 1.0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        if not self.lam > 0:
            raise DomainError("lambda must be positive")


@dataclass
class ModelState:
    alpha: float
    eta: np.ndarray
    main_effects: list[MainEffectState]
    interactions: dict[tuple[int, int], InteractionState]
    nu2: float = 1.0
    w_aux: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        p = len(self.main_effects)
        if sorted(self.interactions) != pair_list(p):
            raise ShapeError("need exactly one interaction state per unordered exposure pair")
        if not (self.nu2 > 0 and self.w_aux > 0 and self.sigma2 > 0):
            raise DomainError("nu2, w_aux and sigma2 must be positive")

    @property
    def p(self) -> int:
        return len(self.main_effects)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return pair_list(self.p)

    def linear_coefficients(self) -> np.ndarray:
        """(alpha, eta, gamma_1, ..., gamma_p) in design-matrix column order."""
        return np.concatenate([[self.alpha], self.eta, *[me.gamma for me in self.main_effects]])


@dataclass(eq=False)
class Dataset:
    """Standardized training data.

    ``y`` has unit sample variance; multiply response-scale summaries by
    ``y_scale`` to return to the original units.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray = field(default=None)
    y_scale: float = 1.0
    exposure_names: list[str] | None = None
    covariate_names: list[str] | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        n = self.y.shape[0]
        if self.Z is None:
            self.Z = np.zeros((n, 0))
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Z.ndim == 1:
            self.Z = self.Z[:, None]
        if self.y.ndim != 1 or self.X.shape[0] != n or self.Z.shape[0] != n:
            raise ShapeError("y, X and Z must have the same number of rows")
        for name, arr in (("y", self.y), ("X", self.X), ("Z", self.Z)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains missing or non-finite values")
        if np.any(self.X < 0) or np.any(self.X > 1):
            raise DomainError("exposures must lie in [0, 1]")
        if not self.y_scale > 0:
            raise DomainError("y_scale must be positive")
        if self.exposure_names is None:
            self.exposure_names = [f"x{j + 1}" for j in range(self.p)]
        if self.covariate_names is None:
            self.covariate_names = [f"z{k + 1}" for k in range(self.q)]

    @classmethod
    def from_raw(cls, y, X, Z=None, **names) -> "Dataset":
        """Standardize ``y`` to unit sample variance and wrap it."""
        from .preprocess import standardize_response

        y_std, scale = standardize_response(y)
        return cls(y_std, X, Z, scale, **names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]


# ---------------------------------------------------------------------------
# Surface pieces
# ---------------------------------------------------------------------------


def eval_interaction(state: InteractionState, Su: np.ndarray, Sv: np.ndarray) -> np.ndarray:
    """Interaction values ``(Su th1)^2 (Sv ph1)^2 - (Su th2)^2 (Sv ph2)^2`` row by row."""
    Su, Sv = np.atleast_2d(Su), np.atleast_2d(Sv)
    if Su.shape != Sv.shape or Su.shape[1] != state.m:
        raise ShapeError(f"design shapes {Su.shape}, {Sv.shape} do not match m={state.m}")
    a = Su @ state.theta1
    b = Sv @ state.phi1
    c = Su @ state.theta2
    d = Sv @ state.phi2
    return (a * b) ** 2 - (c * d) ** 2


def quadratic_forms(psi: np.ndarray, Au: np.ndarray, Av: np.ndarray) -> np.ndarray:
    """The four forms theta1'Au theta1, phi1'Av phi1, theta2'Au theta2, phi2'Av phi2.

    ``psi`` has shape (..., 4, m); the result has shape (..., 4).
    """
    out = np.empty(psi.shape[:-1])
    out[..., 0::2] = np.einsum("...i,ij,...j->...", psi[..., 0::2, :], Au, psi[..., 0::2, :])
    out[..., 1::2] = np.einsum("...i,ij,...j->...", psi[..., 1::2, :], Av, psi[..., 1::2, :])
    return out


def penalty_q(state: InteractionState, Au: np.ndarray, Av: np.ndarray) -> float:
    """Product of the integrals of the positive and negative parts, int P * int N."""
    return float(np.prod(quadratic_forms(state.psi, Au, Av)))


def eval_surface(state: ModelState, X: np.ndarray, bases: BasisSet) -> np.ndarray:
    """Exposure surface H at the rows of ``X`` (covariate term excluded)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != state.p:
        raise ShapeError(f"X has {X.shape[1]} columns but the state has p={state.p}")
    out = np.full(X.shape[0], float(state.alpha))
    S = [eval_design(bases.interaction, X[:, j]) for j in range(state.p)]
    for j, me in enumerate(state.main_effects):
        out += eval_design(bases.main, X[:, j]) @ me.gamma
    for (u, v), ist in state.interactions.items():
        out += eval_interaction(ist, S[u], S[v])
    return out


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


def _logdet(cov: PSplineCovariance) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cov.chol))))


def log_prior_pi0(psi, tau1: float, tau2: float, nu2: float, sigma0: PSplineCovariance) -> float:
    """Unpenalized Gaussian log prior of the four coefficient vectors.

    theta1, phi1 ~ N(0, nu2 tau1^2 Sigma0) and theta2, phi2 ~ N(0, nu2 tau2^2 Sigma0).
    """
    psi = np.asarray(psi, dtype=float).reshape(4, -1)
    m = psi.shape[1]
    kq = np.einsum("ki,ij,kj->k", psi, sigma0.precision, psi)
    var = nu2 * np.array([tau1 ** 2, tau1 ** 2, tau2 ** 2, tau2 ** 2])
    return float(np.sum(-0.5 * m * (LOG_2PI + np.log(var)) - 0.5 * _logdet(sigma0) - 0.5 * kq / var))


class InteractionTarget:
    """Log conditional density of one interaction block and its gradient.

    The density combines the unpenalized prior, the penalty factor
    ``exp(-kappa Q)``, the rejected-proposal terms, half-Cauchy priors on the
    local scales, a log-normal prior on ``kappa``, and the Gaussian likelihood
    of the partial residual. It is expressed in the coordinates returned by
    :meth:`InteractionState.to_coords`, Jacobian included.
    """

    def __init__(self, residual, sigma2, nu2, Su, Sv, Au, Av, sigma0: PSplineCovariance, rejected=None):
        self.residual = np.asarray(residual, dtype=float)
        if self.residual.ndim != 1 or self.residual.size == 0:
            raise ShapeError("residual must be a non-empty vector")
        self.Su, self.Sv = np.asarray(Su), np.asarray(Sv)
        if self.Su.shape != self.Sv.shape or self.Su.shape[0] != self.residual.size:
            raise ShapeError("design matrices must have one row per residual")
        self.m = self.Su.shape[1]
        self.sigma2 = float(sigma2)
        self.nu2 = float(nu2)
        self.Au, self.Av = Au, Av
        self.K = sigma0.precision
        self._const_vec = -0.5 * self.m * LOG_2PI - 0.5 * _logdet(sigma0) - 0.5 * self.m * math.log(self.nu2)
        self._const_lik = -0.5 * self.residual.size * math.log(2.0 * math.pi * self.sigma2)

        if rejected is None:
            rejected = np.zeros((0, 4, self.m))
        rejected = np.asarray(rejected, dtype=float).reshape(-1, 4, self.m)
        self.n_rejected = rejected.shape[0]
        kq = np.einsum("rki,ij,rkj->rk", rejected, self.K, rejected)
        self.rej_a1 = float(np.sum(kq[:, 0] + kq[:, 1]))
        self.rej_a2 = float(np.sum(kq[:, 2] + kq[:, 3]))
        self.rej_q = np.prod(quadratic_forms(rejected, Au, Av), axis=-1)

    @property
    def dim(self) -> int:
        return 4 * self.m + 3

    def __call__(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        m = self.m
        psi = z[: 4 * m].reshape(4, m)
        rho1, rho2, omega = z[4 * m], z[4 * m + 1], z[4 * m + 2]
        grad = np.zeros_like(z)
        if max(abs(rho1), abs(rho2), abs(omega)) > MAX_LOG_SCALE:
            return NEG_INF, grad
        t1, t2, kappa = math.exp(2.0 * rho1), math.exp(2.0 * rho2), math.exp(omega)

        # rejected proposals: sum_j log(1 - exp(-kappa Q_j))
        kq_rej = kappa * self.rej_q
        if self.n_rejected:
            if np.any(kq_rej <= 0.0):
                return NEG_INF, grad
            one_minus = -np.expm1(-kq_rej)
            log_rej = float(np.sum(np.log(one_minus)))
            # d/d log(kappa) of log(1 - exp(-kappa Q)) = kappa Q / expm1(kappa Q)
            dlog_rej = float(np.sum(kq_rej * np.exp(-kq_rej) / one_minus))
        else:
            log_rej = dlog_rej = 0.0

        # unpenalized prior of psi
        Kpsi = psi @ self.K
        kq = np.einsum("ki,ki->k", psi, Kpsi)
        s1, s2 = self.nu2 * t1, self.nu2 * t2
        logp = 4.0 * self._const_vec - 2.0 * m * (rho1 + rho2) - 0.5 * (kq[0] + kq[1]) / s1 - 0.5 * (kq[2] + kq[3]) / s2
        g = grad[: 4 * m].reshape(4, m)
        g[0:2] = -Kpsi[0:2] / s1
        g[2:4] = -Kpsi[2:4] / s2
        grad[4 * m] = -2.0 * m + (kq[0] + kq[1]) / s1
        grad[4 * m + 1] = -2.0 * m + (kq[2] + kq[3]) / s2

        # rejected proposals under pi0
        nr = self.n_rejected
        logp += nr * (4.0 * self._const_vec - 2.0 * m * (rho1 + rho2)) - 0.5 * self.rej_a1 / s1 - 0.5 * self.rej_a2 / s2
        grad[4 * m] += -2.0 * m * nr + self.rej_a1 / s1
        grad[4 * m + 1] += -2.0 * m * nr + self.rej_a2 / s2
        logp += log_rej

        # penalty exp(-kappa Q)
        Apsi = np.empty_like(psi)
        Apsi[0::2] = psi[0::2] @ self.Au
        Apsi[1::2] = psi[1::2] @ self.Av
        q = np.einsum("ki,ki->k", psi, Apsi)
        Q = q[0] * q[1] * q[2] * q[3]
        logp -= kappa * Q
        others = np.array([q[1] * q[2] * q[3], q[0] * q[2] * q[3], q[0] * q[1] * q[3], q[0] * q[1] * q[2]])
        g -= (2.0 * kappa) * others[:, None] * Apsi

        # scale and penalty hyperpriors with log-Jacobians
        logp += 2.0 * LOG_2_OVER_PI - math.log1p(t1) - math.log1p(t2) + rho1 + rho2
        grad[4 * m] += 1.0 - 2.0 * t1 / (1.0 + t1)
        grad[4 * m + 1] += 1.0 - 2.0 * t2 / (1.0 + t2)
        logp += -0.5 * LOG_2PI - 0.5 * omega * omega
        grad[4 * m + 2] = -kappa * Q + dlog_rej - omega

        # likelihood of the partial residual
        U = self.Su @ psi[0::2].T  # columns: Su theta1, Su theta2
        V = self.Sv @ psi[1::2].T  # columns: Sv phi1, Sv phi2
        a, c = U[:, 0], U[:, 1]
        b, d = V[:, 0], V[:, 1]
        a2, b2, c2, d2 = a * a, b * b, c * c, d * d
        r = self.residual - (a2 * b2 - c2 * d2)
        logp += self._const_lik - 0.5 * float(r @ r) / self.sigma2
        w = r * (2.0 / self.sigma2)
        gu = self.Su.T @ np.column_stack([w * a * b2, -w * c * d2])
        gv = self.Sv.T @ np.column_stack([w * b * a2, -w * d * c2])
        g[0] += gu[:, 0]
        g[2] += gu[:, 1]
        g[1] += gv[:, 0]
        g[3] += gv[:, 1]
        return float(logp), grad


def log_target_interaction(state: InteractionState, rejected, residual, sigma2, nu2, Su, Sv, Au, Av,
                           sigma0: PSplineCovariance) -> tuple[float, np.ndarray]:
    """Evaluate :class:`InteractionTarget` at ``state``; returns (log density, gradient)."""
    target = InteractionTarget(residual, sigma2, nu2, Su, Sv, Au, Av, sigma0, rejected)
    return target(state.to_coords())
