"""HMC-within-Gibbs posterior sampler.

One sweep performs, in order:

1. a joint Gaussian draw of (alpha, eta, gamma_1..gamma_p) given everything else;
2. conjugate Gamma draws of the main-effect precisions lambda_j;
3. for each pair (u, v) in lexicographic order: build the partial residual,
   draw the rejected proposals of a rejection sampler for the penalized
   prior, then take one HMC step on (psi, log tau1, log tau2, log kappa);
4. inverse-gamma draws of the global scale nu^2 and its auxiliary W;
5. an inverse-gamma draw of the error variance sigma^2.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import ConfigError, DegeneracyError, SamplerError, SchemaError
from .model import Dataset, InteractionState, InteractionTarget, MainEffectState, ModelState, pair_list, quadratic_forms
from .splines import BasisSet, PSplineCovariance, bases_from_description, eval_design

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


@dataclass
class SamplerConfig:
    iterations: int = 15000
    burnin: int = 5000
    step_size: float = 0.01
    leapfrog_steps: int = 10
    perturb_interval: int = 500
    perturb_range: tuple[float, float] = (0.9, 1.1)
    rejection_cap: int = 10000
    a: float = 0.5
    seed: int = 0
    prior_var: float = 1.0e4
    init_sd: float = 0.01
    log_every: int = 0

    def __post_init__(self):
        self.perturb_range = tuple(float(v) for v in self.perturb_range)
        if not 0 <= self.burnin < self.iterations:
            raise ConfigError(f"need 0 <= burnin < iterations, got burnin={self.burnin}, iterations={self.iterations}")
        if not self.step_size > 0:
            raise ConfigError("HMC step size must be positive")
        if self.leapfrog_steps < 1:
            raise ConfigError("HMC needs at least one leapfrog step")
        if self.rejection_cap < 1:
            raise ConfigError("rejection cap must be >= 1")
        if self.perturb_interval < 1:
            raise ConfigError("perturb_interval must be >= 1")
        lo, hi = self.perturb_range
        if not 0 < lo <= hi:
            raise ConfigError("perturb_range must satisfy 0 < low <= high")
        if not self.a > 0:
            raise ConfigError("a must be positive")

    @property
    def n_keep(self) -> int:
        return self.iterations - self.burnin


# ---------------------------------------------------------------------------
# Posterior draws container
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PosteriorSamples:
    """Post-burn-in draws, one leading row per kept iteration.

    ``psi`` has shape (T, P, 4, m) with the last-but-one axis ordered
    theta1, phi1, theta2, phi2; ``pairs`` gives the 0-based exposure
    indices of each of the P interactions.
    """

    pairs: list[tuple[int, int]]
    alpha: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    sigma2: np.ndarray
    nu2: np.ndarray
    w_aux: np.ndarray
    psi: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    kappa: np.ndarray
    n_rejected: np.ndarray
    accept_rate: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.gamma.shape[1]

    @property
    def q(self) -> int:
        return self.eta.shape[1]

    @property
    def bases(self) -> BasisSet:
        return bases_from_description(self.meta["bases"])

    @property
    def y_scale(self) -> float:
        return float(self.meta.get("y_scale", 1.0))

    PER_DRAW = ("alpha", "eta", "gamma", "lam", "sigma2", "nu2", "w_aux", "psi", "tau1", "tau2", "kappa",
                "n_rejected")

    def subset(self, index) -> "PosteriorSamples":
        """Draws selected by ``index`` (slice, integer array or boolean mask)."""
        parts = {k: getattr(self, k)[index] for k in self.PER_DRAW}
        return PosteriorSamples(pairs=list(self.pairs), accept_rate=self.accept_rate, meta=dict(self.meta), **parts)

    @classmethod
    def concatenate(cls, runs: list["PosteriorSamples"]) -> "PosteriorSamples":
        """Stack the draws of several chains; acceptance rates are averaged."""
        if not runs:
            raise ValueError("nothing to concatenate")
        parts = {k: np.concatenate([getattr(r, k) for r in runs]) for k in cls.PER_DRAW}
        acc = np.mean([r.accept_rate for r in runs], axis=0)
        meta = dict(runs[0].meta)
        meta["chains"] = len(runs)
        return cls(pairs=list(runs[0].pairs), accept_rate=acc, meta=meta, **parts)

    def scalar_columns(self) -> dict[str, np.ndarray]:
        cols = {"alpha": self.alpha, "sigma2": self.sigma2, "nu2": self.nu2, "w_aux": self.w_aux}
        for k in range(self.q):
            cols[f"eta_{k + 1}"] = self.eta[:, k]
        for j in range(self.p):
            cols[f"lambda_{j + 1}"] = self.lam[:, j]
        for i, (u, v) in enumerate(self.pairs):
            tag = f"{u + 1}_{v + 1}"
            cols[f"tau1_{tag}"] = self.tau1[:, i]
            cols[f"tau2_{tag}"] = self.tau2[:, i]
            cols[f"kappa_{tag}"] = self.kappa[:, i]
            cols[f"nrej_{tag}"] = self.n_rejected[:, i]
        return cols

    def save(self, directory) -> Path:
        """Write ``scalars.csv``, ``coefficients.npz`` and ``samples_meta.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cols = self.scalar_columns()
        with open(directory / "scalars.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw", *cols])
            for t in range(self.n_draws):
                row = [str(t)]
                for name, arr in cols.items():
                    row.append(str(int(arr[t])) if name.startswith("nrej_") else FLOAT_FMT % arr[t])
                writer.writerow(row)
        with open(directory / "coefficients.npz", "wb") as fh:
            np.savez(fh, gamma=self.gamma, psi=self.psi, eta=self.eta, accept_rate=self.accept_rate)
        meta = dict(self.meta)
        meta["pairs"] = [list(pq) for pq in self.pairs]
        with open(directory / "samples_meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
        return directory

    @classmethod
    def load(cls, directory) -> "PosteriorSamples":
        directory = Path(directory)
        try:
            with open(directory / "samples_meta.json") as fh:
                meta = json.load(fh)
            coef = np.load(directory / "coefficients.npz")
            with open(directory / "scalars.csv", newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader)
                rows = [r for r in reader]
        except (OSError, ValueError, KeyError, StopIteration) as exc:
            raise SchemaError(f"cannot read posterior samples from {directory}: {exc}") from exc
        table = {name: [] for name in header}
        for r in rows:
            if len(r) != len(header):
                raise SchemaError(f"corrupt row in {directory / 'scalars.csv'}")
            for name, val in zip(header, r):
                table[name].append(val)
        pairs = [tuple(pq) for pq in meta.pop("pairs")]
        T = len(rows)
        gamma = coef["gamma"]
        p, P = gamma.shape[1], len(pairs)

        def col(name, dtype=float):
            if name not in table:
                raise SchemaError(f"scalars.csv lacks column {name!r}")
            return np.asarray(table[name], dtype=dtype)

        def pair_cols(prefix, dtype=float):
            if P == 0:
                return np.zeros((T, 0), dtype=dtype)
            return np.column_stack([col(f"{prefix}_{u + 1}_{v + 1}", dtype) for u, v in pairs])

        return cls(
            pairs=pairs,
            alpha=col("alpha"),
            eta=coef["eta"],
            gamma=gamma,
            lam=np.column_stack([col(f"lambda_{j + 1}") for j in range(p)]) if p else np.zeros((T, 0)),
            sigma2=col("sigma2"),
            nu2=col("nu2"),
            w_aux=col("w_aux"),
            psi=coef["psi"],
            tau1=pair_cols("tau1"),
            tau2=pair_cols("tau2"),
            kappa=pair_cols("kappa"),
            n_rejected=pair_cols("nrej", int),
            accept_rate=coef["accept_rate"],
            meta=meta,
        )


# ---------------------------------------------------------------------------
# Gibbs updates
# ---------------------------------------------------------------------------


def linear_design(data: Dataset, bases: BasisSet) -> np.ndarray:
    """Design [1 | Z | B_1 | ... | B_p] for the linear block."""
    blocks = [np.ones((data.n, 1)), data.Z]
    blocks += [eval_design(bases.main, data.X[:, j]) for j in range(data.p)]
    return np.hstack(blocks)


def linear_prior_precision(q: int, lam, sigma_main: PSplineCovariance, prior_var: float = 1.0e4) -> np.ndarray:
    """Inverse of block-diag(prior_var, prior_var I_q, Sigma_M / lambda_1, ...)."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    d = sigma_main.dimension
    size = 1 + q + d * lam.size
    P = np.zeros((size, size))
    P[: 1 + q, : 1 + q] = np.eye(1 + q) / prior_var
    for j, lj in enumerate(lam):
        s = 1 + q + j * d
        P[s: s + d, s: s + d] = lj * sigma_main.precision
    return P


def linear_posterior(design: np.ndarray, xi: np.ndarray, sigma2: float, prior_precision: np.ndarray,
                     gram: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean A^{-1} B'xi / sigma2 and lower Cholesky factor of A = B'B / sigma2 + prior precision.

    ``gram`` may hold a precomputed B'B.
    """
    if gram is None:
        gram = design.T @ design
    A = gram / sigma2 + prior_precision
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        eig = np.linalg.eigvalsh(0.5 * (A + A.T))
        raise SamplerError(
            f"linear-block precision is not positive definite (sigma2={sigma2:.3g}, "
            f"min eigenvalue={eig[0]:.3g}, max={eig[-1]:.3g})"
        ) from exc
    return cho_solve((L, True), design.T @ xi / sigma2), L


def update_linear_block(design: np.ndarray, xi: np.ndarray, sigma2: float, prior_precision: np.ndarray,
                        rng: np.random.Generator, gram: np.ndarray | None = None) -> np.ndarray:
    """Draw from N(A^{-1} B'xi / sigma2, A^{-1}) using a single Cholesky factor of A."""
    mean, L = linear_posterior(design, xi, sigma2, prior_precision, gram)
    return mean + solve_triangular(L.T, rng.standard_normal(L.shape[0]), lower=False)


def update_lambda(gamma: np.ndarray, sigma_main: PSplineCovariance, a: float, rng: np.random.Generator) -> float:
    """Draw lambda ~ Gamma(a + d/2, rate = a + gamma' Sigma_M^{-1} gamma / 2)."""
    gamma = np.asarray(gamma, dtype=float)
    shape = a + 0.5 * gamma.size
    rate = a + 0.5 * float(gamma @ sigma_main.precision @ gamma)
    return float(rng.gamma(shape, 1.0 / rate))


def sample_rejected(state: InteractionState, nu2: float, sigma0: PSplineCovariance, Au: np.ndarray, Av: np.ndarray,
                    rng: np.random.Generator, cap: int = 10000, pair=None) -> np.ndarray:
    """Rejected proposals of the penalized-prior rejection sampler.

    Proposals are drawn i.i.d. from the unpenalized prior and each is accepted
    with probability exp(-kappa Q). Returns every proposal before the first
    acceptance as an array of shape (R, 4, m); the accepted draw is discarded.
    """
    m = state.m
    if state.kappa == 0.0:
        return np.zeros((0, 4, m))
    scale = math.sqrt(nu2) * np.array([state.tau1, state.tau1, state.tau2, state.tau2])
    rejected = []
    drawn = 0
    batch = 8
    while drawn < cap + 1:
        size = min(batch, cap + 1 - drawn)
        Y = (rng.standard_normal((size, 4, m)) @ sigma0.chol.T) * scale[None, :, None]
        Q = np.prod(quadratic_forms(Y, Au, Av), axis=-1)
        u = rng.random(size)
        hits = np.flatnonzero(np.log(u) < -state.kappa * Q)
        if hits.size:
            rejected.append(Y[: hits[0]])
            return np.concatenate(rejected)
        rejected.append(Y)
        drawn += size
        batch = min(2 * batch, 4096)
    raise SamplerError(
        f"rejection sampler for pair {pair} exceeded {cap} proposals without acceptance (kappa={state.kappa:.6g})"
    )


def leapfrog(logp_grad, z: np.ndarray, p: np.ndarray, step: float, n_steps: int, grad=None):
    """Integrate Hamiltonian dynamics for the potential -log p; returns (z, p, logp, grad)."""
    if grad is None:
        _, grad = logp_grad(z)
    z, p = z.copy(), p + 0.5 * step * grad
    lp = None
    for i in range(n_steps):
        z = z + step * p
        lp, grad = logp_grad(z)
        if not math.isfinite(lp):
            return z, p, lp, grad
        if i < n_steps - 1:
            p = p + step * grad
    p = p + 0.5 * step * grad
    return z, p, lp, grad


def hmc_step(logp_grad, z0: np.ndarray, step: float, n_steps: int, rng: np.random.Generator):
    """One Metropolis-adjusted HMC transition with identity mass matrix.

    Returns (z, accepted, logp). Non-finite proposals are rejected.
    """
    lp0, g0 = logp_grad(z0)
    if not math.isfinite(lp0) or not np.all(np.isfinite(g0)):
        raise SamplerError("HMC started from a point with non-finite log density")
    p0 = rng.standard_normal(z0.shape)
    log_u = math.log(rng.random())
    if step == 0.0:
        return z0, True, lp0
    # divergent trajectories overflow on the way; they are rejected below
    with np.errstate(over="ignore", invalid="ignore"):
        z1, p1, lp1, g1 = leapfrog(logp_grad, z0, p0, step, n_steps, g0)
    if not math.isfinite(lp1) or not np.all(np.isfinite(z1)) or not np.all(np.isfinite(g1)):
        return z0, False, lp0
    dH = (lp1 - 0.5 * float(p1 @ p1)) - (lp0 - 0.5 * float(p0 @ p0))
    if log_u < dH:
        return z1, True, lp1
    return z0, False, lp0


def hmc_update_interaction(state: InteractionState, target: InteractionTarget, step: float, n_steps: int,
                           rng: np.random.Generator) -> tuple[InteractionState, bool]:
    z, accepted, _ = hmc_step(target, state.to_coords(), step, n_steps, rng)
    if not accepted:
        return state, False
    return InteractionState.from_coords(z, state.m), True


def nu2_posterior_params(states, rejected_sets, sigma0: PSplineCovariance, w_aux: float) -> tuple[float, float]:
    """Shape and scale of the inverse-gamma full conditional of nu^2."""
    K = sigma0.precision
    m = sigma0.dimension
    n_pairs = len(states)
    n_r = sum(len(r) for r in rejected_sets)
    total = 0.0
    for st, rej in zip(states, rejected_sets):
        kq = np.einsum("ki,ij,kj->k", st.psi, K, st.psi)
        r_uv = (kq[0] + kq[1]) / st.tau1 ** 2 + (kq[2] + kq[3]) / st.tau2 ** 2
        t_uv = 0.0
        if len(rej):
            kr = np.einsum("rki,ij,rkj->k", rej, K, rej)
            t_uv = (kr[0] + kr[1]) / st.tau1 ** 2 + (kr[2] + kr[3]) / st.tau2 ** 2
        total += r_uv + t_uv
    shape = 0.5 + 2.0 * m * (n_pairs + n_r)
    scale = 1.0 / w_aux + 0.5 * total
    return shape, scale


def draw_inverse_gamma(shape: float, scale: float, rng: np.random.Generator) -> float:
    return scale / rng.gamma(shape)


def update_nu2_w(states, rejected_sets, sigma0: PSplineCovariance, w_aux: float,
                 rng: np.random.Generator) -> tuple[float, float]:
    """Draw nu^2 | W, rest and then W | nu^2 (half-Cauchy augmentation for nu)."""
    shape, scale = nu2_posterior_params(states, rejected_sets, sigma0, w_aux)
    nu2 = draw_inverse_gamma(shape, scale, rng)
    w_new = draw_inverse_gamma(1.0, 1.0 + 1.0 / nu2, rng)
    return nu2, w_new


def update_sigma2(residual: np.ndarray, rng: np.random.Generator) -> float:
    """Draw sigma^2 ~ IG(n/2, SSR/2)."""
    residual = np.asarray(residual, dtype=float)
    if residual.size == 0:
        raise DegeneracyError("cannot update sigma2 from an empty residual")
    ssr = float(residual @ residual)
    if not ssr > 0:
        raise DegeneracyError("residual sum of squares is zero; sigma2 full conditional is degenerate")
    return draw_inverse_gamma(0.5 * residual.size, 0.5 * ssr, rng)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------


def initial_state(data: Dataset, bases: BasisSet, config: SamplerConfig, rng: np.random.Generator) -> ModelState:
    sd = config.init_sd
    m, d = bases.m, bases.d
    mains = [MainEffectState(sd * rng.standard_normal(d), 1.0) for _ in range(data.p)]
    inter = {}
    for pq in pair_list(data.p):
        psi = sd * rng.standard_normal((4, m))
        inter[pq] = InteractionState(psi[0], psi[1], psi[2], psi[3], 1.0, 1.0, 1.0)
    return ModelState(
        alpha=float(np.mean(data.y)),
        eta=sd * rng.standard_normal(data.q),
        main_effects=mains,
        interactions=inter,
        nu2=1.0,
        w_aux=1.0,
        sigma2=1.0,
    )


def run_chain(data: Dataset, config: SamplerConfig, bases: BasisSet, rng: np.random.Generator | None = None,
              state: ModelState | None = None) -> PosteriorSamples:
    """Run one chain and return its post-burn-in draws."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, p, q = data.n, data.p, data.q
    m, d = bases.m, bases.d
    pairs = pair_list(p)
    P = len(pairs)
    y = data.y
    A = bases.gram
    S = [eval_design(bases.interaction, data.X[:, j]) for j in range(p)]
    design = linear_design(data, bases)
    gram = design.T @ design
    if state is None:
        state = initial_state(data, bases, config, rng)

    h = np.zeros((P, n))
    for i, (u, v) in enumerate(pairs):
        ist = state.interactions[(u, v)]
        h[i] = (S[u] @ ist.theta1) ** 2 * (S[v] @ ist.phi1) ** 2 - (S[u] @ ist.theta2) ** 2 * (S[v] @ ist.phi2) ** 2

    T = config.n_keep
    out = dict(
        alpha=np.empty(T), eta=np.empty((T, q)), gamma=np.empty((T, p, d)), lam=np.empty((T, p)),
        sigma2=np.empty(T), nu2=np.empty(T), w_aux=np.empty(T), psi=np.empty((T, P, 4, m)),
        tau1=np.empty((T, P)), tau2=np.empty((T, P)), kappa=np.empty((T, P)),
        n_rejected=np.zeros((T, P), dtype=np.int64),
    )
    accepts = np.zeros(P)
    step = config.step_size
    lam = np.array([me.lam for me in state.main_effects])
    t_start = time.perf_counter()

    for it in range(config.iterations):
        try:
            if it > 0 and it % config.perturb_interval == 0:
                lo, hi = config.perturb_range
                step = config.step_size * rng.uniform(lo, hi)
            hsum = h.sum(axis=0)

            # 1. intercept, covariate effects and main effects
            prec = linear_prior_precision(q, lam, bases.sigma_main, config.prior_var)
            G = update_linear_block(design, y - hsum, state.sigma2, prec, rng, gram)
            state.alpha = float(G[0])
            state.eta = G[1: 1 + q]
            for j in range(p):
                state.main_effects[j].gamma = G[1 + q + j * d: 1 + q + (j + 1) * d]
            lin = design @ G

            # 2. main-effect precisions
            for j in range(p):
                lam[j] = update_lambda(state.main_effects[j].gamma, bases.sigma_main, config.a, rng)
                state.main_effects[j].lam = lam[j]

            # 3. interactions
            rejected_sets = []
            partial = y - lin - hsum
            for i, (u, v) in enumerate(pairs):
                ist = state.interactions[(u, v)]
                delta = partial + h[i]
                rej = sample_rejected(ist, state.nu2, bases.sigma0, A, A, rng, config.rejection_cap, (u + 1, v + 1))
                target = InteractionTarget(delta, state.sigma2, state.nu2, S[u], S[v], A, A, bases.sigma0, rej)
                ist, acc = hmc_update_interaction(ist, target, step, config.leapfrog_steps, rng)
                state.interactions[(u, v)] = ist
                new_h = (S[u] @ ist.theta1) ** 2 * (S[v] @ ist.phi1) ** 2 - (S[u] @ ist.theta2) ** 2 * (S[v] @ ist.phi2) ** 2
                partial = delta - new_h
                h[i] = new_h
                rejected_sets.append(rej)
                if it >= config.burnin:
                    accepts[i] += acc
                    out["n_rejected"][it - config.burnin, i] = len(rej)

            # 4. global scale
            states = [state.interactions[pq] for pq in pairs]
            if P:
                state.nu2, state.w_aux = update_nu2_w(states, rejected_sets, bases.sigma0, state.w_aux, rng)

            # 5. error variance
            state.sigma2 = update_sigma2(partial, rng)
        except SamplerError as exc:
            raise SamplerError(f"iteration {it}: {exc}") from exc
        except (DegeneracyError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise SamplerError(f"iteration {it}: {exc}") from exc

        if it >= config.burnin:
            t = it - config.burnin
            out["alpha"][t] = state.alpha
            out["eta"][t] = state.eta
            out["gamma"][t] = [me.gamma for me in state.main_effects] if p else np.zeros((0, d))
            out["lam"][t] = lam
            out["sigma2"][t] = state.sigma2
            out["nu2"][t] = state.nu2
            out["w_aux"][t] = state.w_aux
            for i, pq in enumerate(pairs):
                ist = state.interactions[pq]
                out["psi"][t, i] = ist.psi
                out["tau1"][t, i] = ist.tau1
                out["tau2"][t, i] = ist.tau2
                out["kappa"][t, i] = ist.kappa
        if config.log_every and (it + 1) % config.log_every == 0:
            log.info("iteration %d/%d sigma2=%.4g nu2=%.4g (%.1fs)", it + 1, config.iterations,
                     state.sigma2, state.nu2, time.perf_counter() - t_start)

    meta = {
        "bases": bases.describe(),
        "y_scale": float(data.y_scale),
        "n": n, "p": p, "q": q,
        "exposure_names": list(data.exposure_names),
        "covariate_names": list(data.covariate_names),
        "config": config_to_dict(config),
    }
    return PosteriorSamples(pairs=pairs, accept_rate=accepts / max(T, 1), meta=meta, **out)


def config_to_dict(config: SamplerConfig) -> dict:
    out = asdict(config)
    out["perturb_range"] = list(config.perturb_range)
    return out


def _run_one(args):
    data, config, bases, seed_seq = args
    return run_chain(data, config, bases, np.random.default_rng(seed_seq))


def run_chains(data: Dataset, config: SamplerConfig, bases: BasisSet, chains: int = 1) -> list[PosteriorSamples]:
    """Run independent chains with RNG streams spawned from ``config.seed``.

    A single chain uses ``default_rng(seed)`` directly, so it reproduces
    :func:`run_chain` exactly.
    """
    if chains < 1:
        raise ConfigError("need at least one chain")
    if chains == 1:
        return [run_chain(data, config, bases)]
    streams = np.random.SeedSequence(config.seed).spawn(chains)
    jobs = [(data, config, bases, s) for s in streams]
    with ProcessPoolExecutor(max_workers=chains) as pool:
        return list(pool.map(_run_one, jobs))
