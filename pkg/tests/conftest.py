import numpy as np
import pytest

from synantag.splines import make_bases


@pytest.fixture(scope="session")
def bases():
    return make_bases()


@pytest.fixture(scope="session")
def tiny_bases():
    """m = d = 2 bases, small enough for brute-force checks."""
    return make_bases(m=2, d=2, degree=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def samples_from_psi(psi, bases, pairs=None):
    """PosteriorSamples holding the given interaction coefficients (T, P, 4, m) and nothing else."""
    from synantag.sampler import PosteriorSamples

    psi = np.asarray(psi, dtype=float)
    T, P = psi.shape[:2]
    pairs = pairs if pairs is not None else [(0, k + 1) for k in range(P)]
    return PosteriorSamples(
        pairs=list(pairs), alpha=np.zeros(T), eta=np.zeros((T, 0)), gamma=np.zeros((T, 1, bases.d)),
        lam=np.ones((T, 1)), sigma2=np.ones(T), nu2=np.ones(T), w_aux=np.ones(T), psi=psi,
        tau1=np.ones((T, P)), tau2=np.ones((T, P)), kappa=np.ones((T, P)), n_rejected=np.zeros((T, P)),
        accept_rate=np.ones(P), meta={"bases": bases.describe()},
    )
