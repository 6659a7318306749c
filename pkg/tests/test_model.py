import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import halfcauchy, multivariate_normal, norm

from synantag.errors import DomainError, ShapeError
from synantag.model import (Dataset, InteractionState, InteractionTarget, MainEffectState, ModelState, eval_interaction,
                            eval_surface, log_prior_pi0, log_target_interaction, pair_list, penalty_q,
                            quadratic_forms)
from synantag.splines import eval_design, make_bases, pspline_covariance


def random_state(rng, m=6, scale=0.7):
    v = scale * rng.standard_normal((4, m))
    return InteractionState(*v, tau1=math.exp(rng.normal(0, 0.3)), tau2=math.exp(rng.normal(0, 0.3)),
                            kappa=math.exp(rng.normal(0, 0.5)))


def grid_integrals(state, basis, G=200):
    """Riemann midpoint estimates of int P and int N."""
    x = (np.arange(G) + 0.5) / G
    S = eval_design(basis, x)
    p = np.outer((S @ state.theta1) ** 2, (S @ state.phi1) ** 2)
    n = np.outer((S @ state.theta2) ** 2, (S @ state.phi2) ** 2)
    return p.mean(), n.mean()


class TestPairs:
    def test_lexicographic(self):
        assert pair_list(3) == [(0, 1), (0, 2), (1, 2)]
        assert len(pair_list(10)) == 45
        assert pair_list(1) == []


class TestEvalInteraction:
    def test_zero_state(self, bases, rng):
        S = eval_design(bases.interaction, rng.random(5))
        np.testing.assert_array_equal(eval_interaction(InteractionState.zeros(6), S, S), 0.0)

    def test_arithmetic_row(self):
        # one-column designs so that Su.theta and Sv.phi take chosen values
        st_ = InteractionState([2.0], [1.0], [1.0], [1.0])
        assert eval_interaction(st_, np.array([[1.0]]), np.array([[1.0]]))[0] == 3.0

    def test_zero_on_axes(self, bases, rng):
        st_ = random_state(rng)
        x = rng.random(20)
        z = np.zeros(20)
        S, S0 = eval_design(bases.interaction, x), eval_design(bases.interaction, z)
        np.testing.assert_array_equal(eval_interaction(st_, S0, S), 0.0)
        np.testing.assert_array_equal(eval_interaction(st_, S, S0), 0.0)

    def test_shape_error(self, bases):
        S = eval_design(bases.interaction, [0.2, 0.3])
        with pytest.raises(ShapeError):
            eval_interaction(InteractionState.zeros(6), S, S[:1])
        with pytest.raises(ShapeError):
            eval_interaction(InteractionState.zeros(5), S, S)

    @given(arrays(float, (4, 6), elements=st.floats(-3, 3)), st.lists(st.floats(0, 1), min_size=1, max_size=30))
    @settings(max_examples=60, deadline=None)
    def test_identifiability_grid(self, psi, xs):
        bs = make_bases()
        st_ = InteractionState(*psi)
        S = eval_design(bs.interaction, xs)
        S0 = eval_design(bs.interaction, np.zeros(len(xs)))
        assert np.all(eval_interaction(st_, S, S0) == 0.0)
        assert np.all(eval_interaction(st_, S0, S) == 0.0)


class TestPenalty:
    def test_zero_theta(self, bases, rng):
        st_ = random_state(rng)
        st_.theta1 = np.zeros(6)
        assert penalty_q(st_, bases.gram, bases.gram) == 0.0

    def test_quadratic_scaling(self, bases, rng):
        st_ = random_state(rng)
        q0 = penalty_q(st_, bases.gram, bases.gram)
        st_.theta1 = 3.0 * st_.theta1
        assert penalty_q(st_, bases.gram, bases.gram) == pytest.approx(9.0 * q0, rel=1e-12)

    def test_matches_grid_quadrature(self, bases, rng):
        for _ in range(5):
            st_ = random_state(rng)
            ip, in_ = grid_integrals(st_, bases.interaction, G=1000)
            assert abs(penalty_q(st_, bases.gram, bases.gram) - ip * in_) <= 1e-6

    def test_grid_quadrature_200(self, bases, rng):
        # the 200 x 200 midpoint rule is itself accurate to well below 1e-6 for these states
        st_ = random_state(rng, scale=0.3)
        ip, in_ = grid_integrals(st_, bases.interaction, G=200)
        assert abs(penalty_q(st_, bases.gram, bases.gram) - ip * in_) <= 1e-6

    @given(arrays(float, (4, 6), elements=st.floats(-2, 2)), st.integers(0, 3))
    @settings(max_examples=60, deadline=None)
    def test_zero_iff_a_form_vanishes(self, psi, k):
        A = make_bases().gram
        psi = psi.copy()
        psi[k] = 0.0
        st_ = InteractionState(*psi)
        assert penalty_q(st_, A, A) == 0.0
        forms = quadratic_forms(st_.psi, A, A)
        assert forms[k] == 0.0

    def test_positive_when_all_forms_positive(self, bases, rng):
        st_ = random_state(rng)
        assert np.all(quadratic_forms(st_.psi, bases.gram, bases.gram) > 0)
        assert penalty_q(st_, bases.gram, bases.gram) > 0


class TestSurface:
    def make_state(self, rng, p=2, m=2, d=2):
        mains = [MainEffectState(rng.standard_normal(d)) for _ in range(p)]
        inter = {pq: InteractionState(*rng.standard_normal((4, m))) for pq in pair_list(p)}
        return ModelState(alpha=0.7, eta=np.zeros(0), main_effects=mains, interactions=inter)

    def test_origin_row_is_alpha(self, tiny_bases, rng):
        state = self.make_state(rng)
        assert eval_surface(state, np.zeros((1, 2)), tiny_bases)[0] == pytest.approx(0.7, abs=1e-15)

    def test_zero_interactions(self, bases, rng):
        state = self.make_state(rng, p=3, m=6, d=6)
        for pq in state.interactions:
            state.interactions[pq] = InteractionState.zeros(6)
        X = rng.random((10, 3))
        want = 0.7 + sum(eval_design(bases.main, X[:, j]) @ state.main_effects[j].gamma for j in range(3))
        np.testing.assert_allclose(eval_surface(state, X, bases), want, atol=1e-13)

    def test_hand_evaluation(self, tiny_bases, rng):
        state = self.make_state(rng)
        X = rng.random((6, 2))
        s = tiny_bases.interaction
        ist = state.interactions[(0, 1)]
        for i, (x1, x2) in enumerate(X):
            # sum every term by hand, one basis function at a time
            b1 = eval_design(tiny_bases.main, [x1])[0]
            b2 = eval_design(tiny_bases.main, [x2])[0]
            s1 = eval_design(s, [x1])[0]
            s2 = eval_design(s, [x2])[0]
            total = 0.7
            total += sum(b1[k] * state.main_effects[0].gamma[k] for k in range(2))
            total += sum(b2[k] * state.main_effects[1].gamma[k] for k in range(2))
            total += (sum(s1 * ist.theta1) ** 2) * (sum(s2 * ist.phi1) ** 2)
            total -= (sum(s1 * ist.theta2) ** 2) * (sum(s2 * ist.phi2) ** 2)
            assert eval_surface(state, X[i: i + 1], tiny_bases)[0] == pytest.approx(total, abs=1e-12)

    def test_shape_error(self, tiny_bases, rng):
        with pytest.raises(ShapeError):
            eval_surface(self.make_state(rng), np.zeros((2, 3)), tiny_bases)

    def test_state_validation(self, rng):
        with pytest.raises(ShapeError):
            ModelState(0.0, np.zeros(0), [MainEffectState(np.zeros(2))] * 2, {})
        with pytest.raises(DomainError):
            InteractionState(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), tau1=0.0)
        with pytest.raises(DomainError):
            MainEffectState(np.zeros(2), lam=-1.0)


class TestDataset:
    def test_standardized_variance(self, rng):
        data = Dataset.from_raw(rng.normal(3, 2, 50), rng.random((50, 2)))
        assert np.var(data.y, ddof=1) == pytest.approx(1.0, abs=1e-8)
        assert data.y_scale > 0

    def test_validation(self, rng):
        with pytest.raises(DomainError):
            Dataset(np.zeros(3), np.full((3, 1), 1.5))
        with pytest.raises(DomainError):
            Dataset(np.array([0.0, np.nan, 1.0]), np.zeros((3, 1)))
        with pytest.raises(ShapeError):
            Dataset(np.zeros(3), np.zeros((4, 1)))


class TestPriorPi0:
    def test_unit_case(self):
        val = log_prior_pi0(np.zeros((4, 1)), 1.0, 1.0, 1.0, pspline_covariance(1))
        assert val == pytest.approx(4 * (-0.5 * math.log(2 * math.pi)), abs=1e-14)

    def test_doubling_nu(self):
        cov = pspline_covariance(6)
        a = log_prior_pi0(np.zeros((4, 6)), 0.8, 1.3, 1.0, cov)
        b = log_prior_pi0(np.zeros((4, 6)), 0.8, 1.3, 4.0, cov)
        assert b - a == pytest.approx(-4 * 6 * math.log(2), abs=1e-12)

    def test_matches_mvn_oracle(self, rng):
        cov = pspline_covariance(6)
        for _ in range(5):
            psi = rng.standard_normal((4, 6))
            t1, t2, nu2 = rng.uniform(0.3, 2, 3)
            want = sum(multivariate_normal(np.zeros(6), nu2 * t ** 2 * cov.cov).logpdf(v)
                       for v, t in zip(psi, (t1, t1, t2, t2)))
            assert log_prior_pi0(psi, t1, t2, nu2, cov) == pytest.approx(want, abs=1e-10)


def reference_log_target(state, rejected, resid, sigma2, nu2, Su, Sv, A, cov):
    """Direct evaluation from scipy densities, in the (psi, log tau, log kappa) coordinates."""
    out = log_prior_pi0(state.psi, state.tau1, state.tau2, nu2, cov)
    out -= state.kappa * penalty_q(state, A, A)
    for Y in rejected:
        out += log_prior_pi0(Y, state.tau1, state.tau2, nu2, cov)
        out += math.log(1 - math.exp(-state.kappa * float(np.prod(quadratic_forms(Y, A, A)))))
    out += halfcauchy.logpdf(state.tau1) + halfcauchy.logpdf(state.tau2) + norm.logpdf(math.log(state.kappa))
    out += math.log(state.tau1) + math.log(state.tau2)  # Jacobians of the log scales
    h = eval_interaction(state, Su, Sv)
    out += norm(h, math.sqrt(sigma2)).logpdf(resid).sum()
    return out


class TestLogTarget:
    @pytest.fixture
    def setup(self, bases, rng):
        n = 40
        Su = eval_design(bases.interaction, rng.random(n))
        Sv = eval_design(bases.interaction, rng.random(n))
        resid = rng.standard_normal(n)
        rejected = 0.5 * rng.standard_normal((3, 4, 6))
        return Su, Sv, resid, rejected

    def test_matches_reference(self, bases, rng, setup):
        Su, Sv, resid, rejected = setup
        for _ in range(5):
            state = random_state(rng)
            lp, _ = log_target_interaction(state, rejected, resid, 0.4, 0.8, Su, Sv, bases.gram, bases.gram,
                                           bases.sigma0)
            want = reference_log_target(state, rejected, resid, 0.4, 0.8, Su, Sv, bases.gram, bases.sigma0)
            assert lp == pytest.approx(want, abs=1e-8)

    def test_gradient_finite_differences(self, bases, rng, setup):
        Su, Sv, resid, rejected = setup
        target = InteractionTarget(resid, 0.4, 0.8, Su, Sv, bases.gram, bases.gram, bases.sigma0, rejected)
        for _ in range(5):
            z = random_state(rng).to_coords()
            _, g = target(z)
            fd = np.empty_like(z)
            for k in range(z.size):
                e = np.zeros_like(z)
                e[k] = 1e-5
                fd[k] = (target(z + e)[0] - target(z - e)[0]) / 2e-5
            rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
            assert rel < 1e-4
            # every block, including the log tau and log kappa coordinates
            np.testing.assert_allclose(g[-3:], fd[-3:], rtol=1e-4, atol=1e-6)

    def test_kappa_zero_limit(self, bases, rng, setup):
        Su, Sv, resid, _ = setup
        state = random_state(rng)
        state.kappa = 1e-12
        lp, _ = log_target_interaction(state, [], resid, 0.4, 0.8, Su, Sv, bases.gram, bases.gram, bases.sigma0)
        want = (log_prior_pi0(state.psi, state.tau1, state.tau2, 0.8, bases.sigma0)
                + halfcauchy.logpdf(state.tau1) + halfcauchy.logpdf(state.tau2) + norm.logpdf(math.log(1e-12))
                + math.log(state.tau1 * state.tau2)
                + norm(eval_interaction(state, Su, Sv), math.sqrt(0.4)).logpdf(resid).sum())
        assert lp == pytest.approx(want, abs=1e-6)

    def test_zero_penalty_rejection_gives_neg_inf(self, bases, rng, setup):
        Su, Sv, resid, rejected = setup
        rejected = rejected.copy()
        rejected[1, 2] = 0.0  # theta2 = 0 so Q(Y) = 0
        lp, _ = log_target_interaction(random_state(rng), rejected, resid, 0.4, 0.8, Su, Sv, bases.gram,
                                       bases.gram, bases.sigma0)
        assert lp == -math.inf

    def test_rejected_order_invariance(self, bases, rng, setup):
        Su, Sv, resid, rejected = setup
        state = random_state(rng)
        a = log_target_interaction(state, rejected, resid, 0.4, 0.8, Su, Sv, bases.gram, bases.gram, bases.sigma0)
        b = log_target_interaction(state, rejected[::-1], resid, 0.4, 0.8, Su, Sv, bases.gram, bases.gram,
                                   bases.sigma0)
        assert a[0] == pytest.approx(b[0], rel=1e-13)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-12)

    def test_empty_residual(self, bases):
        with pytest.raises(ShapeError):
            InteractionTarget(np.zeros(0), 1.0, 1.0, np.zeros((0, 6)), np.zeros((0, 6)), bases.gram, bases.gram,
                              bases.sigma0)

    def test_coords_round_trip(self, rng):
        state = random_state(rng)
        back = InteractionState.from_coords(state.to_coords(), 6)
        np.testing.assert_allclose(back.psi, state.psi)
        assert back.kappa == pytest.approx(state.kappa) and back.tau2 == pytest.approx(state.tau2)
