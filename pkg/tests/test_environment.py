import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neural_dueling.environment import (
    LinkFunction,
    RoundContexts,
    SyntheticReward,
    best_arm,
    duplicate_normalize,
    eval_reward,
    link_derivative,
    link_value,
    make_round_contexts,
    sample_binary,
    sample_preference,
)
from neural_dueling.exceptions import ConfigurationError, InputError

MU = LinkFunction()
finite = st.floats(min_value=-700, max_value=700, allow_nan=False)


def reward_with_projection(kind, scale, value):
    """A 1-d reward whose projection x . theta equals ``value`` at x = [value]."""
    return SyntheticReward(kind, scale, np.array([1.0])), np.array([value])


class TestLink:
    def test_known_values(self):
        assert link_value(MU, 0.0) == 0.5
        assert link_value(MU, 1.0) == 0.7310585786300049
        assert link_value(MU, -2.3) == pytest.approx(1.0 - link_value(MU, 2.3), abs=1e-15)

    def test_derivative_values(self):
        assert link_derivative(MU, 0.0) == 0.25
        assert link_derivative(MU, 2.0) == pytest.approx(0.10499358540350662, rel=1e-15)
        assert link_derivative(MU, 1.7) == pytest.approx(link_derivative(MU, -1.7), rel=1e-15)

    @pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InputError):
            link_value(MU, bad)
        with pytest.raises(InputError):
            link_derivative(MU, bad)

    def test_no_overflow_at_extremes(self):
        with np.errstate(over="raise"):
            assert link_value(MU, 700.0) == 1.0
            assert 0.0 <= link_value(MU, -700.0) < 1e-200

    @given(finite)
    def test_range_and_symmetry(self, z):
        v = link_value(MU, z)
        assert 0.0 <= v <= 1.0
        assert v + link_value(MU, -z) == pytest.approx(1.0, abs=1e-15)

    @given(st.floats(min_value=-30, max_value=30, allow_nan=False))
    def test_derivative_bounded_by_lipschitz(self, z):
        assert 0.0 < link_derivative(MU, z) <= MU.lipschitz

    def test_theory_kappa(self):
        link = LinkFunction.for_reward_bound(1.0)
        assert link.kappa_mu == pytest.approx(link_derivative(MU, 2.0))


class TestReward:
    def test_square(self):
        f, x = reward_with_projection("square", 10.0, 0.5)
        assert eval_reward(f, x) == 2.5
        assert eval_reward(f, np.zeros(1)) == 0.0

    def test_cosine_inner_and_outer(self):
        f, x = reward_with_projection("cosine", 3.0, 0.0)
        assert eval_reward(f, x) == 1.0
        g, x = reward_with_projection("cosine-outer", 3.0, math.pi)
        assert eval_reward(g, x) == pytest.approx(-3.0)

    def test_dimension_mismatch(self):
        f = SyntheticReward("square", 10.0, np.ones(3))
        with pytest.raises(InputError):
            eval_reward(f, np.ones(4))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        f = SyntheticReward.sample("cosine", 3.0, 5, rng)
        x = rng.uniform(-1, 1, 5)
        assert eval_reward(f, x) == eval_reward(f, x)

    def test_theta_star_is_read_only(self):
        f = SyntheticReward.sample("square", 10.0, 4, np.random.default_rng(0))
        with pytest.raises(ValueError):
            f.theta_star[0] = 1.0


class TestContexts:
    def test_raw_shape_and_range(self):
        ctx = make_round_contexts(np.random.default_rng(0), 5, 5)
        assert ctx.features.shape == (5, 5)
        assert np.all(np.abs(ctx.features) < 1.0)

    def test_theory_mode(self):
        ctx = make_round_contexts(np.random.default_rng(1), 7, 5, mode="theory")
        X = ctx.features
        assert X.shape == (7, 10)
        np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-12)
        assert np.array_equal(X[:, :5], X[:, 5:])

    def test_same_seed_same_contexts(self):
        a = make_round_contexts(np.random.default_rng(11), 4, 3).features
        b = make_round_contexts(np.random.default_rng(11), 4, 3).features
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("K,d", [(1, 5), (5, 0)])
    def test_bad_sizes(self, K, d):
        with pytest.raises(ConfigurationError):
            make_round_contexts(np.random.default_rng(0), K, d)

    def test_duplicate_normalize_rejects_zero_row(self):
        with pytest.raises(InputError):
            duplicate_normalize(np.zeros((1, 3)))


def _binomial_tolerance(p, n):
    return 3.0 * math.sqrt(p * (1.0 - p) / n)


class TestSamplers:
    def test_equal_rewards_give_fair_coin(self):
        f = SyntheticReward("square", 10.0, np.array([1.0]))
        rng = np.random.default_rng(5)
        ys = [sample_preference(f, MU, [0.3], [-0.3], rng).y for _ in range(20000)]
        assert abs(np.mean(ys) - 0.5) < _binomial_tolerance(0.5, 20000)

    def test_preference_frequency(self):
        # f(x1) - f(x2) = 1 with a linear reward
        f = SyntheticReward("linear", 1.0, np.array([1.0]))
        rng = np.random.default_rng(7)
        n = 100_000
        ys = np.array([sample_preference(f, MU, [1.0], [0.0], rng).y for _ in range(n)])
        p = 0.7310585786
        assert abs(ys.mean() - p) < _binomial_tolerance(p, n)

    def test_swapped_arguments(self):
        f = SyntheticReward("linear", 1.0, np.array([1.0]))
        rng = np.random.default_rng(8)
        n = 50_000
        forward_ = np.mean([sample_preference(f, MU, [0.4], [-0.2], rng).y for _ in range(n)])
        backward = np.mean([1 - sample_preference(f, MU, [-0.2], [0.4], rng).y for _ in range(n)])
        p = link_value(MU, 0.6)
        tol = 3.0 * math.sqrt(2 * p * (1 - p) / n)
        assert abs(forward_ - backward) < tol

    def test_binary_frequency(self):
        f = SyntheticReward("linear", 5.0, np.array([1.0]))
        assert link_value(MU, 5.0) == pytest.approx(0.9933071491, abs=1e-10)
        rng = np.random.default_rng(9)
        n = 100_000
        ys = np.array([sample_binary(f, MU, [1.0], rng).y for _ in range(n)])
        p = link_value(MU, 5.0)
        assert abs(ys.mean() - p) < _binomial_tolerance(p, n)

    def test_binary_zero_reward(self):
        f = SyntheticReward("square", 10.0, np.array([1.0]))
        rng = np.random.default_rng(10)
        ys = np.array([sample_binary(f, MU, [0.0], rng).y for _ in range(20000)])
        assert abs(ys.mean() - 0.5) < _binomial_tolerance(0.5, 20000)

    def test_observation_fields(self):
        f = SyntheticReward("linear", 1.0, np.array([1.0, 0.0]))
        obs = sample_preference(f, MU, [1.0, 0.0], [0.0, 0.0], np.random.default_rng(0), t=4)
        assert obs.round == 4 and obs.y in (0, 1)
        with pytest.raises(InputError):
            sample_binary(f, MU, [1.0], np.random.default_rng(0))


class TestBestArm:
    def test_simple(self):
        f = SyntheticReward("linear", 1.0, np.array([1.0]))
        assert best_arm(f, RoundContexts(1, [[0.1], [0.9], [0.3]])) == (1, 0.9)

    def test_ties_to_lowest(self):
        f = SyntheticReward("square", 1.0, np.array([1.0]))
        assert best_arm(f, RoundContexts(1, [[0.5], [-0.5], [0.5]]))[0] == 0

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            f = SyntheticReward.sample("cosine", 3.0, 4, rng)
            X = rng.uniform(-1, 1, size=(25, 4))
            best_i, best_v = 0, -math.inf
            for i, row in enumerate(X):
                v = math.cos(3.0 * sum(a * b for a, b in zip(row, f.theta_star)))
                if v > best_v:
                    best_i, best_v = i, v
            i, v = best_arm(f, RoundContexts(1, X))
            assert i == best_i
            assert v == pytest.approx(best_v, abs=1e-12)


@settings(max_examples=25)
@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=2**32))
def test_theory_rows_unit_and_duplicated(d, seed):
    X = make_round_contexts(np.random.default_rng(seed), 3, d, mode="theory").features
    assert np.allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-12)
    assert np.array_equal(X[:, :d], X[:, d:])
