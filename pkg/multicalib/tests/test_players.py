import math

import numpy as np
from django.test import SimpleTestCase, tag

from multicalib.core import DeterministicPredictor, GroupFamily, LevelGrid, TabularDistribution
from multicalib.dynamics import compute_regret, run_nrbr
from multicalib.exceptions import ContractViolation, MissingReference, SizeCapExceeded
from multicalib.objectives import build_multicalib_problem
from multicalib.players import (
    EMPIRICAL,
    EXACT,
    NOISY_MAX,
    WEAK,
    AdversaryOracle,
    HedgeState,
    HypothesisLearner,
    OracleConfig,
    PointLazyLearner,
    RandomizedPredictor,
    agnostic_oracle,
    best_response,
    hedge_distribution,
    hedge_init,
    hedge_update,
    lazy_update,
    point_payoffs,
    weak_oracle,
)

from .helpers import bundled, random_predictor, realizable_problem


def expected_payoffs(objective_set, q, response, problem):
    """Worst-label expected loss of a randomized response at every point."""
    k = problem.k
    payoffs = point_payoffs(objective_set, q, response.points.reshape(-1, k), problem)
    return np.array(
        [
            (response.probs[x] @ payoffs[x, x * k:(x + 1) * k, :]).max()
            for x in range(problem.domain_size)
        ]
    )


class HedgeTests(SimpleTestCase):
    def test_first_update_on_two_actions(self):
        state = hedge_init(2, 100)
        eta = math.sqrt(8 * math.log(2) / 100)
        self.assertAlmostEqual(state.eta, eta)
        hedge_update(state, [1.0, 0.0])
        p = hedge_distribution(state)
        self.assertAlmostEqual(p[0] / p[1], math.exp(-eta / 2))

    def test_single_action_uses_log_two(self):
        self.assertAlmostEqual(HedgeState(1, 8).eta, math.sqrt(8 * math.log(2) / 8))

    def test_distribution_stays_normalised_after_many_rounds(self):
        state = HedgeState(5, 10_000)
        rng = np.random.default_rng(0)
        for _ in range(2_000):
            state.update(rng.uniform(-1, 1, size=5))
        self.assertAlmostEqual(state.distribution().sum(), 1.0)
        self.assertTrue(np.isfinite(state.log_weights).all())

    def test_sparse_update_matches_the_dense_one(self):
        dense, sparse = HedgeState(4, 50), HedgeState(4, 50)
        dense.update([0.0, 0.5, 0.0, -1.0])
        sparse.update_sparse([1, 3], [0.5, -1.0])
        np.testing.assert_allclose(dense.distribution(), sparse.distribution())

    def test_rejects_bad_losses(self):
        state = HedgeState(3, 10)
        with self.assertRaises(ContractViolation):
            state.update([0.0, 1.5, 0.0])
        with self.assertRaises(ContractViolation):
            state.update([0.0, 0.0])

    def test_checkpoint_restores_the_distribution(self):
        state = HedgeState(3, 10)
        state.update([1.0, -1.0, 0.0])
        restored = HedgeState.from_dict(state.to_dict())
        np.testing.assert_array_equal(restored.distribution(), state.distribution())
        self.assertEqual(restored.rounds, 1)

    def test_regret_against_a_fixed_stream(self):
        rounds, n = 10_000, 6
        rng = np.random.default_rng(1)
        losses = rng.uniform(-1, 1, size=(rounds, n))
        losses[:, 2] -= 0.2
        losses = np.clip(losses, -1, 1)
        state = HedgeState(n, rounds)
        realized = 0.0
        for loss in losses:
            realized += state.distribution() @ loss
            state.update(loss)
        regret = realized - losses.sum(axis=0).min()
        self.assertLessEqual(regret, 2 * math.sqrt(rounds * math.log(n)))


class LazyLearnerTests(SimpleTestCase):
    def test_starts_uniform(self):
        learner = PointLazyLearner(3, 2)
        np.testing.assert_allclose(learner.predictor().table, 0.5)

    def test_moves_away_from_penalised_coordinates(self):
        learner = PointLazyLearner(2, 2, horizon=10)
        learner.update(np.array([[[1.0, 0.0]], [[0.0, 0.0]]]))
        self.assertLess(learner.predict(0).rows[0, 0], 0.5)
        self.assertAlmostEqual(learner.predict(1).rows[0, 0], 0.5)
        self.assertEqual(learner.touched, {0})

    def test_rejects_coefficients_of_the_wrong_shape(self):
        with self.assertRaises(ContractViolation):
            PointLazyLearner(2, 2).update(np.zeros((2, 2)))

    def test_checkpoint_keeps_touched_points_only(self):
        learner = PointLazyLearner(3, 2, horizon=10)
        learner.update(np.array([[[0.0, 0.0]], [[0.5, -0.5]], [[0.0, 0.0]]]))
        data = learner.to_dict()
        self.assertEqual(list(data["states"]), ["1"])
        restored = PointLazyLearner.from_dict(data)
        np.testing.assert_array_equal(restored.predictor().table, learner.predictor().table)

    def test_lazy_update_feeds_the_linear_loss(self):
        problem = realizable_problem()
        learner = PointLazyLearner(problem.domain_size, 2, horizon=10)
        h = learner.predictor()
        q = np.zeros(problem.size)
        q[0] = 1.0
        lazy_update(learner, q, h, problem)
        self.assertEqual(learner.rounds, 1)


class HypothesisLearnerTests(SimpleTestCase):
    def test_draws_follow_the_generator(self):
        tables = np.array([[[[0.5, 0.5]]], [[[1.0, 0.0]]], [[[0.0, 1.0]]]])
        first = HypothesisLearner(tables, 10)
        second = HypothesisLearner(tables, 10)
        draws = [first.draw(np.random.default_rng(4)) for _ in range(3)]
        self.assertEqual(draws, [second.draw(np.random.default_rng(4)) for _ in range(3)])

    def test_update_shifts_weight_to_the_better_hypothesis(self):
        tables = np.array([[[[0.5, 0.5]]], [[[1.0, 0.0]]]])
        learner = HypothesisLearner(tables, 10)
        learner.update([1.0, 0.0])
        self.assertGreater(learner.distribution()[1], 0.5)


class BestResponseTests(SimpleTestCase):
    def test_binary_response_meets_the_resolution_bound(self):
        dist = bundled("competitive_3.json")
        problem = build_multicalib_problem(dist, dist.groups, LevelGrid(0.25))
        objective_set = problem.objective_sets[0]
        rng = np.random.default_rng(2)
        resolution = 20
        for _ in range(100):
            q = rng.dirichlet(np.full(problem.size, 0.2))
            response = best_response(q, resolution, problem)
            worst = expected_payoffs(objective_set, q, response, problem)
            self.assertLessEqual(worst.max(), 1 / resolution + 1e-9)
            np.testing.assert_allclose(worst, response.values, atol=1e-9)

    def test_three_label_response_meets_the_resolution_bound(self):
        rng = np.random.default_rng(3)
        dist = TabularDistribution.random_realizable(rng, 3, 3, [[0, 1, 2], [0, 1]])
        problem = build_multicalib_problem(dist, dist.groups, LevelGrid(0.5))
        objective_set = problem.objective_sets[0]
        resolution = 4
        for _ in range(10):
            q = rng.dirichlet(np.full(problem.size, 0.3))
            response = best_response(q, resolution, problem)
            self.assertLessEqual(expected_payoffs(objective_set, q, response, problem).max(), 1 / resolution + 1e-9)

    def test_zero_mixture_gives_a_pure_response(self):
        problem = realizable_problem()
        response = best_response(np.zeros(problem.size), 10, problem)
        self.assertTrue(response.pure)
        self.assertIsInstance(response.realize(np.random.default_rng(0)), DeterministicPredictor)

    def test_realized_predictions_lie_on_the_grid(self):
        problem = realizable_problem()
        q = np.random.default_rng(5).dirichlet(np.ones(problem.size))
        h = best_response(q, 8, problem).realize(np.random.default_rng(6))
        np.testing.assert_allclose(h.table * 8, np.round(h.table * 8), atol=1e-9)

    def test_refuses_grids_above_the_cap(self):
        problem = realizable_problem()
        with self.assertRaises(SizeCapExceeded):
            best_response(np.zeros(problem.size), 100, problem, candidate_cap=50)

    def test_mean_of_a_randomized_predictor(self):
        points = np.array([[[0.0, 1.0], [1.0, 0.0]]])
        response = RandomizedPredictor(points, [[0.25, 0.75]], [0.0])
        np.testing.assert_allclose(response.mean().table[0, 0], [0.75, 0.25])
        self.assertFalse(response.pure)


class OracleTests(SimpleTestCase):
    def setUp(self):
        self.problem = realizable_problem()
        self.objective_set = self.problem.objective_sets[0]
        self.h = random_predictor(np.random.default_rng(9), self.problem.domain_size)

    def test_exact_oracle_returns_the_worst_objective(self):
        answer = agnostic_oracle(self.h, self.objective_set, self.problem.distributions, OracleConfig(EXACT))
        losses = self.objective_set.exact_losses(self.h, self.problem.supports)
        self.assertAlmostEqual(answer.value, losses.max())
        self.assertAlmostEqual(losses[answer.index], losses.max())

    def test_approximate_oracle_meets_its_guarantee(self):
        cfg = OracleConfig(EXACT, epsilon=0.01, c=0.5)
        answer = agnostic_oracle(self.h, self.objective_set, self.problem.distributions, cfg)
        top = self.objective_set.exact_losses(self.h, self.problem.supports).max()
        self.assertGreaterEqual(answer.value, 0.5 * top - 0.01)
        self.assertLessEqual(answer.value, top)

    def test_empirical_oracle_needs_a_generator(self):
        with self.assertRaises(ContractViolation):
            agnostic_oracle(self.h, self.objective_set, self.problem.distributions, OracleConfig(EMPIRICAL))

    def test_empirical_oracle_is_usually_within_epsilon(self):
        cfg = OracleConfig(EMPIRICAL, epsilon=0.1, delta=0.05)
        losses = self.objective_set.exact_losses(self.h, self.problem.supports)
        rng = np.random.default_rng(10)
        close = 0
        for _ in range(200):
            answer = agnostic_oracle(self.h, self.objective_set, self.problem.distributions, cfg, rng)
            close += losses[answer.index] >= losses.max() - 0.1
        self.assertGreaterEqual(close, 190)

    def test_weak_oracle_below_threshold(self):
        cfg = OracleConfig(WEAK, epsilon=0.1, reference=0.0)
        bayes = self.problem.distributions[0].bayes_predictor()
        answer = weak_oracle(bayes, self.objective_set, self.problem.distributions, cfg)
        self.assertTrue(answer.below_threshold)

    def test_weak_oracle_needs_a_reference(self):
        with self.assertRaises(MissingReference):
            AdversaryOracle(self.problem, 0, OracleConfig(WEAK), np.random.default_rng(0))

    def test_counters(self):
        cfg = OracleConfig(EMPIRICAL, n_samples=30)
        oracle = AdversaryOracle(self.problem, 0, cfg, np.random.default_rng(0))
        oracle(self.h)
        oracle(self.h)
        self.assertEqual(oracle.calls, 2)
        self.assertEqual(oracle.samples, 60)

    def test_noisy_max_draws_its_buffer_once(self):
        cfg = OracleConfig(NOISY_MAX, buffer_size=200, sigma=0.01)
        oracle = AdversaryOracle(self.problem, 0, cfg, np.random.default_rng(0), rounds=5)
        for _ in range(5):
            answer = oracle(self.h)
        self.assertEqual(oracle.samples, 200)
        self.assertEqual(oracle.calls, 5)
        self.assertIsNotNone(answer.index)

    def test_unknown_mode(self):
        with self.assertRaises(ContractViolation):
            OracleConfig("psychic")

    def test_default_sample_count(self):
        cfg = OracleConfig(EMPIRICAL, epsilon=0.1, delta=0.05)
        self.assertEqual(cfg.sample_count(200), math.ceil(8 * 0.1**-2 * math.log(4 * 200 / 0.05)))


@tag("slow")
class AdaptiveQueryTests(SimpleTestCase):
    def test_noisy_max_tracks_the_exact_argmax_during_best_response_dynamics(self):
        problem = realizable_problem()
        objective_set = problem.objective_sets[0]
        iterates, transcript = run_nrbr(problem, 200, OracleConfig(NOISY_MAX, epsilon=0.1), seed=16)
        close = 0
        for h, record in zip(iterates, transcript.records):
            losses = objective_set.exact_losses(h, problem.supports)
            close += losses[record.adversary[0]["index"]] >= losses.max() - 0.1
        self.assertGreaterEqual(close, 180)

    def test_lazy_learner_weak_regret_on_a_single_group(self):
        dist = bundled("realizable_8.json")
        one_group = TabularDistribution(dist.px, dist.label_mean)
        problem = build_multicalib_problem(one_group, GroupFamily.whole(8), LevelGrid(0.25))
        rounds = 4000
        _, transcript = run_nrbr(problem, rounds, OracleConfig(EXACT), seed=17)
        regret = compute_regret(transcript, "learner", "exact", weak=True, reference=0.0)
        self.assertLessEqual(regret / rounds, 2 * math.sqrt(math.log(2) / rounds))
