import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.stats import chisquare

from multicalib.core import (
    DeterministicPredictor,
    EnsemblePredictor,
    GroupFamily,
    HypothesisClass,
    LevelGrid,
    Prediction,
    Sample,
    TabularDistribution,
    bin_of,
    exact_expectation,
    load_distribution,
    load_predictor,
    predictor_from_dict,
    predictor_to_dict,
    sample,
    simplex_grid,
    simplex_grid_size,
)
from multicalib.exceptions import ContractViolation, SchemaError, ZeroMassGroup

from .helpers import bundled


class LevelGridTests(SimpleTestCase):
    def test_bins_are_half_open_and_one_falls_in_the_last_bin(self):
        grid = LevelGrid(0.25)
        self.assertEqual(grid.size, 5)
        self.assertEqual(grid.index([0.0, 0.2499, 0.25, 0.5, 1.0]).tolist(), [0, 0, 1, 2, 4])

    def test_bin_of_a_prediction(self):
        grid = LevelGrid(0.25)
        self.assertEqual(bin_of(Prediction([0.3, 0.7]), grid), (1, 2))

    def test_grid_points_fall_in_their_own_bin(self):
        for lam in (0.1, 0.2, 0.25, 0.5):
            grid = LevelGrid(lam)
            np.testing.assert_array_equal(grid.index(grid.values), np.arange(grid.size))

    def test_binning_a_bin_edge_is_idempotent(self):
        grid = LevelGrid(0.25)
        for p in np.random.default_rng(16).dirichlet([1.0, 1.0], size=50):
            bins = bin_of(p, grid)
            self.assertEqual(bin_of(grid.values[list(bins)], grid), bins)

    def test_top_edge_of_a_coarse_grid(self):
        self.assertEqual(bin_of([1.0, 0.0], LevelGrid(0.5)), (2, 0))

    def test_uneven_width_keeps_a_partial_last_bin(self):
        self.assertEqual(LevelGrid(0.3).size, 5)

    def test_rejects_width_outside_unit_interval(self):
        with self.assertRaises(ContractViolation):
            LevelGrid(0)
        with self.assertRaises(ContractViolation):
            LevelGrid(1.5)


class PredictorTests(SimpleTestCase):
    def test_rows_must_be_probability_vectors(self):
        with self.assertRaises(ContractViolation):
            Prediction([0.6, 0.6])
        with self.assertRaises(ContractViolation):
            Prediction([1.2, -0.2])
        with self.assertRaises(ContractViolation):
            Prediction([1.0])

    def test_tables_are_read_only(self):
        h = DeterministicPredictor.uniform(3, 2)
        with self.assertRaises(ValueError):
            h.table[0, 0, 0] = 1.0

    def test_with_point_returns_a_new_predictor(self):
        h = DeterministicPredictor.uniform(3, 2)
        g = h.with_point(1, [0.25, 0.75])
        self.assertEqual(g(1), Prediction([0.25, 0.75]))
        self.assertEqual(h(1), Prediction([0.5, 0.5]))

    def test_ensemble_members_share_a_signature(self):
        with self.assertRaises(ContractViolation):
            EnsemblePredictor([DeterministicPredictor.uniform(3, 2), DeterministicPredictor.uniform(4, 2)])

    def test_ensemble_file_loads_as_uniform_mixture(self):
        members = [DeterministicPredictor.constant(2, [p, 1 - p]) for p in (0.25, 0.75)]
        data = predictor_to_dict(EnsemblePredictor(members))
        loaded = predictor_from_dict(json.loads(json.dumps(data)))
        self.assertIsInstance(loaded, EnsemblePredictor)
        self.assertEqual(len(loaded), 2)
        np.testing.assert_allclose(loaded.weights, [0.5, 0.5])

    def test_predictor_file_with_wrong_k_reports_the_field(self):
        with self.assertRaises(SchemaError) as ctx:
            predictor_from_dict({"k": 3, "table": [[0.5, 0.5]]})
        self.assertEqual(ctx.exception.field, "k")

    def test_bundled_bayes_predictor_loads(self):
        from multicalib.experiments import BUNDLED_DIR

        h = load_predictor(BUNDLED_DIR / "bayes_realizable_8.json")
        self.assertEqual(h.signature, (1, 2))
        self.assertEqual(h.domain_size, 8)


class SimplexGridTests(SimpleTestCase):
    def test_binary_grid_is_ascending_in_the_first_coordinate(self):
        points = simplex_grid(2, 4)
        np.testing.assert_allclose(points[:, 0], [0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(points.sum(axis=1), 1.0)

    def test_size_matches_enumeration(self):
        self.assertEqual(simplex_grid_size(3, 4), 15)
        self.assertEqual(len(simplex_grid(3, 4)), 15)

    def test_hypothesis_class_finds_its_members(self):
        tables = np.array([[[[0.5, 0.5]], [[1.0, 0.0]]], [[[0.0, 1.0]], [[0.5, 0.5]]]])
        hypotheses = HypothesisClass(tables)
        self.assertEqual(hypotheses.index_of(hypotheses[1]), 1)
        self.assertIsNone(hypotheses.index_of(DeterministicPredictor.uniform(2, 2)))


class GroupFamilyTests(SimpleTestCase):
    def test_masks(self):
        groups = GroupFamily([[0, 2], [1]], 3)
        self.assertEqual(groups.masks.tolist(), [[True, False, True], [False, True, False]])
        self.assertEqual(groups.u, 2)

    def test_rejects_empty_groups_and_points_outside_the_domain(self):
        with self.assertRaises(ContractViolation):
            GroupFamily([[0], []], 3)
        with self.assertRaises(ContractViolation):
            GroupFamily([[0, 3]], 3)


class TabularDistributionTests(SimpleTestCase):
    def test_support_is_an_exact_probability_table(self):
        dist = bundled("realizable_8.json")
        self.assertAlmostEqual(dist.support.probs.sum(), 1.0, places=12)
        self.assertTrue((dist.support.probs > 0).all())
        # x=4 and x=5 have deterministic labels
        self.assertEqual(len(dist.support), 14)

    def test_exact_expectation_of_the_first_class(self):
        dist = bundled("realizable_8.json")
        value = dist.exact_expectation(lambda z: 1.0 if z.y == 0 else 0.0)
        self.assertAlmostEqual(value, dist.label_mean[:, 0].mean())

    def test_rejects_px_that_does_not_sum_to_one(self):
        with self.assertRaises(ContractViolation):
            TabularDistribution([0.5, 0.4], [[0.5, 0.5], [0.5, 0.5]])

    def test_group_law_gives_membership_and_label_means(self):
        dist = bundled("remark_3.json")
        self.assertFalse(dist.deterministic_groups)
        np.testing.assert_allclose(dist.membership[1], [0.8, 0.2])
        np.testing.assert_allclose(dist.label_mean[:, 0], [0.1, 0.8, 0.6])

    def test_condition_on_renormalises(self):
        dist = bundled("conditional_6.json")
        conditional = dist.condition_on(dist.groups.masks[0])
        np.testing.assert_allclose(conditional.px, [0.25, 0.25, 0.25, 0.25, 0, 0])

    def test_condition_on_a_null_group(self):
        dist = TabularDistribution([0.5, 0.5, 0.0], [[1, 0], [0, 1], [0.5, 0.5]], groups=[[2]])
        with self.assertRaises(ZeroMassGroup):
            dist.condition_on(dist.groups.masks[0])

    def test_sampling_is_reproducible_from_the_seed(self):
        dist = bundled("realizable_8.json")
        first = dist.sample_rows(np.random.default_rng(11), 50)
        second = dist.sample_rows(np.random.default_rng(11), 50)
        np.testing.assert_array_equal(first, second)

    def test_empirical_law_counts_rows(self):
        dist = bundled("competitive_3.json")
        law = dist.empirical([0, 0, 1, 3])
        self.assertAlmostEqual(law.probs[0], 0.5)
        self.assertAlmostEqual(law.probs.sum(), 1.0)

    def test_random_realizable_bayes_matches_label_law(self):
        rng = np.random.default_rng(0)
        dist = TabularDistribution.random_realizable(rng, 5, 3, [[0, 1, 2], [2, 3, 4]])
        np.testing.assert_allclose(dist.bayes_predictor().table[:, 0, :], dist.label_mean)

    def test_dict_round_trip_keeps_the_law(self):
        dist = bundled("remark_3.json")
        again = TabularDistribution.from_dict(json.loads(json.dumps(dist.to_dict())))
        np.testing.assert_allclose(again.support.probs, dist.support.probs)

class SamplingTests(SimpleTestCase):
    def test_point_mass(self):
        dist = TabularDistribution([1.0], [[0.0, 1.0]])
        rng = np.random.default_rng(12)
        for _ in range(10):
            self.assertEqual(sample(dist, rng), Sample(0, (1,), 1))

    def test_uniform_pair_frequencies(self):
        dist = TabularDistribution([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]])
        draws = 100_000
        rows = dist.sample_rows(np.random.default_rng(13), draws)
        frequencies = np.bincount(dist.support.xs[rows], minlength=2) / draws
        np.testing.assert_allclose(frequencies, 0.5, atol=0.01)

    def test_draws_match_the_support_law(self):
        dist = bundled("realizable_8.json")
        draws = 20_000
        observed = np.bincount(dist.sample_rows(np.random.default_rng(14), draws), minlength=len(dist.support))
        expected = dist.support.probs / dist.support.probs.sum() * draws
        self.assertGreater(chisquare(observed, expected).pvalue, 1e-3)


class ExactExpectationTests(SimpleTestCase):
    def setUp(self):
        self.dist = bundled("realizable_8.json")

    def test_constant_and_indicator(self):
        self.assertAlmostEqual(exact_expectation(self.dist, lambda z: 1.0), 1.0, places=12)
        uniform = TabularDistribution([0.25] * 4, [[0.5, 0.5]] * 4)
        self.assertAlmostEqual(exact_expectation(uniform, lambda z: float(z.x == 0)), 0.25, places=12)

    def test_linearity(self):
        def f(z):
            return z.x / 7

        def g(z):
            return float(z.y == 0)

        combined = exact_expectation(self.dist, lambda z: 2 * f(z) - 3 * g(z))
        separate = 2 * exact_expectation(self.dist, f) - 3 * exact_expectation(self.dist, g)
        self.assertAlmostEqual(combined, separate, places=12)

    def test_agrees_with_monte_carlo(self):
        draws = 400_000
        rows = self.dist.sample_rows(np.random.default_rng(15), draws)
        estimate = float((self.dist.support.ys[rows] == 0).mean())
        exact = exact_expectation(self.dist, lambda z: float(z.y == 0))
        self.assertLessEqual(abs(estimate - exact), 3 * math.sqrt(1 / draws))



class DistributionFileTests(SimpleTestCase):
    def write(self, text):
        directory = tempfile.mkdtemp()
        path = Path(directory) / "dist.json"
        path.write_text(text)
        return path

    def test_invalid_json_reports_the_line(self):
        path = self.write('{\n  "px": [0.5, 0.5],\n  "label_law": [[1, 0],, [0, 1]]\n}\n')
        with self.assertRaises(SchemaError) as ctx:
            load_distribution(path)
        self.assertEqual(ctx.exception.line, 3)

    def test_bad_px_reports_field_and_line(self):
        path = self.write('{\n  "k": 2,\n  "px": [0.5, 0.6],\n  "label_law": [[1, 0], [0, 1]]\n}\n')
        with self.assertRaises(SchemaError) as ctx:
            load_distribution(path)
        self.assertEqual(ctx.exception.field, "px")
        self.assertEqual(ctx.exception.line, 3)

    def test_declared_k_must_match_tables(self):
        path = self.write('{\n  "px": [1.0],\n  "k": 3,\n  "label_law": [[1, 0]]\n}\n')
        with self.assertRaises(SchemaError) as ctx:
            load_distribution(path)
        self.assertEqual(ctx.exception.field, "k")

    def test_missing_px(self):
        path = self.write('{"label_law": [[1, 0]]}')
        with self.assertRaises(SchemaError) as ctx:
            load_distribution(path)
        self.assertEqual(ctx.exception.field, "px")
