import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from numerics.kernels import make_rng

from .scorers import (
    BaselineError,
    ItemKnnScorer,
    PopScorer,
    SPopScorer,
    itemknn_scores,
    itemknn_train,
    load_baseline,
    pop_scores,
    pop_train,
    save_baseline,
    spop_scores,
    train_baseline,
)


def random_sessions(n_items, n_sessions, seed=0):
    rng = make_rng(seed)
    return [
        [int(i) for i in rng.integers(1, n_items + 1, size=int(rng.integers(2, 7)))]
        for _ in range(n_sessions)
    ]


class PopTestCase(SimpleTestCase):
    def test_most_clicked_ranks_first(self):
        model = pop_train([[1, 1, 1, 2], [1, 2, 2, 1]], 2)
        assert_array_equal(model.counts, [5, 3])
        scores = pop_scores(model, [2])
        self.assertGreater(scores[0], scores[1])

    def test_total_is_click_count(self):
        sessions = random_sessions(10, 40)
        self.assertEqual(pop_train(sessions, 10).total, sum(len(s) for s in sessions))

    def test_argmax_is_most_frequent(self):
        sessions = random_sessions(25, 100, seed=1)
        clicks = [i for s in sessions for i in s]
        best = max(range(1, 26), key=lambda i: (clicks.count(i), -i))
        self.assertEqual(int(np.argmax(pop_scores(pop_train(sessions, 25), [1]))) + 1, best)

    def test_prefix_is_ignored(self):
        model = pop_train(random_sessions(8, 20), 8)
        batch = PopScorer(model).score_batch([[1], [2, 3], [8, 8, 8]])
        assert_array_equal(batch[0], batch[1])
        assert_array_equal(batch[1], batch[2])


class SPopTestCase(SimpleTestCase):
    def test_within_session_count_dominates(self):
        model = pop_train([[2, 2, 2, 2, 3], [1]], 3)
        scores = spop_scores(model, [1, 1, 2])
        self.assertGreater(scores[0], scores[1])

    def test_global_popularity_breaks_ties(self):
        model = pop_train([[2, 2, 2, 1]], 2)
        scores = spop_scores(model, [1, 2])
        self.assertGreater(scores[1], scores[0])

    def test_ranking_is_lexicographic(self):
        sessions = random_sessions(15, 60, seed=2)
        model = pop_train(sessions, 15)
        rng = make_rng(3)
        for _ in range(50):
            prefix = [int(i) for i in rng.integers(1, 16, size=int(rng.integers(1, 8)))]
            scores = spop_scores(model, prefix)
            by_score = sorted(range(1, 16), key=lambda i: (-scores[i - 1], i))
            by_key = sorted(range(1, 16), key=lambda i: (-prefix.count(i), -model.counts[i - 1], i))
            self.assertEqual(by_score, by_key)


class ItemKnnTestCase(SimpleTestCase):
    def test_hand_counts(self):
        model = itemknn_train([[1, 2], [1, 3]], 4)
        self.assertEqual(model.cooccurrence[0, 1], 1)
        self.assertEqual(model.support[0], 2)
        assert_array_equal(model.cooccurrence[3].toarray(), np.zeros((1, 4)))

    def test_repeat_clicks_count_once(self):
        model = itemknn_train([[1, 2, 1, 2, 1]], 2)
        self.assertEqual(model.cooccurrence[0, 1], 1)
        assert_array_equal(model.support, [1, 1])

    def test_counts_match_pairwise_loop(self):
        sessions = random_sessions(12, 80, seed=4)
        model = itemknn_train(sessions, 12)
        dense = model.cooccurrence.toarray()
        for i in range(1, 13):
            self.assertEqual(model.support[i - 1], sum(i in s for s in sessions))
            for j in range(1, 13):
                expected = 0 if i == j else sum(i in s and j in s for s in sessions)
                self.assertEqual(dense[i - 1, j - 1], expected)

    def test_no_cooccurrence_scores_zero(self):
        model = itemknn_train([[1], [2], [3]], 3, exclude_self=False)
        assert_array_equal(itemknn_scores(model, [2]), np.zeros(3))

    def test_unregularized_perfect_overlap_is_one(self):
        model = itemknn_train([[1, 2]] * 4, 2, lam=0.0)
        self.assertEqual(itemknn_scores(model, [1])[1], 1.0)

    def test_matches_direct_formula(self):
        sessions = random_sessions(10, 50, seed=5)
        model = itemknn_train(sessions, 10, lam=3.0, exclude_self=False)
        dense = model.cooccurrence.toarray()
        for last in range(1, 11):
            scores = itemknn_scores(model, [4, last])
            expected = [
                dense[last - 1, j] / (np.sqrt(model.support[last - 1] * model.support[j]) + 3.0)
                for j in range(10)
            ]
            assert_allclose(scores, expected, rtol=0, atol=1e-12)

    def test_similarity_is_symmetric(self):
        model = itemknn_train(random_sessions(9, 40, seed=6), 9)
        sim = model.similarity_rows(np.arange(1, 10))
        assert_array_equal(sim, sim.T)

    def test_last_item_excluded(self):
        model = itemknn_train([[1, 2], [1, 3]], 3)
        scores = itemknn_scores(model, [3, 1])
        self.assertEqual(scores[0], -np.inf)

    def test_zero_support_stays_finite(self):
        model = itemknn_train([[1, 2]], 3, exclude_self=False)
        self.assertTrue(np.all(np.isfinite(itemknn_scores(model, [3]))))

    def test_batch_equals_single(self):
        model = itemknn_train(random_sessions(10, 30, seed=7), 10)
        prefixes = [[1, 2], [5], [9, 9, 3]]
        batch = ItemKnnScorer(model).score_batch(prefixes)
        for row, prefix in zip(batch, prefixes):
            assert_array_equal(row, itemknn_scores(model, prefix))


class PersistenceTestCase(SimpleTestCase):
    def _round_trip(self, scorer):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_baseline(scorer, Path(tmp) / "baseline.tsv")
            return load_baseline(path)

    def test_pop_and_spop(self):
        sessions = random_sessions(7, 30, seed=8)
        for name, cls in (("pop", PopScorer), ("spop", SPopScorer)):
            scorer = train_baseline(name, sessions, 7)
            loaded = self._round_trip(scorer)
            self.assertIsInstance(loaded, cls)
            assert_array_equal(loaded.model.counts, scorer.model.counts)

    def test_itemknn(self):
        scorer = train_baseline("itemknn", random_sessions(11, 60, seed=9), 11, lam=5.0)
        loaded = self._round_trip(scorer)
        self.assertEqual(loaded.model.lam, 5.0)
        assert_array_equal(loaded.model.support, scorer.model.support)
        assert_array_equal(loaded.model.cooccurrence.toarray(), scorer.model.cooccurrence.toarray())
        prefixes = [[1], [4, 2], [11]]
        assert_array_equal(loaded.score_batch(prefixes), scorer.score_batch(prefixes))

    def test_unknown_name(self):
        with self.assertRaises(BaselineError):
            train_baseline("bpr", [[1, 2]], 2)

    def test_item_out_of_range(self):
        with self.assertRaises(BaselineError):
            pop_train([[1, 5]], 3)
