import json
import tempfile
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from dataset.records import Example, ExampleSet, ItemVocab
from narm.network import attention_score, encode, local_feature
from narm.params import NetworkConfig, init_params
from narmrec.observability import opik_trace
from numerics.kernels import make_rng

from .attention import export_attention
from .ranking import (
    EvalReport,
    EvaluationError,
    compare_by_length,
    evaluate,
    merge_reports,
    mrr_at_k,
    rank_of,
    ranks_for,
    recall_at_k,
)


def sort_rank(scores, label):
    """Position of ``label`` after a stable sort by descending score."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    return int(np.nonzero(order == label - 1)[0][0]) + 1


class FixedScorer:
    """Scores every item by a lookup on the last prefix item."""

    name = "fixed"

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    @property
    def n_items(self):
        return self.table.shape[1]

    def score_batch(self, prefixes):
        return np.array([self.table[p[-1] - 1] for p in prefixes]).reshape(len(prefixes), self.n_items)


class RandomScorer:
    name = "random"

    def __init__(self, n_items, seed=0):
        self._n = n_items
        self.rng = make_rng(seed)

    @property
    def n_items(self):
        return self._n

    def score_batch(self, prefixes):
        return self.rng.random((len(prefixes), self._n))


def successor_examples(m, n, seed=0):
    """Examples whose label is always ``last + 1`` (wrapping), with random prefix lengths."""
    rng = make_rng(seed)
    examples = []
    for _ in range(n):
        prefix = tuple(int(i) for i in rng.integers(1, m + 1, size=int(rng.integers(1, 6))))
        examples.append(Example(prefix, prefix[-1] % m + 1))
    return ExampleSet(tuple(examples))


class RankTestCase(SimpleTestCase):
    def test_strict_maximum_ranks_first(self):
        self.assertEqual(rank_of(np.array([0.1, 0.9, 0.3]), 2), 1)

    def test_ties_go_to_smaller_index(self):
        scores = np.zeros(7)
        self.assertEqual(rank_of(scores, 1), 1)
        self.assertEqual(rank_of(scores, 7), 7)

    def test_matches_stable_sort(self):
        rng = make_rng(3)
        for _ in range(200):
            scores = rng.integers(0, 5, size=12).astype(float)
            label = int(rng.integers(1, 13))
            self.assertEqual(rank_of(scores, label), sort_rank(scores, label))

    def test_label_out_of_range(self):
        with self.assertRaises(EvaluationError):
            rank_of(np.zeros(3), 4)
        with self.assertRaises(EvaluationError):
            rank_of(np.zeros(3), 0)

    def test_vectorized_ranks_match_single(self):
        rng = make_rng(4)
        scores = rng.integers(0, 4, size=(50, 9)).astype(float)
        labels = rng.integers(1, 10, size=50)
        expected = [rank_of(s, int(y)) for s, y in zip(scores, labels)]
        assert_array_equal(ranks_for(scores, labels), expected)

    def test_monotone_transform_keeps_ranks(self):
        rng = make_rng(5)
        scores = rng.integers(-10, 10, size=(40, 15)).astype(float)
        labels = rng.integers(1, 16, size=40)
        assert_array_equal(ranks_for(scores, labels), ranks_for(2.0 * scores + 1.0, labels))


class MetricTestCase(SimpleTestCase):
    def test_recall(self):
        self.assertEqual(recall_at_k([1, 1, 1]), 1)
        self.assertEqual(recall_at_k([1, 21], 20), Fraction(1, 2))

    def test_recall_counts_exactly(self):
        ranks = make_rng(6).integers(1, 60, size=1000).tolist()
        self.assertEqual(recall_at_k(ranks, 20), Fraction(sum(r <= 20 for r in ranks), 1000))

    def test_mrr(self):
        self.assertEqual(mrr_at_k([1]), 1)
        self.assertEqual(mrr_at_k([21], 20), 0)
        self.assertEqual(mrr_at_k([1, 2, 4]), Fraction(7, 12))

    def test_metrics_grow_with_k(self):
        ranks = make_rng(7).integers(1, 40, size=300).tolist()
        for k in range(1, 40):
            self.assertLessEqual(recall_at_k(ranks, k), recall_at_k(ranks, k + 1))
            self.assertLessEqual(mrr_at_k(ranks, k), mrr_at_k(ranks, k + 1))

    def test_empty_and_bad_k(self):
        with self.assertRaises(EvaluationError):
            recall_at_k([])
        with self.assertRaises(EvaluationError):
            mrr_at_k([1], 0)

    def test_ten_thousand_cases_against_sort_oracle(self):
        rng = make_rng(8)
        scores = rng.integers(0, 30, size=(10_000, 50)).astype(float)
        labels = rng.integers(1, 51, size=10_000)
        ranks = ranks_for(scores, labels).tolist()
        oracle = [sort_rank(s, int(y)) for s, y in zip(scores, labels)]
        self.assertEqual(ranks, oracle)
        self.assertEqual(recall_at_k(ranks), Fraction(sum(r <= 20 for r in oracle), 10_000))
        self.assertEqual(
            mrr_at_k(ranks), sum((Fraction(1, r) for r in oracle if r <= 20), Fraction(0)) / 10_000
        )


class EvaluateTestCase(SimpleTestCase):
    def test_perfect_scorer(self):
        m = 9
        table = np.roll(np.eye(m), 1, axis=1)  # row a scores item a+1 highest
        report = evaluate(FixedScorer(table), successor_examples(m, 200))
        self.assertEqual(report.recall_at_k, 1)
        self.assertEqual(report.mrr_at_k, 1)
        for stats in report.per_length.values():
            self.assertEqual(stats.recall, 1)
        self.assertEqual(sum(s.n_cases for s in report.per_length.values()), report.n_cases)

    def test_random_scorer_hits_k_over_m(self):
        examples = successor_examples(1000, 10_000, seed=1)
        report = evaluate(RandomScorer(1000), examples, k=20)
        self.assertAlmostEqual(float(report.recall_at_k), 0.02, delta=0.005)

    def test_report_matches_case_loop(self):
        rng = make_rng(9)
        table = rng.integers(0, 3, size=(12, 12))
        examples = successor_examples(12, 150, seed=2)
        report = evaluate(FixedScorer(table), examples, k=5, chunk_size=7)
        ranks = [rank_of(table[ex.prefix[-1] - 1].astype(float), ex.label) for ex in examples]
        self.assertEqual(report.recall_at_k, recall_at_k(ranks, 5))
        self.assertEqual(report.mrr_at_k, mrr_at_k(ranks, 5))
        for length, stats in report.per_length.items():
            subset = [r for r, ex in zip(ranks, examples) if len(ex.prefix) == length]
            self.assertEqual(stats.n_cases, len(subset))
            self.assertEqual(stats.recall, recall_at_k(subset, 5))

    def test_union_equals_merge(self):
        table = make_rng(10).random((15, 15))
        examples = successor_examples(15, 120, seed=3)
        first, second = examples.subset(range(50)), examples.subset(range(50, 120))
        scorer = FixedScorer(table)
        merged = merge_reports(evaluate(scorer, first), evaluate(scorer, second))
        self.assertEqual(merged, evaluate(scorer, examples))

    def test_merge_needs_same_k(self):
        report = EvalReport.from_ranks([1, 2], [1, 1], k=5)
        with self.assertRaises(EvaluationError):
            merge_reports(report, EvalReport.from_ranks([1], [1], k=20))

    def test_empty_examples(self):
        with self.assertRaises(EvaluationError):
            evaluate(RandomScorer(3), ExampleSet())

    def test_compare_by_length(self):
        base = EvalReport.from_ranks([1, 30, 30, 2], [1, 1, 2, 2])
        other = EvalReport.from_ranks([1, 3, 4, 30], [1, 1, 2, 2])
        rows = compare_by_length(base, other)
        self.assertEqual([(r.length, r.base_hits, r.other_hits) for r in rows], [(1, 1, 2), (2, 1, 1)])
        self.assertEqual(rows[0].improvement, 1.0)
        self.assertEqual(rows[1].improvement, 0.0)

    def test_nested_in_a_trace_becomes_a_span(self):
        opened = []

        @contextmanager
        def record(kind, name, metadata):
            opened.append((kind, name))
            yield

        with mock.patch("narmrec.observability._opik_context", record):
            evaluate(RandomScorer(5), successor_examples(5, 10))
            with opik_trace("train"):
                evaluate(RandomScorer(5), successor_examples(5, 10))
        self.assertEqual(opened, [("trace", "evaluate"), ("trace", "train"), ("span", "evaluate")])

    def test_tsv_layout(self):
        text = EvalReport.from_ranks([1, 21, 2], [1, 2, 2]).to_tsv()
        lines = text.splitlines()
        self.assertEqual(lines[:4], ["k\t20", "n_cases\t3", "recall\t0.666667", "mrr\t0.500000"])
        self.assertEqual(lines[5], "length\tn_cases\thits\trecall\tmrr")
        self.assertEqual(lines[6], "1\t1\t1\t1.000000\t1.000000")
        self.assertEqual(lines[7], "2\t2\t1\t0.500000\t0.250000")


class AttentionExportTestCase(SimpleTestCase):
    config = NetworkConfig(n_items=6, embedding_dim=3, hidden_dim=4)
    vocab = ItemVocab(("a", "b", "c", "d", "e", "f"))

    def setUp(self):
        self.params = init_params(self.config, make_rng(0), weight_bound=0.5)
        self.examples = [
            Example((1,), 2, "s1"),
            Example((1, 2, 3), 4, "s1"),
            Example((5, 5, 6, 1), 2, "s2"),
        ]

    def _export(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "attention.jsonl"
            count = export_attention(self.params, self.vocab, self.examples, path, k=3)
            return count, [json.loads(line) for line in path.read_text().splitlines()]

    def test_one_trace_per_example(self):
        count, traces = self._export()
        self.assertEqual(count, 3)
        for ex, trace in zip(self.examples, traces):
            self.assertEqual(len(trace["weights"]), len(ex.prefix))
            self.assertEqual(trace["items"], [self.vocab.item(i) for i in ex.prefix])
            self.assertEqual(trace["label"], self.vocab.item(ex.label))
            self.assertEqual(len(trace["topk"]), 3)
            self.assertEqual(set(trace), {"session_id", "items", "weights", "topk", "label"})

    def test_weights_equal_local_feature(self):
        _, traces = self._export()
        for ex, trace in zip(self.examples, traces):
            _, alpha = local_feature(self.params, encode(self.params, ex.prefix))
            assert_allclose(trace["weights"], alpha, rtol=0, atol=1e-12)

    def test_single_item_weight_is_self_score(self):
        _, traces = self._export()
        h = encode(self.params, [1]).hidden[0]
        self.assertAlmostEqual(traces[0]["weights"][0], attention_score(self.params, h, h), delta=1e-12)

    def test_global_model_has_no_attention(self):
        config = NetworkConfig(n_items=6, embedding_dim=3, hidden_dim=4, mode="global")
        params = init_params(config, make_rng(0))
        with self.assertRaises(EvaluationError):
            export_attention(params, self.vocab, self.examples, "/dev/null")
