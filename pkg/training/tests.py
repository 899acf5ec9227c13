import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag
from numpy.testing import assert_array_equal

from dataset.pipeline import build_sessions, build_vocab, split_sequences
from dataset.records import Example, ExampleSet
from dataset.synthetic import MarkovChain
from evaluation.ranking import evaluate
from narm.checkpoint import load_checkpoint
from narm.network import Batch, forward, run_batch
from narm.params import GradientSet, NetworkConfig, init_params
from narm.scoring import NarmScorer
from numerics.kernels import make_rng

from .config import ConfigError, TrainConfig
from .loop import LOG_HEADER, make_batches, read_best_pointer, split_validation, train
from .optim import AdamState, TrainingError, adam_update, clip_by_norm

TINY = NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5)


def memorizable_examples(n=32, m=11):
    """Distinct prefixes with fixed labels, so a perfect fit exists."""
    return ExampleSet(
        tuple(
            Example((i % m + 1, (3 * i) % m + 1, i // m + 1), (7 * i + 2) % m + 1, f"s{i}")
            for i in range(n)
        )
    )


def small_config(**overrides):
    defaults = dict(
        embedding_dim=6,
        hidden_dim=8,
        batch_size=8,
        epochs=2,
        dropout_embed=0.0,
        dropout_repr=0.0,
        validation_fraction=0.25,
        learning_rate=0.01,
        seed=3,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


class TrainConfigTestCase(SimpleTestCase):
    def test_defaults(self):
        config = TrainConfig().validate()
        self.assertEqual((config.embedding_dim, config.hidden_dim, config.truncation), (50, 100, 19))
        self.assertEqual((config.batch_size, config.epochs, config.learning_rate), (512, 30, 0.001))
        self.assertEqual((config.dropout_embed, config.dropout_repr), (0.25, 0.5))

    def test_rejects_bad_values(self):
        for bad in (
            dict(batch_size=0),
            dict(dropout_embed=1.0),
            dict(validation_fraction=-0.1),
            dict(learning_rate=-1.0),
            dict(mode="bidirectional"),
            dict(decoder="sampled"),
            dict(clip_norm=-1.0),
        ):
            with self.subTest(**bad):
                with self.assertRaises(ConfigError):
                    TrainConfig(**bad).validate()

    def test_zero_learning_rate_is_allowed(self):
        TrainConfig(learning_rate=0.0).validate()


class AdamTestCase(SimpleTestCase):
    def _params(self, value=1.0):
        params = init_params(TINY, make_rng(0))
        for name in params:
            params.weights[name][...] = value
        return params

    def _grads(self, params, fill):
        return GradientSet({name: np.full_like(params[name], fill) for name in params})

    def test_zero_gradient_changes_nothing(self):
        params = self._params()
        before = params.copy()
        state = AdamState.zeros_like(params)
        adam_update(params, self._grads(params, 0.0), state, 0.001)
        self.assertEqual(state.t, 1)
        for name in params:
            assert_array_equal(params[name], before[name])

    def test_first_step_moves_by_learning_rate(self):
        params = self._params()
        state = AdamState.zeros_like(params)
        adam_update(params, self._grads(params, 3.0), state, 0.01)
        for name in params:
            np.testing.assert_allclose(params[name], 1.0 - 0.01, atol=1e-8)

    def test_quadratic_bowl(self):
        params = self._params()
        state = AdamState.zeros_like(params)

        def norm():
            return float(np.sqrt(sum(np.sum(params[n] ** 2) for n in params)))

        start = norm()
        for _ in range(100):
            grads = self._grads(params, 0.0)
            for name in params:
                grads.blocks[name][...] = params[name]
            adam_update(params, grads, state, 0.05)
        self.assertLess(norm() / start, 0.1)

    def test_non_finite_gradient_names_block(self):
        params = self._params()
        grads = self._grads(params, 0.0)
        grads.blocks["A2"][0, 0] = np.nan
        with self.assertRaisesRegex(TrainingError, "A2"):
            adam_update(params, grads, AdamState.zeros_like(params), 0.001)

    def test_clip_by_norm(self):
        params = self._params()
        grads = self._grads(params, 10.0)
        clip_by_norm(grads, 1.0)
        self.assertAlmostEqual(grads.global_norm(), 1.0, places=12)


class BatchingTestCase(SimpleTestCase):
    def test_batch_sizes(self):
        examples = memorizable_examples(5)
        batches = make_batches(examples, 2, make_rng(0))
        self.assertEqual([b.size for b in batches], [2, 2, 1])
        self.assertEqual(sorted(int(y) for b in batches for y in b.labels), sorted(ex.label for ex in examples))

    def test_equal_lengths_need_no_padding(self):
        for batch in make_batches(memorizable_examples(12), 4, make_rng(1)):
            self.assertTrue(np.all(batch.items > 0))

    def test_shuffle_is_seeded(self):
        a = make_batches(memorizable_examples(20), 6, make_rng(5))
        b = make_batches(memorizable_examples(20), 6, make_rng(5))
        for x, y in zip(a, b):
            assert_array_equal(x.items, y.items)

    def test_padded_batch_loss_is_mean_of_unpadded_losses(self):
        params = init_params(TINY, make_rng(2), weight_bound=0.5)
        prefixes = [(1,), (2, 3, 4), (5, 6), (7, 8, 9, 10, 11)]
        labels = [2, 5, 7, 1]
        cache = run_batch(params, Batch.pad(prefixes, labels))
        expected = np.mean([forward(params, p, y).loss for p, y in zip(prefixes, labels)])
        self.assertAlmostEqual(cache.mean_loss, float(expected), delta=1e-10)

    def test_validation_split(self):
        train_set, val_set = split_validation(memorizable_examples(20), 0.1, make_rng(0))
        self.assertEqual((len(train_set), len(val_set)), (18, 2))
        with self.assertRaises(TrainingError):
            split_validation(memorizable_examples(4), 0.1, make_rng(0))
        with self.assertRaises(TrainingError):
            split_validation(memorizable_examples(1), 0.9, make_rng(0))


class TrainTestCase(SimpleTestCase):
    def test_writes_log_checkpoints_and_pointer(self):
        with tempfile.TemporaryDirectory() as tmp:
            result = train(memorizable_examples(), small_config(), n_items=11, output_dir=tmp)
            out = Path(tmp)
            lines = (out / "train_log.tsv").read_text().splitlines()
            self.assertEqual(lines[0].split("\t"), list(LOG_HEADER))
            self.assertEqual(len(lines), 3)
            self.assertTrue((out / "checkpoint-epoch01.narm").is_file())
            self.assertTrue((out / "checkpoint-epoch02.narm").is_file())
            epoch, path = read_best_pointer(out)
            self.assertEqual(epoch, result.best_epoch)
            self.assertEqual(
                (out / "best").read_text().splitlines(),
                [f"epoch\t{epoch}", f"checkpoint\t{path.name}", "selection\tval_recall@20"],
            )
            best = load_checkpoint(path)
            for name in best:
                assert_array_equal(best[name], result.params[name])

    def test_same_seed_same_run(self):
        a = train(memorizable_examples(), small_config(epochs=3), n_items=11)
        b = train(memorizable_examples(), small_config(epochs=3), n_items=11)
        self.assertEqual([r.row()[:4] for r in a.log], [r.row()[:4] for r in b.log])
        for name in a.params:
            assert_array_equal(a.params[name], b.params[name])

    def test_zero_learning_rate_keeps_initialization(self):
        config = small_config(learning_rate=0.0, epochs=3)
        result = train(memorizable_examples(), config, n_items=11)
        initial = init_params(config.network(11), make_rng(config.seed), embed_bound=config.embed_init_bound)
        for name in initial:
            assert_array_equal(result.params[name], initial[name])

    def test_selected_epoch_reproduces_logged_metric(self):
        config = small_config(epochs=4)
        examples = memorizable_examples()
        result = train(examples, config, n_items=11)
        best = max(r.val_recall for r in result.log)
        first_best = next(r.epoch for r in result.log if r.val_recall == best)
        self.assertEqual(result.best_epoch, first_best)

        rng = make_rng(config.seed)
        init_params(config.network(11), rng, embed_bound=config.embed_init_bound)
        _, val_set = split_validation(examples, config.validation_fraction, rng)
        report = evaluate(NarmScorer(result.params), val_set)
        self.assertEqual(float(report.recall_at_k), result.best.val_recall)
        self.assertEqual(float(report.mrr_at_k), result.best.val_mrr)

    def test_overfits_small_set(self):
        config = small_config(
            embedding_dim=10, hidden_dim=20, batch_size=32, epochs=500, learning_rate=0.02,
            validation_fraction=0.1,
        )
        result = train(memorizable_examples(), config, n_items=11)
        self.assertLess(result.log[-1].mean_loss, 0.1)

    def test_empty_examples(self):
        with self.assertRaises(TrainingError):
            train(ExampleSet(), small_config())


@tag("slow")
class MarkovTrainingTestCase(SimpleTestCase):
    def test_loss_falls_over_first_epochs(self):
        chain = MarkovChain.random(60, fanout=4, seed=11)
        corpus = build_sessions(chain.clicks(1500, seed=12))
        vocab = build_vocab(corpus)
        examples = split_sequences(corpus, vocab)
        config = TrainConfig(
            embedding_dim=16, hidden_dim=32, batch_size=128, epochs=6, learning_rate=0.005, seed=1
        )
        losses = [r.mean_loss for r in train(examples, config, n_items=vocab.m).log]
        falling = sum(b <= a for a, b in zip(losses, losses[1:]))
        self.assertGreaterEqual(falling, 4)
