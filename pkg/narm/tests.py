import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from numerics.kernels import ShapeError, make_rng, softmax

from .checkpoint import CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from .gradcheck import check_gradients
from .network import (
    Batch,
    IndexRangeError,
    attention_score,
    backprop,
    backward,
    decode,
    encode,
    forward,
    gru_step,
    local_feature,
    loss,
    run_batch,
    session_representation,
)
from .params import NarmParams, NetworkConfig, init_params
from .scoring import NarmScorer, top_k

TINY = NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5)


def random_params(config=TINY, seed=0, bound=0.5):
    return init_params(config, make_rng(seed), embed_bound=bound, weight_bound=bound)


def zero_params(config=TINY):
    return NarmParams(config, {k: np.zeros(s) for k, s in config.param_shapes().items()})


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_gru(params, x, h):
    """Plain-loop evaluation of the gate equations for one column."""
    w = {k: v.tolist() for k, v in params.weights.items()}
    hdim, ddim = len(h), len(x)

    def affine(wx, uh, xv, hv, i):
        return sum(wx[i][k] * xv[k] for k in range(ddim)) + sum(uh[i][k] * hv[k] for k in range(hdim))

    z = [_sig(affine(w["Wz"], w["Uz"], x, h, i)) for i in range(hdim)]
    r = [_sig(affine(w["Wr"], w["Ur"], x, h, i)) for i in range(hdim)]
    rh = [r[i] * h[i] for i in range(hdim)]
    cand = [math.tanh(affine(w["W"], w["U"], x, rh, i)) for i in range(hdim)]
    return [(1 - z[i]) * h[i] + z[i] * cand[i] for i in range(hdim)]


class GruStepTestCase(SimpleTestCase):
    def test_zero_weights_halve_previous_state(self):
        params = zero_params()
        h_prev = np.arange(1.0, 6.0)[:, None]
        h = gru_step(params, np.ones((4, 1)), h_prev)
        assert_array_equal(h, 0.5 * h_prev)

    def test_zero_state_and_weights_stay_zero(self):
        h = gru_step(zero_params(), np.ones((4, 1)), np.zeros((5, 1)))
        assert_array_equal(h, np.zeros((5, 1)))

    def test_matches_scalar_loop(self):
        config = NetworkConfig(n_items=3, embedding_dim=2, hidden_dim=3)
        params = random_params(config, seed=7)
        rng = make_rng(8)
        x, h_prev = rng.normal(size=(2, 1)), rng.normal(size=(3, 1))
        expected = scalar_gru(params, x[:, 0].tolist(), h_prev[:, 0].tolist())
        assert_allclose(gru_step(params, x, h_prev)[:, 0], expected, rtol=0, atol=1e-12)

    def test_shape_mismatch_raises(self):
        with self.assertRaises(ShapeError):
            gru_step(zero_params(), np.ones((3, 1)), np.zeros((5, 1)))


class EncodeTestCase(SimpleTestCase):
    def test_single_item_prefix_has_one_state(self):
        self.assertEqual(encode(random_params(), [3]).length, 1)

    def test_matches_manual_unrolling(self):
        params = random_params(seed=2)
        prefix = [4, 1, 9, 4]
        h = np.zeros((5, 1))
        for item in prefix:
            h = gru_step(params, params["Emb"][item][:, None], h)
        assert_array_equal(encode(params, prefix).hidden[-1], h)

    def test_extending_a_prefix_reuses_its_states(self):
        params = random_params(seed=3)
        short = encode(params, [2, 5, 7])
        longer = encode(params, [2, 5, 7, 1])
        for a, b in zip(short.hidden, longer.hidden):
            assert_array_equal(a, b)

    def test_index_out_of_range(self):
        with self.assertRaises(IndexRangeError):
            encode(random_params(), [1, 12])
        with self.assertRaises(IndexRangeError):
            encode(random_params(), [0])

    def test_prefix_longer_than_truncation_rejected(self):
        with self.assertRaises(ValueError):
            encode(random_params(), [1] * 20)


class AttentionTestCase(SimpleTestCase):
    def test_zero_v_scores_zero(self):
        params = random_params().replace("v", np.zeros((5, 1)))
        rng = make_rng(1)
        self.assertEqual(attention_score(params, rng.normal(size=(5, 1)), rng.normal(size=(5, 1))), 0.0)

    def test_zero_transforms_give_half_hidden_dim(self):
        params = zero_params().replace("v", np.ones((5, 1)))
        score = attention_score(params, np.ones((5, 1)), -np.ones((5, 1)))
        self.assertAlmostEqual(score, 2.5, places=15)

    def test_matches_scalar_formula(self):
        config = NetworkConfig(n_items=3, embedding_dim=2, hidden_dim=4)
        params = random_params(config, seed=11)
        rng = make_rng(12)
        h_t, h_j = rng.normal(size=(4, 1)), rng.normal(size=(4, 1))
        a1, a2, v = params["A1"], params["A2"], params["v"][:, 0]
        expected = sum(
            v[i] * _sig(sum(a1[i, k] * h_t[k, 0] + a2[i, k] * h_j[k, 0] for k in range(4)))
            for i in range(4)
        )
        self.assertAlmostEqual(attention_score(params, h_t, h_j), expected, delta=1e-12)

    def test_single_state_weight_is_self_score(self):
        params = random_params(seed=4)
        enc = encode(params, [6])
        c_local, alpha = local_feature(params, enc)
        self.assertEqual(len(alpha), 1)
        self.assertAlmostEqual(alpha[0], attention_score(params, enc.hidden[0], enc.hidden[0]), delta=1e-15)
        assert_allclose(c_local, alpha[0] * enc.hidden[0], atol=1e-15)

    def test_local_feature_is_explicit_weighted_sum(self):
        params = random_params(seed=5)
        enc = encode(params, [3, 8, 2])
        c_local, alpha = local_feature(params, enc)
        h = enc.hidden
        weights = [attention_score(params, h[-1], h[j]) for j in range(3)]
        assert_allclose(alpha, weights, atol=1e-12)
        assert_allclose(c_local, weights[0] * h[0] + weights[1] * h[1] + weights[2] * h[2], atol=1e-12)

    def test_softmax_attention_weights_sum_to_one(self):
        config = NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5, attention_softmax=True)
        params = random_params(config, seed=6)
        _, alpha = local_feature(params, encode(params, [1, 2, 3, 4]))
        self.assertAlmostEqual(sum(alpha), 1.0, delta=1e-12)
        self.assertTrue(all(a > 0 for a in alpha))


class RepresentationAndDecodeTestCase(SimpleTestCase):
    def test_zero_v_gives_zero_local_half(self):
        params = random_params(seed=9).replace("v", np.zeros((5, 1)))
        enc = session_representation(params, encode(params, [5]))
        assert_array_equal(enc.c, np.vstack([enc.hidden[0], np.zeros((5, 1))]))

    def test_representation_is_concatenation(self):
        params = random_params(seed=10)
        enc = session_representation(params, encode(params, [1, 2, 3, 4, 5]))
        c_local, _ = local_feature(params, enc)
        self.assertEqual(enc.c.shape, (10, 1))
        assert_array_equal(enc.c[:5], enc.hidden[-1])
        assert_allclose(enc.c[5:], c_local, atol=1e-15)
        self.assertEqual(len(enc.attention_weights), 5)

    def test_zero_decoder_is_uniform(self):
        params = random_params().replace("B", np.zeros((4, 10)))
        pred = decode(params, np.ones((10, 1)))
        assert_allclose(pred.probs, np.full(11, 1 / 11), atol=1e-15)

    def test_aligned_embedding_wins(self):
        config = NetworkConfig(n_items=2, embedding_dim=2, hidden_dim=1)
        params = zero_params(config).replace("B", np.array([[1.0, 0.0], [0.0, 1.0]]))
        params.weights["Emb"][1] = [0.0, 1.0]
        params.weights["Emb"][2] = [1.0, 0.0]
        pred = decode(params, np.array([[3.0], [0.0]]))
        self.assertGreater(pred.probs[1], pred.probs[0])

    def test_matches_explicit_dot_products(self):
        config = NetworkConfig(n_items=7, embedding_dim=4, hidden_dim=5)
        params = random_params(config, seed=13)
        c = make_rng(14).normal(size=(10, 1))
        scores = np.array([params["Emb"][i] @ params["B"] @ c[:, 0] for i in range(1, 8)])
        expected = np.exp(scores) / np.exp(scores).sum()
        pred = decode(params, c)
        assert_allclose(pred.scores, scores, atol=1e-12)
        assert_allclose(pred.probs, expected, atol=1e-12)

    def test_probabilities_normalized_over_random_points(self):
        config = NetworkConfig(n_items=30, embedding_dim=4, hidden_dim=5)
        rng = make_rng(99)
        for seed in range(1000):
            params = random_params(config, seed=seed, bound=float(rng.uniform(0.05, 2.0)))
            prefix = [int(i) for i in rng.integers(1, 31, size=int(rng.integers(1, 8)))]
            probs = forward(params, prefix, 1).prediction.probs
            self.assertTrue(np.all(probs > 0))
            self.assertAlmostEqual(float(probs.sum()), 1.0, delta=1e-9)

    def test_score_shift_leaves_probabilities(self):
        pred = forward(random_params(seed=15), [1, 2], 3).prediction
        shifted = softmax((pred.scores + 123.0)[:, None], axis=0)[:, 0]
        assert_allclose(shifted, pred.probs, atol=1e-9)


class LossAndForwardTestCase(SimpleTestCase):
    def test_uniform_prediction_loss_is_log_m(self):
        params = random_params().replace("B", np.zeros((4, 10)))
        self.assertAlmostEqual(forward(params, [1, 2], 5).loss, math.log(11), delta=1e-12)

    def test_certain_prediction_has_zero_loss(self):
        pred = decode(zero_params(), np.zeros((10, 1)))
        certain = type(pred)(scores=pred.scores, probs=np.eye(11)[3])
        self.assertEqual(loss(certain, 4), 0.0)

    def test_zero_probability_stays_finite(self):
        pred = decode(zero_params(), np.zeros((10, 1)))
        impossible = type(pred)(scores=pred.scores, probs=np.eye(11)[0])
        self.assertTrue(math.isfinite(loss(impossible, 2)))

    def test_label_out_of_range(self):
        with self.assertRaises(IndexRangeError):
            forward(random_params(), [1], 12)

    def test_loss_matches_component_composition(self):
        params = random_params(seed=16)
        enc = session_representation(params, encode(params, [7, 3, 3]))
        probs = decode(params, enc.c).probs
        self.assertAlmostEqual(forward(params, [7, 3, 3], 10).loss, -math.log(probs[9]), delta=1e-12)

    def test_eval_is_deterministic(self):
        params = random_params(seed=17)
        a, b = forward(params, [1, 4, 2], 6), forward(params, [1, 4, 2], 6)
        assert_array_equal(a.prediction.probs, b.prediction.probs)
        self.assertEqual(a.loss, b.loss)

    def test_train_mode_without_dropout_equals_eval(self):
        params = random_params(seed=18)
        ev = forward(params, [1, 4, 2], 6)
        tr = forward(params, [1, 4, 2], 6, "train", make_rng(0), keep_embed=1.0, keep_repr=1.0)
        assert_array_equal(ev.prediction.probs, tr.prediction.probs)

    def test_train_mode_needs_rng(self):
        with self.assertRaises(ValueError):
            forward(random_params(), [1], 2, "train")


class BackwardTestCase(SimpleTestCase):
    """Analytic gradients against central differences."""

    def assertGradientsMatch(self, config, seeds=range(20), **kwargs):
        report = check_gradients(config, seeds, **kwargs)
        self.assertEqual(set(report.errors), set(config.param_shapes()))
        for name, err in report.errors.items():
            self.assertLessEqual(err, 1e-5, f"{name}: relative error {err:.3e}")

    def test_hybrid_bilinear_twenty_seeds(self):
        self.assertGradientsMatch(TINY)

    def test_global_and_local_modes(self):
        for mode in ("global", "local"):
            with self.subTest(mode=mode):
                self.assertGradientsMatch(
                    NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5, mode=mode), range(3)
                )

    def test_full_decoder_with_biases(self):
        config = NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5, decoder="full", use_bias=True)
        self.assertGradientsMatch(config, range(3))

    def test_softmax_attention(self):
        config = NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5, attention_softmax=True)
        self.assertGradientsMatch(config, range(3), prefix_len=4)

    def test_through_dropout_masks(self):
        self.assertGradientsMatch(TINY, range(3), dropout=True)

    def test_corrupted_gradient_is_caught(self):
        report = check_gradients(TINY, range(1), corrupt="U")
        self.assertFalse(report.passed)
        self.assertGreater(report.errors["U"], 1e-5)

    def test_padding_row_gets_no_gradient(self):
        params = random_params(seed=21)
        fwd = forward(params, [1, 2, 3], 4)
        assert_array_equal(backward(params, [1, 2, 3], 4, fwd)["Emb"][0], np.zeros(4))

    def test_zero_v_silences_attention_transforms(self):
        params = random_params(seed=22).replace("v", np.zeros((5, 1)))
        grads = backward(params, [5, 6, 7], 8, forward(params, [5, 6, 7], 8))
        assert_array_equal(grads["A1"], np.zeros((5, 5)))
        assert_array_equal(grads["A2"], np.zeros((5, 5)))


class BatchTestCase(SimpleTestCase):
    prefixes = [[1, 2, 3], [4], [5, 6], [7, 8, 9]]
    labels = [4, 5, 7, 10]

    def test_batch_loss_is_mean_of_example_losses(self):
        params = random_params(seed=30)
        cache = run_batch(params, Batch.pad(self.prefixes, self.labels))
        singles = [forward(params, p, y).loss for p, y in zip(self.prefixes, self.labels)]
        self.assertAlmostEqual(cache.mean_loss, float(np.mean(singles)), delta=1e-10)

    def test_extra_padding_changes_nothing(self):
        for attention_softmax in (False, True):
            with self.subTest(attention_softmax=attention_softmax):
                config = NetworkConfig(
                    n_items=11, embedding_dim=4, hidden_dim=5, attention_softmax=attention_softmax
                )
                params = random_params(config, seed=31)
                tight = run_batch(params, Batch.pad(self.prefixes, self.labels))
                loose = run_batch(params, Batch.pad(self.prefixes, self.labels, width=7))
                self.assertAlmostEqual(tight.mean_loss, loose.mean_loss, delta=1e-10)
                g_tight, g_loose = backprop(params, tight), backprop(params, loose)
                for name in params:
                    assert_allclose(g_tight[name], g_loose[name], rtol=0, atol=1e-10)

    def test_batch_gradient_is_mean_of_example_gradients(self):
        params = random_params(seed=32)
        batch = backprop(params, run_batch(params, Batch.pad(self.prefixes, self.labels)))
        singles = [
            backward(params, p, y, forward(params, p, y)) for p, y in zip(self.prefixes, self.labels)
        ]
        for name in params:
            mean = sum(g[name] for g in singles) / len(singles)
            assert_allclose(batch[name], mean, rtol=0, atol=1e-10)


class AblationTestCase(SimpleTestCase):
    def test_global_only_agrees_with_hybrid_without_local_path(self):
        hybrid = random_params(seed=40)
        hybrid = hybrid.replace("v", np.zeros((5, 1)))
        b = hybrid["B"].copy()
        b[:, 5:] = 0.0
        hybrid = hybrid.replace("B", b)

        config = NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5, mode="global")
        weights = {k: hybrid[k] for k in config.param_shapes() if k != "B"}
        weights["B"] = b[:, :5].copy()
        global_only = NarmParams(config, weights)

        for prefix in ([1], [2, 9, 4], [11, 10, 3, 3, 5]):
            assert_allclose(
                forward(hybrid, prefix, 1).prediction.probs,
                forward(global_only, prefix, 1).prediction.probs,
                rtol=0,
                atol=1e-12,
            )


class CheckpointTestCase(SimpleTestCase):
    def test_round_trip_is_bit_exact(self):
        for config in (TINY, NetworkConfig(n_items=6, embedding_dim=3, hidden_dim=2, decoder="full", use_bias=True)):
            params = random_params(config, seed=50)
            with tempfile.TemporaryDirectory() as tmp:
                path = save_checkpoint(params, Path(tmp) / "model.narm")
                loaded = load_checkpoint(path)
            self.assertEqual(loaded.config, params.config)
            for name in params:
                self.assertEqual(loaded[name].tobytes(), params[name].tobytes())
            assert_array_equal(
                forward(loaded, [1, 2], 3).prediction.probs, forward(params, [1, 2], 3).prediction.probs
            )

    def test_bad_magic_rejected(self):
        with self.assertRaises(CheckpointError):
            from_bytes(b"XXXX" + to_bytes(random_params())[4:])

    def test_truncated_file_rejected(self):
        with self.assertRaises(CheckpointError):
            from_bytes(to_bytes(random_params())[:100])

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_checkpoint("/nonexistent/model.narm")


class ScoringTestCase(SimpleTestCase):
    def test_top_k_over_all_items_sums_to_one(self):
        ranked = top_k(random_params(seed=60), [3, 1], 11)
        self.assertEqual(len(ranked), 11)
        self.assertAlmostEqual(sum(p for _, p in ranked), 1.0, delta=1e-6)
        probs = [p for _, p in ranked]
        self.assertEqual(probs, sorted(probs, reverse=True))

    def test_top_one_is_decode_argmax(self):
        params = random_params(seed=61)
        pred = forward(params, [4, 4, 2], 1).prediction
        self.assertEqual(top_k(params, [4, 4, 2], 1)[0][0], int(np.argmax(pred.probs)) + 1)

    def test_chunking_does_not_change_scores(self):
        params = random_params(seed=62)
        prefixes = [[1], [2, 3], [4, 5, 6], [7], [8, 9]]
        assert_allclose(
            NarmScorer(params, chunk_size=2).score_batch(prefixes),
            NarmScorer(params).score_batch(prefixes),
            rtol=0,
            atol=1e-12,
        )

    def test_long_prefix_is_truncated(self):
        config = NetworkConfig(n_items=11, embedding_dim=4, hidden_dim=5, truncation=3)
        params = random_params(config, seed=63)
        scorer = NarmScorer(params)
        assert_array_equal(scorer.score_batch([[9, 8, 1, 2, 3]]), scorer.score_batch([[1, 2, 3]]))
