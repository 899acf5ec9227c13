import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, tag

from baselines.scorers import train_baseline
from dataset.pipeline import build_sessions, build_vocab, days, filter_corpus, filter_test_items, split_sequences, temporal_split
from dataset.synthetic import PurposeChain
from dataset.textio import read_examples, read_sessions, read_vocab
from evaluation.ranking import evaluate
from narm.checkpoint import load_checkpoint
from narm.scoring import NarmScorer
from training.config import ConfigError, TrainConfig
from training.loop import read_best_pointer, train

from .config import RunConfig

HAND_LOG = """session,ts,item
s1,0,a
s1,1000,b
s1,2000,c
s2,3600000,b
s2,3601000,c
s2,3602000,a
s2,3603000,b
s3,172800000,a
s3,172801000,c
s3,172802000,b
"""

SMALL_TRAIN = dict(
    embedding_dim=8,
    hidden_dim=12,
    epochs=2,
    batch_size=64,
    learning_rate=0.01,
    seed=4,
)


def run(name, *args, **options):
    """Call a command and return its tab-separated output rows."""
    out = StringIO()
    call_command(name, *args, stdout=out, stderr=StringIO(), **options)
    return [line.split("\t") for line in out.getvalue().splitlines() if "\t" in line]


def metrics(rows):
    return {row[1]: row[2] for row in rows if len(row) == 3 and row[0] != "scorer"}


def synthetic_run(out, sessions=300, n_items=20, **train_options):
    run("synthesize", output_dir=str(out), sessions=sessions, n_items=n_items, fanout=4, seed=2)
    run(
        "preprocess",
        input=str(Path(out) / "clicks.csv"),
        output_dir=str(out),
        holdout_days=3.0,
        min_item_support=1,
    )
    return run("train", output_dir=str(out), **{**SMALL_TRAIN, **train_options})


class RunConfigTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text):
        path = Path(self.tmp.name) / "run.env"
        path.write_text(text, encoding="utf-8")
        return path

    def test_defaults(self):
        config = RunConfig.load()
        self.assertEqual(config.output_dir, str(settings.NARM_OUTPUT_DIR))
        self.assertEqual(config.max_malformed_fraction, settings.NARM_MAX_MALFORMED_FRACTION)
        self.assertEqual((config.k, config.min_session_len, config.min_item_support), (20, 2, 5))
        self.assertEqual(config.embedding_dim, 50)

    def test_flag_beats_file_beats_default(self):
        path = self.write("# shared run\nEPOCHS=4\nbatch_size=16\nuse_bias=true\noffset_column=\n")
        config = RunConfig.load(path, {"epochs": 2, "batch_size": None})
        self.assertEqual((config.epochs, config.batch_size, config.use_bias), (2, 16, True))
        self.assertIsNone(config.offset_column)
        self.assertEqual(config.hidden_dim, 100)

    def test_unknown_key(self):
        with self.assertRaisesRegex(ConfigError, "epoch_count"):
            RunConfig.load(self.write("epoch_count=3\n"))

    def test_bad_value_names_key(self):
        with self.assertRaisesRegex(ConfigError, "epochs"):
            RunConfig.load(self.write("epochs=many\n"))
        with self.assertRaisesRegex(ConfigError, "use_bias"):
            RunConfig.load(self.write("use_bias=maybe\n"))

    def test_validation_runs_on_load(self):
        with self.assertRaises(ConfigError):
            RunConfig.load(overrides={"recent_fraction": 0.0})

    def test_recent_fraction_accepts_ratios(self):
        config = RunConfig.load(self.write("recent_fraction=1/64\n"))
        self.assertEqual(config.recent_fraction, "1/64")
        with self.assertRaisesRegex(ConfigError, "recent_fraction"):
            RunConfig.load(self.write("recent_fraction=half\n"))
        with self.assertRaisesRegex(ConfigError, "recent_fraction"):
            RunConfig.load(overrides={"recent_fraction": "3/2"})

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            RunConfig.load(Path(self.tmp.name) / "absent.env")

    def test_train_config_carries_training_fields(self):
        config = RunConfig.load(overrides={"epochs": 3, "mode": "local", "k": 5})
        expected = TrainConfig(epochs=3, mode="local")
        self.assertEqual(config.train_config(), expected)


class PreprocessCommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def preprocess(self, text=HAND_LOG, out="out", **options):
        source = self.root / "clicks.csv"
        source.write_text(text, encoding="utf-8")
        rows = run(
            "preprocess",
            input=str(source),
            output_dir=str(self.root / out),
            holdout_days=1.0,
            min_item_support=1,
            **options,
        )
        return rows, self.root / out

    def test_three_session_log_by_hand(self):
        rows, out = self.preprocess()
        stats = dict(rows[1:])
        self.assertEqual(rows[0], ["key", "value"])
        self.assertEqual(stats["clicks"], "10")
        self.assertEqual(stats["train_sessions"], "2")
        self.assertEqual(stats["test_sessions"], "1")
        self.assertEqual(stats["items"], "3")
        self.assertEqual(stats["avg_length"], "3.33")

        self.assertEqual((out / "train.tsv").read_text(), "1\t2\n1 2\t3\n2\t3\n2 3\t1\n2 3 1\t2\n")
        self.assertEqual((out / "test.tsv").read_text(), "1\t3\n1 3\t2\n")
        self.assertEqual((out / "vocab.tsv").read_text(), "item_id\tindex\na\t1\nb\t2\nc\t3\n")
        self.assertEqual((out / "train_sessions.tsv").read_text(), "s1\t0\t1 2 3\ns2\t3600000\t2 3 1 2\n")
        self.assertEqual((out / "test_sessions.tsv").read_text(), "s3\t172800000\t1 3 2\n")

    def test_rerun_is_byte_identical(self):
        _, first = self.preprocess(out="a")
        _, second = self.preprocess(out="b")
        for name in ("train.tsv", "test.tsv", "vocab.tsv", "train_sessions.tsv", "test_sessions.tsv", "stats.tsv"):
            self.assertEqual((first / name).read_bytes(), (second / name).read_bytes(), name)

    def test_unseen_test_items(self):
        log = HAND_LOG.replace("s3,172801000,c", "s3,172801000,z")
        _, out = self.preprocess(log, out="filtered")
        self.assertEqual((out / "test.tsv").read_text(), "1\t2\n")

        rows, out = self.preprocess(log, out="kept", filter_test_items=False)
        self.assertEqual((out / "test.tsv").read_text(), "1\t2\n")
        self.assertEqual(dict(rows[1:])["unscorable_test_cases"], "1")
        self.assertEqual((out / "test_sessions.tsv").read_text(), "s3\t172800000\t1 2\n")

    def test_missing_input_names_path(self):
        missing = self.root / "nowhere.csv"
        with self.assertRaises(CommandError) as cm:
            run("preprocess", input=str(missing), output_dir=str(self.root))
        self.assertEqual(cm.exception.returncode, 2)
        self.assertIn(str(missing), str(cm.exception))

    def test_unknown_config_key(self):
        path = self.root / "run.env"
        path.write_text("holdout=1\n", encoding="utf-8")
        with self.assertRaises(CommandError) as cm:
            run("preprocess", config=str(path))
        self.assertEqual(cm.exception.returncode, 2)

    def test_config_file_is_read(self):
        source = self.root / "clicks.csv"
        source.write_text(HAND_LOG, encoding="utf-8")
        path = self.root / "run.env"
        path.write_text(
            f"input={source}\noutput_dir={self.root / 'cfg'}\nholdout_days=1\nmin_item_support=1\n",
            encoding="utf-8",
        )
        run("preprocess", config=str(path))
        self.assertEqual((self.root / "cfg" / "test.tsv").read_text(), "1\t3\n1 3\t2\n")


class PipelineCommandTestCase(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.addClassCleanup(cls.tmp.cleanup)
        cls.out = Path(cls.tmp.name)
        cls.train_rows = synthetic_run(cls.out)
        cls.vocab = read_vocab(cls.out / "vocab.tsv")
        cls.test_examples = read_examples(cls.out / "test.tsv")

    def test_train_writes_log_and_checkpoints(self):
        model = self.out / "model"
        log = (model / "train_log.tsv").read_text().splitlines()
        self.assertEqual(len(log), 3)
        self.assertTrue((model / "checkpoint-epoch01.narm").is_file())
        self.assertTrue((model / "checkpoint-epoch02.narm").is_file())
        epoch, _ = read_best_pointer(model)
        self.assertEqual(self.train_rows[0][0], "best_epoch")
        self.assertEqual(self.train_rows[1][0], str(epoch))

    def test_evaluate_prints_report(self):
        values = metrics(run("evaluate", output_dir=str(self.out)))
        self.assertEqual(values["k"], "20")
        self.assertEqual(values["n_cases"], str(len(self.test_examples)))

    def test_evaluate_checkpoint_agrees_with_module(self):
        _, path = read_best_pointer(self.out / "model")
        report = evaluate(NarmScorer(load_checkpoint(path)), self.test_examples)
        values = metrics(run("evaluate", output_dir=str(self.out), checkpoint=str(path)))
        self.assertEqual(values["recall"], f"{float(report.recall_at_k):.6f}")
        self.assertEqual(values["mrr"], f"{float(report.mrr_at_k):.6f}")

    def test_k_is_respected(self):
        at_1 = metrics(run("evaluate", output_dir=str(self.out), k=1))
        at_20 = metrics(run("evaluate", output_dir=str(self.out), k=20))
        self.assertEqual(at_1["k"], "1")
        self.assertLessEqual(float(at_1["recall"]), float(at_20["recall"]))

    def test_pop_matches_module(self):
        sessions = [items for _, _, items in read_sessions(self.out / "train_sessions.tsv")]
        report = evaluate(train_baseline("pop", sessions, self.vocab.m), self.test_examples)
        rows = run("evaluate", output_dir=str(self.out), baseline="pop")
        self.assertEqual(rows[1][0], "pop")
        self.assertEqual(metrics(rows)["recall"], f"{float(report.recall_at_k):.6f}")
        self.assertTrue((self.out / "baselines" / "pop.tsv").is_file())

    def test_per_length_and_comparison_tables(self):
        rows = run(
            "evaluate",
            output_dir=str(self.out),
            baseline="spop",
            per_length=True,
            compare_baseline="pop",
        )
        self.assertIn(["length", "n_cases", "hits", "recall", "mrr"], rows)
        self.assertIn(["length", "n_cases", "pop_hits", "spop_hits", "improvement"], rows)
        self.assertTrue((self.out / "eval_spop_k20.tsv").is_file())

    def test_unknown_baseline(self):
        with self.assertRaises(CommandError) as cm:
            run("evaluate", output_dir=str(self.out), baseline="bpr")
        self.assertEqual(cm.exception.returncode, 2)

    def test_missing_checkpoint(self):
        with self.assertRaises(CommandError) as cm:
            run("evaluate", output_dir=str(self.out), checkpoint=str(self.out / "absent.narm"))
        self.assertEqual(cm.exception.returncode, 2)

    def test_predict_all_items(self):
        prefix = [self.vocab.item(i) for i in self.test_examples[0].prefix]
        rows = run("predict", *prefix, output_dir=str(self.out), k=self.vocab.m)
        self.assertEqual(rows[0], ["item_id", "probability"])
        self.assertEqual(len(rows) - 1, self.vocab.m)
        probs = [float(p) for _, p in rows[1:]]
        self.assertAlmostEqual(sum(probs), 1.0, delta=1e-6)
        self.assertEqual(probs, sorted(probs, reverse=True))
        self.assertEqual(rows, run("predict", *prefix, output_dir=str(self.out), k=self.vocab.m))

    def test_predict_top_one_is_argmax(self):
        example = self.test_examples[0]
        _, path = read_best_pointer(self.out / "model")
        probs = NarmScorer(load_checkpoint(path)).probabilities(example.prefix)
        prefix = [self.vocab.item(i) for i in example.prefix]
        rows = run("predict", *prefix, output_dir=str(self.out), k=1)
        self.assertEqual(rows[1][0], self.vocab.item(int(np.argmax(probs)) + 1))

    def test_predict_unknown_item(self):
        with self.assertRaises(CommandError) as cm:
            run("predict", "no-such-item", output_dir=str(self.out))
        self.assertEqual(cm.exception.returncode, 2)
        self.assertIn("no-such-item", str(cm.exception))

    def test_export_attention(self):
        run("export_attention", output_dir=str(self.out), limit=5, k=3)
        lines = (self.out / "attention.jsonl").read_text().splitlines()
        self.assertEqual(len(lines), min(5, len(self.test_examples)))
        trace = json.loads(lines[0])
        self.assertEqual(len(trace["items"]), len(trace["weights"]))
        self.assertEqual(len(trace["topk"]), 3)
        self.assertEqual(trace["items"], [self.vocab.item(i) for i in self.test_examples[0].prefix])
        self.assertEqual(trace["label"], self.vocab.item(self.test_examples[0].label))

        session_ids = [session_id for session_id, _, _ in read_sessions(self.out / "test_sessions.tsv")]
        traced = [json.loads(line)["session_id"] for line in lines]
        self.assertEqual(traced[0], session_ids[0])
        self.assertLessEqual(set(traced), set(session_ids))


class GradcheckCommandTestCase(SimpleTestCase):
    def test_passes_and_lists_every_block_once(self):
        rows = run("gradcheck", seeds=3)
        self.assertEqual(rows[0], ["block", "max_relative_error", "status"])
        names = [row[0] for row in rows[1:]]
        self.assertEqual(names, ["Emb", "Wz", "Uz", "Wr", "Ur", "W", "U", "A1", "A2", "v", "B"])
        self.assertTrue(all(row[2] == "ok" for row in rows[1:]))

    def test_corrupted_gradient_fails(self):
        with self.assertRaises(CommandError) as cm:
            run("gradcheck", seeds=2, corrupt="A1")
        self.assertEqual(cm.exception.returncode, 1)

    def test_bad_dims_are_usage_errors(self):
        with self.assertRaises(CommandError) as cm:
            run("gradcheck", hidden_dim=0)
        self.assertEqual(cm.exception.returncode, 2)


class DeterminismTestCase(SimpleTestCase):
    def test_identical_runs(self):
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            synthetic_run(a, sessions=150)
            synthetic_run(b, sessions=150)
            log_a = (Path(a) / "model" / "train_log.tsv").read_text().splitlines()
            log_b = (Path(b) / "model" / "train_log.tsv").read_text().splitlines()
            self.assertEqual([r.split("\t")[:4] for r in log_a], [r.split("\t")[:4] for r in log_b])
            for name in ("checkpoint-epoch01.narm", "checkpoint-epoch02.narm", "best"):
                self.assertEqual(
                    (Path(a) / "model" / name).read_bytes(), (Path(b) / "model" / name).read_bytes()
                )
            self.assertEqual(run("evaluate", output_dir=a), run("evaluate", output_dir=b))


@tag("slow")
class LearnabilityTestCase(SimpleTestCase):
    def test_beats_popularity_and_keeps_up_with_item_knn(self):
        with tempfile.TemporaryDirectory() as tmp:
            synthetic_run(
                tmp,
                sessions=10_000,
                n_items=100,
                embedding_dim=16,
                hidden_dim=32,
                epochs=10,
                batch_size=128,
                learning_rate=0.005,
            )
            narm = float(metrics(run("evaluate", output_dir=tmp))["recall"])
            pop = float(metrics(run("evaluate", output_dir=tmp, baseline="pop"))["recall"])
            knn = float(metrics(run("evaluate", output_dir=tmp, baseline="itemknn"))["recall"])
        self.assertGreaterEqual(narm, pop + 0.10)
        self.assertGreaterEqual(narm, knn - 0.02)


@tag("slow")
class AblationOrderingTestCase(SimpleTestCase):
    def test_hybrid_holds_its_own_on_purpose_sessions(self):
        for seed in range(3):
            chain = PurposeChain.random(100, fanout=5, seed=seed)
            corpus, _ = filter_corpus(build_sessions(chain.clicks(10_000, seed=seed + 100)), 2, 1)
            train_corpus, test_corpus = temporal_split(corpus, days(3))
            vocab = build_vocab(train_corpus)
            train_examples = split_sequences(train_corpus, vocab)
            test_examples = split_sequences(filter_test_items(test_corpus, vocab), vocab)

            recall = {}
            for mode in ("hybrid", "global", "local"):
                config = TrainConfig(
                    embedding_dim=16,
                    hidden_dim=32,
                    epochs=8,
                    batch_size=128,
                    learning_rate=0.005,
                    mode=mode,
                    seed=seed,
                )
                result = train(train_examples, config, n_items=vocab.m)
                recall[mode] = float(evaluate(NarmScorer(result.params), test_examples).recall_at_k)
            with self.subTest(seed=seed, **recall):
                self.assertGreaterEqual(recall["hybrid"], max(recall["global"], recall["local"]) - 0.01)
