import tempfile
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from numerics.kernels import make_rng

from .pipeline import (
    as_fraction,
    build_sessions,
    build_vocab,
    corpus_stats,
    days,
    filter_corpus,
    filter_test_items,
    load_clicks,
    split_sequences,
    take_recent_fraction,
    temporal_split,
)
from .records import (
    ClickEvent,
    ClickSchema,
    EmptyCorpusError,
    ItemVocab,
    MalformedInputError,
    Session,
    SessionCorpus,
    SplitError,
    UnknownItemError,
)
from .synthetic import MarkovChain, PurposeChain, item_id, write_clicks
from .textio import (
    read_examples,
    read_session_examples,
    read_sessions,
    read_vocab,
    write_examples,
    write_sessions,
    write_vocab,
)


def corpus(*sessions, start_step=1000):
    return SessionCorpus(
        tuple(Session(f"s{n}", n * start_step, tuple(items)) for n, items in enumerate(sessions))
    )


class FileTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def write(self, text, name="clicks.csv"):
        path = self.root / name
        path.write_text(text, encoding="utf-8")
        return path


class LoadClicksTestCase(FileTestCase):
    def test_rows_in_file_order(self):
        log = load_clicks(self.write("session,ts,item\ns1,10,a\ns2,5,b\ns1,7,c\n"))
        self.assertEqual(
            log.events,
            [ClickEvent("s1", 10, "a"), ClickEvent("s2", 5, "b"), ClickEvent("s1", 7, "c")],
        )
        self.assertEqual(log.malformed, 0)

    def test_header_only(self):
        log = load_clicks(self.write("session,ts,item\n"))
        self.assertEqual((len(log), log.malformed), (0, 0))

    def test_bad_timestamp_is_counted(self):
        log = load_clicks(self.write("session,ts,item\ns1,abc,a\n"))
        self.assertEqual((len(log), log.malformed), (0, 1))

    def test_timestamp_beyond_int64_is_counted(self):
        log = load_clicks(self.write("session,ts,item\ns1,1,a\ns1,99999999999999999999,b\n"))
        self.assertEqual(log.events, [ClickEvent("s1", 1, "a")])
        self.assertEqual(log.malformed, 1)

        schema = ClickSchema(timestamp_format="s")
        log = load_clicks(self.write("session,ts,item\ns1,2,a\ns1,9999999999999999,b\n"), schema)
        self.assertEqual((len(log), log.malformed), (1, 1))

    def test_empty_ids_are_counted(self):
        log = load_clicks(self.write("session,ts,item\ns1,1,a\n,2,b\ns2,3,\n"))
        self.assertEqual((len(log), log.malformed), (1, 2))

    def test_malformed_share_aborts(self):
        path = self.write("session,ts,item\ns1,x,a\ns1,y,b\ns1,3,c\n")
        with self.assertRaises(MalformedInputError):
            load_clicks(path, max_malformed_fraction=0.5)
        self.assertEqual(len(load_clicks(path, max_malformed_fraction=0.7)), 1)

    def test_missing_file_and_columns(self):
        with self.assertRaises(FileNotFoundError):
            load_clicks(self.root / "absent.csv")
        with self.assertRaisesRegex(MalformedInputError, "item"):
            load_clicks(self.write("session,ts,product\ns1,1,a\n"))
        with self.assertRaises(MalformedInputError):
            load_clicks(self.write(""))

    def test_tab_delimited_seconds(self):
        schema = ClickSchema(delimiter="\t", timestamp_format="s")
        log = load_clicks(self.write("session\tts\titem\ns1\t2\ta\n"), schema)
        self.assertEqual(log.events, [ClickEvent("s1", 2000, "a")])

    def test_iso_timestamps(self):
        schema = ClickSchema(timestamp_format="iso")
        log = load_clicks(self.write("session,ts,item\ns1,1970-01-01T00:00:01.500Z,a\n"), schema)
        self.assertEqual(log.events, [ClickEvent("s1", 1500, "a")])

    def test_dates_with_offsets(self):
        schema = ClickSchema(
            session_column="sessionId",
            timestamp_column="eventdate",
            item_column="itemId",
            timestamp_format="date",
            offset_column="timeframe",
        )
        text = "sessionId,eventdate,itemId,timeframe\n1,1970-01-02,81766,500\n1,1970-01-02,31331,x\n"
        log = load_clicks(self.write(text), schema)
        self.assertEqual(log.events, [ClickEvent("1", 86_400_000 + 500, "81766")])
        self.assertEqual(log.malformed, 1)


class BuildSessionsTestCase(SimpleTestCase):
    def test_sorted_by_timestamp(self):
        result = build_sessions([ClickEvent("s1", 10, "a"), ClickEvent("s1", 5, "b")])
        self.assertEqual(result.sessions, (Session("s1", 5, ("b", "a")),))

    def test_ties_keep_input_order(self):
        result = build_sessions([ClickEvent("s1", 5, "x"), ClickEvent("s1", 5, "y"), ClickEvent("s1", 5, "z")])
        self.assertEqual(result[0].items, ("x", "y", "z"))

    def test_single_event(self):
        self.assertEqual(len(build_sessions([ClickEvent("s", 1, "a")])[0]), 1)

    def test_matches_group_by(self):
        rng = make_rng(0)
        events = [
            ClickEvent(f"s{rng.integers(50)}", int(rng.integers(10_000)), f"i{rng.integers(30)}")
            for _ in range(1000)
        ]
        groups = {}
        for position, ev in enumerate(events):
            groups.setdefault(ev.session_id, []).append((ev.timestamp, position, ev.item_id))
        result = build_sessions(events).by_id()
        self.assertEqual(set(result), set(groups))
        for session_id, clicks in groups.items():
            self.assertEqual(result[session_id].items, tuple(i for _, _, i in sorted(clicks)))
        starts = [s.start for s in build_sessions(events)]
        self.assertEqual(starts, sorted(starts))


class FilterTestCase(SimpleTestCase):
    def test_everything_filtered(self):
        data = corpus(*[["a", x] for x in "bcdef"])
        with self.assertRaises(EmptyCorpusError):
            filter_corpus(data)

    def test_clean_corpus_unchanged(self):
        data = corpus(*[["a", "b", "c"]] * 5)
        filtered, vocab = filter_corpus(data)
        self.assertEqual(filtered, data)
        self.assertEqual(vocab.items, ("a", "b", "c"))

    def test_length_one_session_dropped(self):
        data = corpus(*([["a", "b"]] * 10 + [["a"]]))
        filtered, _ = filter_corpus(data)
        self.assertEqual(len(filtered), 10)

    def test_support_then_length_single_pass(self):
        # c has support 5 before the pass and 4 after [c, d] is dropped.
        data = corpus(*([["a", "b"]] * 5 + [["a", "c"]] * 4 + [["c", "d"]]))
        filtered, _ = filter_corpus(data)
        self.assertEqual(filtered.item_counts()["c"], 4)
        for s in filtered:
            self.assertGreaterEqual(len(s), 2)

        fixed, vocab = filter_corpus(data, fixpoint=True)
        self.assertNotIn("c", vocab)
        self.assertEqual(len(fixed), 5)

    def test_invariants_hold(self):
        rng = make_rng(1)
        data = corpus(*[[f"i{rng.integers(15)}" for _ in range(rng.integers(1, 6))] for _ in range(300)])
        filtered, vocab = filter_corpus(data, 2, 5)
        for s in filtered:
            self.assertGreaterEqual(len(s), 2)
            for item in s.items:
                self.assertGreaterEqual(data.item_counts()[item], 5)
        self.assertEqual(set(vocab.items), set(filtered.item_counts()))

    def test_empty_input(self):
        with self.assertRaises(EmptyCorpusError):
            filter_corpus(SessionCorpus())


class TemporalSplitTestCase(SimpleTestCase):
    def test_last_day_is_test(self):
        data = corpus(["a", "b"], ["b", "c"], ["c", "a"], start_step=days(1))
        train, test = temporal_split(data, days(1))
        self.assertEqual([s.session_id for s in train], ["s0", "s1"])
        self.assertEqual([s.session_id for s in test], ["s2"])

    def test_same_start_leaves_no_train(self):
        data = corpus(["a", "b"], ["b", "c"], start_step=0)
        with self.assertRaises(SplitError):
            temporal_split(data, days(1))

    def test_bad_holdout(self):
        with self.assertRaises(SplitError):
            temporal_split(corpus(["a", "b"]), 0)

    def test_matches_threshold_filter(self):
        rng = make_rng(2)
        starts = np.sort(rng.integers(0, days(10), size=100))
        data = SessionCorpus(tuple(Session(f"s{n}", int(t), ("a", "b")) for n, t in enumerate(starts)))
        train, test = temporal_split(data, days(1))
        threshold = int(starts.max()) - days(1)
        self.assertEqual(len(train), int((starts <= threshold).sum()))
        self.assertEqual(len(test), int((starts > threshold).sum()))
        self.assertFalse({s.session_id for s in train} & {s.session_id for s in test})
        self.assertEqual(len(train) + len(test), len(data))


class TestItemsAndFractionTestCase(SimpleTestCase):
    def test_unknown_items_removed(self):
        vocab = ItemVocab(("a", "b"))
        result = filter_test_items(corpus(["a", "z", "b"], ["z", "a"]), vocab)
        self.assertEqual([s.items for s in result], [("a", "b")])

    def test_known_items_untouched(self):
        data = corpus(["a", "b"], ["b", "a", "b"])
        self.assertEqual(filter_test_items(data, ItemVocab(("a", "b"))), data)

    def test_membership_oracle(self):
        rng = make_rng(3)
        data = corpus(*[[f"i{rng.integers(20)}" for _ in range(rng.integers(2, 7))] for _ in range(200)])
        vocab = ItemVocab(tuple(f"i{k}" for k in range(0, 20, 2)))
        expected = [
            tuple(i for i in s.items if i in vocab.items)
            for s in data
            if sum(i in vocab.items for i in s.items) >= 2
        ]
        self.assertEqual([s.items for s in filter_test_items(data, vocab)], expected)

    def test_fraction_one_is_identity(self):
        data = corpus(["a", "b"], ["c", "d"])
        self.assertEqual(take_recent_fraction(data, 1), data)

    def test_one_sixty_fourth(self):
        data = corpus(*[["a", "b"]] * 64)
        result = take_recent_fraction(data, Fraction(1, 64))
        self.assertEqual([s.session_id for s in result], ["s63"])

    def test_quarter_matches_sort_and_slice(self):
        rng = make_rng(4)
        starts = rng.permutation(1000)
        data = SessionCorpus(tuple(Session(f"s{n}", int(t), ("a", "b")) for n, t in enumerate(starts)))
        result = take_recent_fraction(data, "1/4")
        expected = sorted(data.sessions, key=lambda s: s.start)[-250:]
        self.assertEqual(result.sessions, tuple(expected))

    def test_decimal_float_is_read_as_written(self):
        data = SessionCorpus(tuple(Session(f"s{n}", n, ("a", "b")) for n in range(1000)))
        self.assertEqual(len(take_recent_fraction(data, 0.1)), 100)
        self.assertEqual(as_fraction(0.1), Fraction(1, 10))
        self.assertEqual(as_fraction(" 1/64 "), Fraction(1, 64))

    def test_bad_fraction(self):
        with self.assertRaises(ValueError):
            take_recent_fraction(corpus(["a", "b"]), 0)


class SplitSequencesTestCase(SimpleTestCase):
    def setUp(self):
        self.vocab = ItemVocab(tuple("abcdefghijklmnopqrstuvwxyz"))

    def test_prefixes_and_labels(self):
        examples = split_sequences(corpus(["a", "b", "c"]), self.vocab)
        self.assertEqual([(ex.prefix, ex.label) for ex in examples], [((1,), 2), ((1, 2), 3)])
        self.assertEqual(examples[0].session_id, "s0")

    def test_minimal_session(self):
        self.assertEqual(len(split_sequences(corpus(["a", "b"]), self.vocab)), 1)

    def test_long_session_is_truncated(self):
        items = list("abcdefghijklmnopqrstuvwxy")
        examples = split_sequences(corpus(items), self.vocab, 19)
        self.assertEqual(len(examples), 24)
        self.assertEqual(examples[-1].prefix, tuple(range(6, 25)))
        self.assertEqual(examples[-1].label, 25)
        self.assertTrue(all(len(ex.prefix) <= 19 for ex in examples))

    def test_unknown_item(self):
        with self.assertRaises(UnknownItemError):
            split_sequences(corpus(["a", "?"]), self.vocab)

    def test_skip_unknown(self):
        examples = split_sequences(corpus(["a", "?", "b", "?"]), self.vocab, skip_unknown=True)
        self.assertEqual([(ex.prefix, ex.label) for ex in examples], [((1,), 2)])


class VocabAndTextTestCase(FileTestCase):
    def test_vocab_round_trip(self):
        vocab = build_vocab(corpus(["x", "y"], ["y", "z", "x"]))
        self.assertEqual(vocab.items, ("x", "y", "z"))
        for item in vocab.items:
            self.assertEqual(vocab.item(vocab.index(item)), item)
        with self.assertRaises(IndexError):
            vocab.item(0)

    def test_files(self):
        vocab = ItemVocab(("x", "y", "z"))
        data = corpus(["x", "y"], ["z", "x", "y"])
        examples = split_sequences(data, vocab)
        write_examples(examples, self.root / "ex.tsv")
        write_vocab(vocab, self.root / "vocab.tsv")
        write_sessions(data, vocab, self.root / "sessions.tsv")
        self.assertEqual(
            [(ex.prefix, ex.label) for ex in read_examples(self.root / "ex.tsv")],
            [(ex.prefix, ex.label) for ex in examples],
        )
        self.assertEqual(read_vocab(self.root / "vocab.tsv"), vocab)
        self.assertEqual(read_sessions(self.root / "sessions.tsv"), [("s0", 0, (1, 2)), ("s1", 1000, (3, 1, 2))])

    def test_session_examples_keep_ids(self):
        data = corpus(["a", "b", "c", "a"], ["c", "b"])
        vocab = build_vocab(data)
        write_sessions(data, vocab, self.root / "sessions.tsv")
        self.assertEqual(
            read_session_examples(self.root / "sessions.tsv", max_len=2),
            split_sequences(data, vocab, max_len=2),
        )
        self.assertEqual(
            [ex.session_id for ex in read_session_examples(self.root / "sessions.tsv")],
            ["s0", "s0", "s0", "s1"],
        )

    def test_stats(self):
        stats = corpus_stats(corpus(["a", "b"], ["b", "c", "d"]), corpus(["a", "e"]))
        self.assertEqual(
            stats.rows(),
            [
                ("clicks", "7"),
                ("train_sessions", "2"),
                ("test_sessions", "1"),
                ("items", "5"),
                ("avg_length", "2.33"),
                ("unscorable_test_cases", "0"),
            ],
        )


class SyntheticTestCase(FileTestCase):
    def test_rows_are_distributions(self):
        chain = MarkovChain.random(30, fanout=4, seed=0)
        np.testing.assert_allclose(chain.transition.sum(axis=1), np.ones(30), atol=1e-12)
        self.assertTrue(all(np.count_nonzero(row) <= 4 for row in chain.transition))

    def test_clicks_are_seeded(self):
        chain = MarkovChain.random(20, seed=1)
        self.assertEqual(chain.clicks(10, seed=3), chain.clicks(10, seed=3))
        lengths = Counter(e.session_id for e in chain.clicks(50, min_len=4, max_len=6, seed=4))
        self.assertTrue(all(4 <= n <= 6 for n in lengths.values()))

    def test_bayes_scores(self):
        chain = PurposeChain.random(10, fanout=3, seed=2)
        np.testing.assert_allclose(
            chain.bayes_scores([1, 2]), (chain.transition[0] + chain.transition[1]) / 2
        )
        self.assertAlmostEqual(float(chain.bayes_scores([5, 5, 7]).sum()), 1.0, places=12)

    def test_written_log_loads_back(self):
        events = MarkovChain.random(15, seed=5).clicks(20, seed=6)
        write_clicks(events, self.root / "clicks.csv")
        self.assertEqual(load_clicks(self.root / "clicks.csv").events, events)
        self.assertLessEqual({e.item_id for e in events}, {item_id(k) for k in range(1, 16)})


class PipelineFidelityTestCase(SimpleTestCase):
    """Whole pipeline on a 200-session log against a plain re-implementation."""

    def events(self):
        rng = make_rng(7)
        popularity = 1.0 / np.arange(1, 31)
        popularity /= popularity.sum()
        starts = rng.choice(days(10), size=200, replace=False)
        events = []
        for n, start in enumerate(starts):
            length = int(rng.integers(1, 9))
            items = rng.choice(30, size=length, p=popularity)
            events += [ClickEvent(f"s{n}", int(start) + 1000 * k, f"p{i}") for k, i in enumerate(items)]
        order = rng.permutation(len(events))
        return [events[int(i)] for i in order]

    def brute_force(self, events):
        sessions = {}
        for position, ev in enumerate(events):
            sessions.setdefault(ev.session_id, []).append((ev.timestamp, position, ev.item_id))
        ordered = sorted(
            ((min(c)[0], sid, [i for _, _, i in sorted(c)]) for sid, c in sessions.items()),
            key=lambda s: s[0],
        )
        counts = Counter(i for _, _, items in ordered for i in items)
        kept = []
        for start, sid, items in ordered:
            items = [i for i in items if counts[i] >= 5]
            if len(items) >= 2:
                kept.append((start, sid, items))
        threshold = max(s[0] for s in kept) - days(1)
        train = [s for s in kept if s[0] <= threshold]
        test = [s for s in kept if s[0] > threshold]

        index = {}
        for _, _, items in train:
            for i in items:
                index.setdefault(i, len(index) + 1)
        test = [(st, sid, [i for i in items if i in index]) for st, sid, items in test]
        test = [s for s in test if len(s[2]) >= 2]

        def examples(sessions):
            return [
                (tuple(index[i] for i in items[:t])[-19:], index[items[t]])
                for _, _, items in sessions
                for t in range(1, len(items))
            ]

        return examples(train), examples(test), train, test

    def test_matches_reimplementation(self):
        events = self.events()
        filtered, _ = filter_corpus(build_sessions(events), 2, 5)
        train, test = temporal_split(filtered, days(1))
        vocab = build_vocab(train)
        test = filter_test_items(test, vocab)
        train_examples = split_sequences(train, vocab)
        test_examples = split_sequences(test, vocab)

        want_train, want_test, bf_train, bf_test = self.brute_force(events)
        self.assertEqual([(ex.prefix, ex.label) for ex in train_examples], want_train)
        self.assertEqual([(ex.prefix, ex.label) for ex in test_examples], want_test)
        self.assertEqual(len(train_examples), sum(len(s) - 1 for s in train))
        self.assertEqual([s.session_id for s in train], [sid for _, sid, _ in bf_train])
        self.assertEqual([s.session_id for s in test], [sid for _, sid, _ in bf_test])
