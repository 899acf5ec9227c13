import logging
from pathlib import Path

from django.core.management.base import CommandError

from cli.base import (
    SESSIONS_FILE,
    STATS_FILE,
    TEST_FILE,
    TEST_SESSIONS_FILE,
    TRAIN_FILE,
    USAGE_ERROR,
    VOCAB_FILE,
    NarmCommand,
)
from dataset.pipeline import (
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
from dataset.textio import write_examples, write_sessions, write_table, write_vocab
from narmrec.observability import opik_trace

logger = logging.getLogger(__name__)


class Command(NarmCommand):
    help = "Turn a click log into train/test prefix examples, a vocabulary and corpus statistics."

    config_fields = (
        "input",
        "output_dir",
        "session_column",
        "timestamp_column",
        "item_column",
        "delimiter",
        "timestamp_format",
        "offset_column",
        "max_malformed_fraction",
        "min_session_len",
        "min_item_support",
        "filter_fixpoint",
        "holdout_days",
        "recent_fraction",
        "filter_test_items",
        "truncation",
    )

    def run(self, config, **options):
        if not config.input:
            raise CommandError("no click log given (--input or input= in the config file)", returncode=USAGE_ERROR)
        source = Path(config.input)
        if not source.is_file():
            raise CommandError(f"click log not found: {source}", returncode=USAGE_ERROR)

        metadata = {"input": str(source), "holdout_days": config.holdout_days}
        with opik_trace("preprocess", metadata=metadata):
            log = load_clicks(source, config.schema(), max_malformed_fraction=config.max_malformed_fraction)
            corpus, _ = filter_corpus(
                build_sessions(log),
                config.min_session_len,
                config.min_item_support,
                fixpoint=config.filter_fixpoint,
            )
            train, test = temporal_split(corpus, days(config.holdout_days))
            train = take_recent_fraction(train, config.recent_fraction)
            vocab = build_vocab(train)

            train_examples = split_sequences(train, vocab, config.truncation)
            unscorable = 0
            if config.filter_test_items:
                test = filter_test_items(test, vocab, config.min_session_len)
                test_examples = split_sequences(test, vocab, config.truncation)
                scored_test = test
            else:
                test_examples = split_sequences(test, vocab, config.truncation, skip_unknown=True)
                unscorable = sum(len(s) - 1 for s in test) - len(test_examples)
                # known items only; splits into exactly the skip_unknown examples
                scored_test = filter_test_items(test, vocab, 2)

            stats = corpus_stats(train, test, unscorable)

        out = config.out
        out.mkdir(parents=True, exist_ok=True)
        write_examples(train_examples, out / TRAIN_FILE)
        write_examples(test_examples, out / TEST_FILE)
        write_vocab(vocab, out / VOCAB_FILE)
        write_sessions(train, vocab, out / SESSIONS_FILE)
        write_sessions(scored_test, vocab, out / TEST_SESSIONS_FILE)
        write_table(stats.rows(), out / STATS_FILE)
        logger.info(
            "wrote %d train and %d test examples over %d items to %s",
            len(train_examples),
            len(test_examples),
            vocab.m,
            out,
        )

        self.write_rows([("key", "value"), *stats.rows()])
        self.stdout.write(self.style.SUCCESS(f"{len(train_examples)} train / {len(test_examples)} test examples"))
