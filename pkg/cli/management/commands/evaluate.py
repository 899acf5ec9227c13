import logging

from baselines.scorers import BASELINES, BaselineError, save_baseline, train_baseline
from cli.base import SESSIONS_FILE, TEST_FILE, NarmCommand
from dataset.textio import read_sessions
from evaluation.ranking import compare_by_length, evaluate
from narm.scoring import NarmScorer

logger = logging.getLogger(__name__)

BASELINE_DIR = "baselines"


class Command(NarmCommand):
    help = "Score the test examples with a trained checkpoint or a baseline and report Recall@k and MRR@k."

    config_fields = ("output_dir", "checkpoint", "baseline", "k", "knn_lambda", "knn_exclude_self")

    def add_command_arguments(self, parser):
        parser.add_argument(
            "--per-length",
            action="store_true",
            help="also print the per-prefix-length table and write it next to the test set",
        )
        parser.add_argument(
            "--compare-baseline",
            metavar="NAME",
            choices=sorted(BASELINES),
            help="print hits per prefix length against this baseline",
        )

    def baseline_scorer(self, config, name):
        if name not in BASELINES:
            raise BaselineError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}")
        vocab = self.read_vocab(config)
        sessions = [items for _, _, items in read_sessions(config.out / SESSIONS_FILE)]
        scorer = train_baseline(
            name, sessions, vocab.m, lam=config.knn_lambda, exclude_self=config.knn_exclude_self
        )
        path = config.out / BASELINE_DIR / f"{name}.tsv"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_baseline(scorer, path)
        logger.debug("saved %s baseline to %s", name, path)
        return scorer

    def run(self, config, **options):
        if config.baseline:
            scorer = self.baseline_scorer(config, config.baseline)
        else:
            scorer = NarmScorer(self.load_model(config))
        examples = self.read_examples(config, TEST_FILE)
        report = evaluate(scorer, examples, k=config.k)

        self.write_rows([("scorer", "metric", "value")])
        self.write_rows((report.scorer, key, value) for key, value in report.header_rows())

        if options.get("per_length"):
            path = report.write(config.out / f"eval_{report.scorer}_k{report.k}.tsv")
            self.stdout.write("")
            self.write_rows([("length", "n_cases", "hits", "recall", "mrr"), *report.length_rows()])
            logger.info("wrote per-length table to %s", path)

        base_name = options.get("compare_baseline")
        if base_name:
            base = evaluate(self.baseline_scorer(config, base_name), examples, k=config.k)
            self.stdout.write("")
            self.write_rows([("length", "n_cases", f"{base.scorer}_hits", f"{report.scorer}_hits", "improvement")])
            self.write_rows(
                (
                    row.length,
                    row.n_cases,
                    row.base_hits,
                    row.other_hits,
                    "-" if row.improvement is None else f"{row.improvement:+.4f}",
                )
                for row in compare_by_length(base, report)
            )
