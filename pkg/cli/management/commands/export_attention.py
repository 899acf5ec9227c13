from pathlib import Path

from cli.base import TEST_SESSIONS_FILE, NarmCommand
from dataset.records import ExampleSet
from dataset.textio import read_session_examples
from evaluation.attention import export_attention


class Command(NarmCommand):
    help = "Write per-position attention weights and top-k items for test prefixes as JSON lines."

    config_fields = ("output_dir", "checkpoint", "k")

    def add_command_arguments(self, parser):
        parser.add_argument("--limit", type=int, default=None, help="only the first N test examples")
        parser.add_argument("--out", default="attention.jsonl", help="file name inside the output directory")

    def run(self, config, **options):
        vocab = self.read_vocab(config)
        params = self.load_model(config)
        examples = read_session_examples(config.out / TEST_SESSIONS_FILE, params.config.truncation)
        limit = options.get("limit")
        if limit is not None:
            if limit < 1:
                raise ValueError(f"--limit must be at least 1, got {limit}")
            examples = ExampleSet(examples.examples[:limit])

        path = config.out / Path(options.get("out") or "attention.jsonl").name
        count = export_attention(params, vocab, examples, path, k=min(config.k, vocab.m))
        self.stdout.write(self.style.SUCCESS(f"wrote {count} attention traces to {path}"))
