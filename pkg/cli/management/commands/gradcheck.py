import argparse

from django.core.management.base import CommandError

from cli.base import VERIFICATION_FAILURE, NarmCommand
from narm.gradcheck import DEFAULT_TOLERANCE, check_gradients
from narm.params import NetworkConfig


class Command(NarmCommand):
    help = (
        "Compare BPTT gradients with central finite differences on a tiny random model. "
        "Exits 1 if any parameter block is over tolerance."
    )

    config_fields = ("mode", "decoder", "use_bias", "attention_softmax")

    def add_command_arguments(self, parser):
        parser.add_argument("--n-items", type=int, default=11)
        parser.add_argument("--embedding-dim", type=int, default=4)
        parser.add_argument("--hidden-dim", type=int, default=5)
        parser.add_argument("--prefix-len", type=int, default=3)
        parser.add_argument("--seeds", type=int, default=20, help="number of random points, seeds 0..N-1")
        parser.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
        parser.add_argument("--dropout", action="store_true", help="check train-mode gradients through fixed masks")
        parser.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)

    def run(self, config, **options):
        network = NetworkConfig(
            n_items=options.get("n_items", 11),
            embedding_dim=options.get("embedding_dim", 4),
            hidden_dim=options.get("hidden_dim", 5),
            mode=config.mode,
            decoder=config.decoder,
            use_bias=config.use_bias,
            attention_softmax=config.attention_softmax,
        )
        if options.get("seeds", 20) < 1 or options.get("prefix_len", 3) < 1:
            raise ValueError("--seeds and --prefix-len must be at least 1")
        report = check_gradients(
            network,
            range(options.get("seeds", 20)),
            prefix_len=options.get("prefix_len", 3),
            tolerance=options.get("tolerance", DEFAULT_TOLERANCE),
            dropout=options.get("dropout", False),
            corrupt=options.get("corrupt"),
        )

        self.write_rows([("block", "max_relative_error", "status"), *report.rows()])
        summary = f"max relative error {report.max_error:.3e} over {report.seeds} seeds"
        if not report.passed:
            raise CommandError(f"gradient check failed: {summary}", returncode=VERIFICATION_FAILURE)
        self.stdout.write(self.style.SUCCESS(f"gradient check passed: {summary}"))
