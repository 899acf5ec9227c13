from cli.base import NarmCommand
from dataset.synthetic import MarkovChain, PurposeChain, write_clicks

CHAINS = {"markov": MarkovChain, "purpose": PurposeChain}


class Command(NarmCommand):
    help = "Write a synthetic click log (clicks.csv in the output directory) drawn from a random item chain."

    config_fields = ("output_dir", "seed")

    def add_command_arguments(self, parser):
        parser.add_argument("--kind", choices=sorted(CHAINS), default="markov")
        parser.add_argument("--sessions", type=int, default=10_000)
        parser.add_argument("--n-items", type=int, default=100)
        parser.add_argument("--fanout", type=int, default=5)
        parser.add_argument("--min-len", type=int, default=4)
        parser.add_argument("--max-len", type=int, default=10)
        parser.add_argument("--span-days", type=float, default=30.0)

    def run(self, config, **options):
        kind = options.get("kind", "markov")
        if kind not in CHAINS:
            raise ValueError(f"unknown chain kind {kind!r}; choose from {', '.join(sorted(CHAINS))}")
        min_len, max_len = options.get("min_len", 4), options.get("max_len", 10)
        if not 2 <= min_len <= max_len:
            raise ValueError(f"session lengths need 2 <= min-len <= max-len, got {min_len}..{max_len}")

        chain = CHAINS[kind].random(options.get("n_items", 100), options.get("fanout", 5), seed=config.seed)
        events = chain.clicks(
            options.get("sessions", 10_000),
            min_len=min_len,
            max_len=max_len,
            span_days=options.get("span_days", 30.0),
            seed=config.seed + 1,
        )
        config.out.mkdir(parents=True, exist_ok=True)
        path = config.out / "clicks.csv"
        write_clicks(events, path)
        self.stdout.write(self.style.SUCCESS(f"wrote {len(events)} clicks to {path}"))
