from cli.base import NarmCommand
from narm.scoring import top_k


class Command(NarmCommand):
    help = "Recommend the top-k next items for a session prefix given as item ids, oldest first."

    config_fields = ("output_dir", "checkpoint", "k")

    def add_command_arguments(self, parser):
        parser.add_argument("items", nargs="+", metavar="ITEM", help="clicked item ids, oldest first")

    def run(self, config, **options):
        vocab = self.read_vocab(config)
        prefix = [vocab.index(item) for item in options["items"]]
        params = self.load_model(config)

        k = config.k
        if options.get("k") is None:
            k = min(k, params.config.n_items)
        self.write_rows([("item_id", "probability")])
        self.write_rows((vocab.item(index), f"{prob:.8f}") for index, prob in top_k(params, prefix, k))
