from dataclasses import fields

from cli.base import MODEL_DIR, TRAIN_FILE, NarmCommand
from training.config import TrainConfig
from training.loop import checkpoint_name, train


class Command(NarmCommand):
    help = "Train NARM on the preprocessed examples and keep the epoch with the best validation Recall@20."

    config_fields = ("output_dir", *(f.name for f in fields(TrainConfig)))

    def run(self, config, **options):
        vocab = self.read_vocab(config)
        examples = self.read_examples(config, TRAIN_FILE)
        result = train(examples, config.train_config(), n_items=vocab.m, output_dir=config.out / MODEL_DIR)

        best = result.best
        self.write_rows(
            [
                ("best_epoch", "val_recall@20", "val_mrr@20", "checkpoint"),
                (best.epoch, f"{best.val_recall:.6f}", f"{best.val_mrr:.6f}", checkpoint_name(best.epoch)),
            ]
        )
