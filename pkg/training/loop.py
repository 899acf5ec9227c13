"""
Mini-batch Adam training with validation-based model selection.

One seeded generator drives everything random in a run: initialization, the
train/validation split, per-epoch shuffling and dropout masks. Two runs with
the same config and examples produce identical parameters and logs (up to
the wall-clock column).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from dataset.records import ExampleSet
from evaluation.ranking import evaluate
from narm.checkpoint import save_checkpoint
from narm.network import Batch, backprop, draw_masks, run_batch
from narm.params import NarmParams, init_params
from narm.scoring import NarmScorer
from narmrec.observability import opik_span, opik_trace, record_metrics
from numerics.kernels import make_rng

from .config import TrainConfig
from .optim import AdamState, TrainingError, adam_update, clip_by_norm

logger = logging.getLogger(__name__)

LOG_HEADER = ("epoch", "mean_loss", "val_recall@20", "val_mrr@20", "wall_seconds")
BEST_POINTER = "best"
SELECTION = "val_recall@20"


def checkpoint_name(epoch: int) -> str:
    return f"checkpoint-epoch{epoch:02d}.narm"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    val_recall: float
    val_mrr: float
    wall_seconds: float

    def row(self) -> Tuple[str, ...]:
        return (
            str(self.epoch),
            repr(self.mean_loss),
            repr(self.val_recall),
            repr(self.val_mrr),
            f"{self.wall_seconds:.3f}",
        )


@dataclass
class TrainResult:
    params: NarmParams
    log: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best(self) -> EpochRecord:
        return self.log[self.best_epoch - 1]


def make_batches(examples: ExampleSet, batch_size: int, rng: np.random.Generator) -> List[Batch]:
    """Shuffle with ``rng`` and cut into right-padded batches of at most ``batch_size``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    order = rng.permutation(len(examples))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [examples[int(i)] for i in order[start : start + batch_size]]
        batches.append(Batch.pad([ex.prefix for ex in chunk], [ex.label for ex in chunk]))
    return batches


def split_validation(
    examples: ExampleSet, fraction: float, rng: np.random.Generator
) -> Tuple[ExampleSet, ExampleSet]:
    """Shuffle, then hold out the last ``round(fraction * n)`` examples."""
    n = len(examples)
    n_val = int(round(fraction * n))
    if n_val == 0:
        raise TrainingError(f"validation_fraction {fraction} of {n} examples leaves no validation set")
    if n_val == n:
        raise TrainingError(f"validation_fraction {fraction} of {n} examples leaves no training set")
    order = [int(i) for i in rng.permutation(n)]
    return examples.subset(order[: n - n_val]), examples.subset(order[n - n_val :])


def infer_n_items(examples: ExampleSet) -> int:
    return max(max(max(ex.prefix), ex.label) for ex in examples)


def _clip_prefixes(examples: ExampleSet, truncation: int) -> ExampleSet:
    if all(len(ex.prefix) <= truncation for ex in examples):
        return examples
    return ExampleSet(
        tuple(type(ex)(ex.prefix[-truncation:], ex.label, ex.session_id) for ex in examples)
    )


def write_log(log: List[EpochRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    lines = ["\t".join(LOG_HEADER)] + ["\t".join(r.row()) for r in log]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _run_epoch(
    params: NarmParams,
    state: AdamState,
    batches: List[Batch],
    config: TrainConfig,
    rng: np.random.Generator,
) -> float:
    keep_embed, keep_repr = 1.0 - config.dropout_embed, 1.0 - config.dropout_repr
    total, count = 0.0, 0
    for batch in tqdm(batches, desc="batches", leave=False, disable=not config.show_progress):
        masks = draw_masks(params, rng, batch.width, batch.size, keep_embed, keep_repr)
        cache = run_batch(params, batch, masks)
        if not np.all(np.isfinite(cache.losses)):
            raise TrainingError("non-finite training loss")
        grads = backprop(params, cache)
        if config.clip_norm > 0:
            clip_by_norm(grads, config.clip_norm)
        adam_update(params, grads, state, config.learning_rate)
        total += float(cache.losses.sum())
        count += batch.size
    return total / count


def train(
    examples: ExampleSet,
    config: TrainConfig,
    *,
    n_items: Optional[int] = None,
    output_dir: Optional[Union[str, Path]] = None,
) -> TrainResult:
    """
    Train on ``examples`` and return the parameters of the epoch with the best
    validation Recall@20 (the earliest such epoch on ties).

    With ``output_dir`` every epoch's checkpoint, the tab-separated training log
    and a ``best`` pointer file are written there.
    """
    config.validate()
    if not len(examples):
        raise TrainingError("no training examples")
    n_items = n_items or infer_n_items(examples)
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rng = make_rng(config.seed)
    params = init_params(config.network(n_items), rng, embed_bound=config.embed_init_bound)
    train_set, val_set = split_validation(
        _clip_prefixes(examples, config.truncation), config.validation_fraction, rng
    )
    state = AdamState.zeros_like(params)
    result = TrainResult(params.copy())
    best_recall = -1.0

    logger.info(
        "training on %d examples (%d held out for validation), m=%d D=%d H=%d mode=%s",
        len(train_set),
        len(val_set),
        n_items,
        config.embedding_dim,
        config.hidden_dim,
        config.mode,
    )
    metadata = {**config.as_dict(), "n_items": n_items, "model_selection": SELECTION}
    with opik_trace("train", metadata=metadata):
        epochs = tqdm(range(1, config.epochs + 1), desc="epochs", disable=not config.show_progress)
        for epoch in epochs:
            started = time.perf_counter()
            with opik_span(f"epoch-{epoch}"):
                batches = make_batches(train_set, config.batch_size, rng)
                mean_loss = _run_epoch(params, state, batches, config, rng)
                report = evaluate(NarmScorer(params), val_set, k=20)
                record = EpochRecord(
                    epoch,
                    mean_loss,
                    float(report.recall_at_k),
                    float(report.mrr_at_k),
                    time.perf_counter() - started,
                )
                record_metrics(loss=mean_loss, val_recall=record.val_recall, val_mrr=record.val_mrr)

            result.log.append(record)
            logger.info(
                "epoch %d: loss %.4f  val Recall@20 %.4f  MRR@20 %.4f",
                epoch,
                mean_loss,
                record.val_recall,
                record.val_mrr,
            )
            if record.val_recall > best_recall:
                best_recall = record.val_recall
                result.params = params.copy()
                result.best_epoch = epoch
            if out is not None:
                save_checkpoint(params, out / checkpoint_name(epoch))
                write_log(result.log, out / "train_log.tsv")

    if out is not None:
        (out / BEST_POINTER).write_text(
            f"epoch\t{result.best_epoch}\n"
            f"checkpoint\t{checkpoint_name(result.best_epoch)}\n"
            f"selection\t{SELECTION}\n",
            encoding="utf-8",
        )
    logger.info(
        "selected epoch %d by validation Recall@20 (%.4f)", result.best_epoch, result.best.val_recall
    )
    return result


def read_best_pointer(output_dir: Union[str, Path]) -> Tuple[int, Path]:
    """The selected epoch and its checkpoint path, as recorded by :func:`train`."""
    out = Path(output_dir)
    pointer = out / BEST_POINTER
    if not pointer.is_file():
        raise FileNotFoundError(f"no best-epoch pointer in {out}")
    entries = dict(line.split("\t", 1) for line in pointer.read_text(encoding="utf-8").splitlines())
    return int(entries["epoch"]), out / entries["checkpoint"]
