from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np

from dataset.records import Example, ItemVocab
from narm.network import decode, encode, session_representation
from narm.params import NarmParams

from .ranking import EvaluationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttentionTrace:
    session_id: str
    items: List[str]
    weights: List[float]
    topk: List[str]
    label: str


def trace_example(params: NarmParams, vocab: ItemVocab, example: Example, k: int = 10) -> AttentionTrace:
    """Attention weights of every prefix position plus the model's top-k next items."""
    prefix = list(example.prefix)[-params.config.truncation :]
    enc = session_representation(params, encode(params, prefix))
    probs = decode(params, enc.c).probs
    top = np.argsort(-probs, kind="stable")[:k]
    return AttentionTrace(
        session_id=example.session_id,
        items=[vocab.item(i) for i in prefix],
        weights=list(enc.attention_weights),
        topk=[vocab.item(int(i) + 1) for i in top],
        label=vocab.item(example.label),
    )


def export_attention(
    params: NarmParams,
    vocab: ItemVocab,
    examples: Iterable[Example],
    path: Union[str, Path],
    k: int = 10,
) -> int:
    """Write one JSON line per example; returns how many were written."""
    if not params.config.uses_attention:
        raise EvaluationError(f"a {params.config.mode}-mode model has no attention weights")
    if vocab.m != params.config.n_items:
        raise EvaluationError(f"vocabulary has {vocab.m} items, model expects {params.config.n_items}")

    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for example in examples:
            f.write(json.dumps(asdict(trace_example(params, vocab, example, k))) + "\n")
            count += 1
    logger.info("wrote %d attention traces to %s", count, path)
    return count
