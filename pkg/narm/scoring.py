from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .network import Batch, run_batch
from .params import NarmParams


class NarmScorer:
    """Eval-mode scores for many prefixes at once, in chunks of ``chunk_size``."""

    name = "narm"

    def __init__(self, params: NarmParams, chunk_size: int = 512) -> None:
        self.params = params
        self.chunk_size = chunk_size

    @property
    def n_items(self) -> int:
        return self.params.config.n_items

    def _clip(self, prefix: Sequence[int]) -> Sequence[int]:
        return list(prefix)[-self.params.config.truncation :]

    def score_batch(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        """Decoder scores, one row of length m per prefix (column i-1 holds item i)."""
        rows = []
        for start in range(0, len(prefixes), self.chunk_size):
            chunk = [self._clip(p) for p in prefixes[start : start + self.chunk_size]]
            rows.append(run_batch(self.params, Batch.pad(chunk)).scores.T)
        if not rows:
            return np.zeros((0, self.n_items))
        return np.vstack(rows)

    def probabilities(self, prefix: Sequence[int]) -> np.ndarray:
        return run_batch(self.params, Batch.pad([self._clip(prefix)])).probs[:, 0]


def top_k(params: NarmParams, prefix: Sequence[int], k: int) -> List[Tuple[int, float]]:
    """The ``k`` most probable next items as (index, probability), ties to the smaller index."""
    if not 1 <= k <= params.config.n_items:
        raise ValueError(f"k must lie in 1..{params.config.n_items}, got {k}")
    probs = NarmScorer(params).probabilities(prefix)
    order = np.argsort(-probs, kind="stable")[:k]
    return [(int(i) + 1, float(probs[i])) for i in order]
