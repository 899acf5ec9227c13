"""
Synthetic click logs for desk-scale verification.

``MarkovChain`` draws every click from the transition row of the previous one,
so the Bayes-optimal next-item scores are just that row. ``PurposeChain`` draws
every click from the row of a uniformly chosen earlier click (the session's
"anchor"), which rewards models that look past the last item.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from numerics.kernels import make_rng

from .records import ClickEvent

_CLICK_GAP_MS = 30_000


def item_id(index: int) -> str:
    """Chain index ``k`` is clicked as item id ``i{k}``."""
    return f"i{index}"


@dataclass(frozen=True)
class MarkovChain:
    """First-order chain over items ``1..n_items``; ``transition[a - 1, b - 1] = P(b | a)``."""

    transition: np.ndarray

    @classmethod
    def random(cls, n_items: int, fanout: int = 5, seed: int = 0) -> "MarkovChain":
        rng = make_rng(seed)
        transition = np.zeros((n_items, n_items))
        for a in range(n_items):
            successors = rng.choice(n_items, size=min(fanout, n_items), replace=False)
            transition[a, successors] = rng.dirichlet(np.ones(len(successors)))
        return cls(transition)

    @property
    def n_items(self) -> int:
        return self.transition.shape[0]

    def _next(self, rng: np.random.Generator, context: Sequence[int]) -> int:
        return int(rng.choice(self.n_items, p=self.transition[context[-1] - 1])) + 1

    def sample_session(self, rng: np.random.Generator, length: int) -> List[int]:
        items = [int(rng.integers(self.n_items)) + 1]
        while len(items) < length:
            items.append(self._next(rng, items))
        return items

    def bayes_scores(self, prefix: Sequence[int]) -> np.ndarray:
        """Exact next-item distribution given ``prefix`` (length ``n_items``)."""
        return self.transition[prefix[-1] - 1].copy()

    def clicks(
        self,
        n_sessions: int,
        *,
        min_len: int = 4,
        max_len: int = 10,
        span_days: float = 30.0,
        seed: int = 0,
    ) -> List[ClickEvent]:
        """``n_sessions`` sessions with lengths uniform in ``[min_len, max_len]``, starts uniform over the span."""
        rng = make_rng(seed)
        span_ms = int(span_days * 86_400_000)
        starts = np.sort(rng.integers(0, span_ms, size=n_sessions))
        events: List[ClickEvent] = []
        for n, start in enumerate(starts):
            items = self.sample_session(rng, int(rng.integers(min_len, max_len + 1)))
            events.extend(
                ClickEvent(f"s{n}", int(start) + k * _CLICK_GAP_MS, item_id(i))
                for k, i in enumerate(items)
            )
        return events


@dataclass(frozen=True)
class PurposeChain(MarkovChain):
    def _next(self, rng: np.random.Generator, context: Sequence[int]) -> int:
        anchor = context[int(rng.integers(len(context)))]
        return int(rng.choice(self.n_items, p=self.transition[anchor - 1])) + 1

    def bayes_scores(self, prefix: Sequence[int]) -> np.ndarray:
        rows = self.transition[np.asarray(prefix) - 1]
        return rows.mean(axis=0)


def write_clicks(events: Sequence[ClickEvent], path: Union[str, Path], delimiter: str = ",") -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter=delimiter, lineterminator="\n")
        writer.writerow(["session", "ts", "item"])
        writer.writerows((e.session_id, e.timestamp, e.item_id) for e in events)
