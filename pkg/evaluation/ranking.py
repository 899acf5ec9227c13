"""
Ranking metrics over full-catalogue score vectors.

Every case ranks the true next item among all m items; ties go to the smaller
item index. Reports keep integer hit counts and exact reciprocal-rank sums so
that reports over disjoint test sets merge exactly.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from dataset.records import ExampleSet
from narmrec.observability import opik_trace, record_metrics

logger = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


class Scorer(Protocol):
    """Anything that scores all m items for a batch of prefixes (column i-1 is item i)."""

    name: str

    @property
    def n_items(self) -> int: ...

    def score_batch(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray: ...


# -----------------------------
# Ranks and metrics
# -----------------------------


def rank_of(scores: np.ndarray, label: int) -> int:
    scores = np.asarray(scores).reshape(-1)
    if not 1 <= label <= scores.size:
        raise EvaluationError(f"label {label} outside 1..{scores.size}")
    target = scores[label - 1]
    return 1 + int(np.sum(scores > target)) + int(np.sum(scores[: label - 1] == target))


def ranks_for(scores: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """:func:`rank_of` for every row of an ``n x m`` score matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    n, m = scores.shape
    if labels.shape != (n,):
        raise EvaluationError(f"{labels.size} labels for {n} score rows")
    if n and (labels.min() < 1 or labels.max() > m):
        raise EvaluationError(f"label outside 1..{m}")
    target = scores[np.arange(n), labels - 1][:, None]
    earlier = np.arange(m)[None, :] < (labels - 1)[:, None]
    ahead = (scores > target) | ((scores == target) & earlier)
    return 1 + ahead.sum(axis=1)


def _check(ranks: Sequence[int], k: int) -> None:
    if k < 1:
        raise EvaluationError(f"k must be at least 1, got {k}")
    if not len(ranks):
        raise EvaluationError("no ranks to aggregate")


def recall_at_k(ranks: Sequence[int], k: int = 20) -> Fraction:
    _check(ranks, k)
    return Fraction(sum(1 for r in ranks if r <= k), len(ranks))


def _reciprocal_sum(ranks: Iterable[int], k: int) -> Fraction:
    counts = Counter(int(r) for r in ranks if r <= k)
    return sum((Fraction(c, r) for r, c in counts.items()), Fraction(0))


def mrr_at_k(ranks: Sequence[int], k: int = 20) -> Fraction:
    """Mean reciprocal rank; a rank beyond ``k`` contributes zero."""
    _check(ranks, k)
    return _reciprocal_sum(ranks, k) / len(ranks)


# -----------------------------
# Reports
# -----------------------------


@dataclass(frozen=True)
class LengthStats:
    n_cases: int = 0
    hits: int = 0
    reciprocal_sum: Fraction = Fraction(0)

    def __add__(self, other: "LengthStats") -> "LengthStats":
        return LengthStats(
            self.n_cases + other.n_cases,
            self.hits + other.hits,
            self.reciprocal_sum + other.reciprocal_sum,
        )

    @property
    def recall(self) -> Fraction:
        return Fraction(self.hits, self.n_cases) if self.n_cases else Fraction(0)

    @property
    def mrr(self) -> Fraction:
        return self.reciprocal_sum / self.n_cases if self.n_cases else Fraction(0)


@dataclass(frozen=True)
class EvalReport:
    k: int
    overall: LengthStats
    per_length: Dict[int, LengthStats] = field(default_factory=dict)
    scorer: str = ""

    @property
    def n_cases(self) -> int:
        return self.overall.n_cases

    @property
    def recall_at_k(self) -> Fraction:
        return self.overall.recall

    @property
    def mrr_at_k(self) -> Fraction:
        return self.overall.mrr

    @classmethod
    def from_ranks(
        cls, ranks: Sequence[int], lengths: Sequence[int], k: int = 20, scorer: str = ""
    ) -> "EvalReport":
        _check(ranks, k)
        grouped: Dict[int, List[int]] = {}
        for r, length in zip(ranks, lengths):
            grouped.setdefault(int(length), []).append(int(r))

        def stats(rs: Sequence[int]) -> LengthStats:
            return LengthStats(len(rs), sum(1 for r in rs if r <= k), _reciprocal_sum(rs, k))

        per_length = {length: stats(rs) for length, rs in sorted(grouped.items())}
        return cls(k, stats([int(r) for r in ranks]), per_length, scorer)

    def header_rows(self) -> List[Tuple[str, str]]:
        return [
            ("k", str(self.k)),
            ("n_cases", str(self.n_cases)),
            ("recall", f"{float(self.recall_at_k):.6f}"),
            ("mrr", f"{float(self.mrr_at_k):.6f}"),
        ]

    def length_rows(self) -> List[Tuple[str, ...]]:
        return [
            (str(length), str(s.n_cases), str(s.hits), f"{float(s.recall):.6f}", f"{float(s.mrr):.6f}")
            for length, s in self.per_length.items()
        ]

    def to_tsv(self) -> str:
        lines = ["\t".join(row) for row in self.header_rows()]
        lines.append("")
        lines.append("\t".join(("length", "n_cases", "hits", "recall", "mrr")))
        lines.extend("\t".join(row) for row in self.length_rows())
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.to_tsv(), encoding="utf-8")
        return path


def merge_reports(a: EvalReport, b: EvalReport) -> EvalReport:
    """Case-weighted merge of two reports over disjoint example sets."""
    if a.k != b.k:
        raise EvaluationError(f"cannot merge reports at k={a.k} and k={b.k}")
    lengths = sorted(set(a.per_length) | set(b.per_length))
    per_length = {
        n: a.per_length.get(n, LengthStats()) + b.per_length.get(n, LengthStats()) for n in lengths
    }
    return EvalReport(a.k, a.overall + b.overall, per_length, a.scorer or b.scorer)


@dataclass(frozen=True)
class LengthComparison:
    length: int
    n_cases: int
    base_hits: int
    other_hits: int

    @property
    def improvement(self) -> Optional[float]:
        """Relative change in hits over the base scorer; None when the base scored nothing."""
        if not self.base_hits:
            return None
        return (self.other_hits - self.base_hits) / self.base_hits


def compare_by_length(base: EvalReport, other: EvalReport) -> List[LengthComparison]:
    if base.k != other.k or base.n_cases != other.n_cases:
        raise EvaluationError("reports are not over the same cases")
    rows = []
    for length in sorted(set(base.per_length) | set(other.per_length)):
        b = base.per_length.get(length, LengthStats())
        o = other.per_length.get(length, LengthStats())
        if b.n_cases != o.n_cases:
            raise EvaluationError(f"length {length}: {b.n_cases} vs {o.n_cases} cases")
        rows.append(LengthComparison(length, b.n_cases, b.hits, o.hits))
    return rows


# -----------------------------
# Evaluation
# -----------------------------


def evaluate(
    scorer: Scorer,
    examples: ExampleSet,
    k: int = 20,
    *,
    chunk_size: int = 1024,
) -> EvalReport:
    """Rank every (prefix, label) example with ``scorer`` and aggregate overall and by prefix length."""
    if not len(examples):
        raise EvaluationError("no test cases to evaluate")
    name = getattr(scorer, "name", type(scorer).__name__)
    with opik_trace("evaluate", metadata={"scorer": name, "cases": len(examples), "k": k}):
        ranks: List[np.ndarray] = []
        for start in range(0, len(examples), chunk_size):
            chunk = examples.examples[start : start + chunk_size]
            scores = scorer.score_batch([ex.prefix for ex in chunk])
            if scores.shape != (len(chunk), scorer.n_items):
                raise EvaluationError(
                    f"{name} returned scores of shape {scores.shape}, expected ({len(chunk)}, {scorer.n_items})"
                )
            ranks.append(ranks_for(scores, [ex.label for ex in chunk]))

        report = EvalReport.from_ranks(
            np.concatenate(ranks).tolist(), [len(ex.prefix) for ex in examples], k, name
        )
        record_metrics(recall=report.recall_at_k, mrr=report.mrr_at_k)
    logger.info(
        "%s: Recall@%d %.4f  MRR@%d %.4f over %d cases",
        name,
        k,
        float(report.recall_at_k),
        k,
        float(report.mrr_at_k),
        report.n_cases,
    )
    return report
