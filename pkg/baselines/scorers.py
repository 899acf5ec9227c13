"""
POP, S-POP and Item-KNN over item indices ``1..m``.

Training input is a collection of index sessions (the training split after
filtering). Every scorer exposes ``n_items`` and ``score_batch`` so the
evaluation module treats them exactly like the network.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Sequence, Union

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
IndexSession = Sequence[int]

DEFAULT_LAMBDA = 20.0


class BaselineError(ValueError):
    pass


def _check_sessions(sessions: Iterable[IndexSession], n_items: int) -> List[IndexSession]:
    sessions = [list(s) for s in sessions]
    for s in sessions:
        if any(not 1 <= i <= n_items for i in s):
            raise BaselineError(f"session item outside 1..{n_items}: {s}")
    return sessions


# -----------------------------
# Popularity
# -----------------------------


@dataclass(frozen=True)
class PopModel:
    counts: np.ndarray  # counts[i - 1] = training clicks on item i

    @property
    def n_items(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def pop_train(sessions: Iterable[IndexSession], n_items: int) -> PopModel:
    counts = np.zeros(n_items, dtype=np.int64)
    for s in _check_sessions(sessions, n_items):
        np.add.at(counts, np.asarray(s, dtype=np.int64) - 1, 1)
    return PopModel(counts)


def pop_scores(model: PopModel, prefix: IndexSession) -> np.ndarray:
    return model.counts.astype(np.float64)


def spop_scores(model: PopModel, prefix: IndexSession) -> np.ndarray:
    """
    Clicks within the prefix first, global popularity second. The global
    term is scaled into [0, 1) so it only breaks ties between equal
    within-session counts.
    """
    within = np.bincount(np.asarray(prefix, dtype=np.int64) - 1, minlength=model.n_items)
    return within + model.counts / (model.total + 1.0)


# -----------------------------
# Item-KNN
# -----------------------------


@dataclass(frozen=True)
class ItemKnnModel:
    support: np.ndarray  # sessions containing each item
    cooccurrence: sparse.csr_matrix  # symmetric, zero diagonal
    lam: float = DEFAULT_LAMBDA
    exclude_self: bool = True

    @property
    def n_items(self) -> int:
        return self.support.size

    def similarity_rows(self, items: np.ndarray) -> np.ndarray:
        """``sim(a, j)`` for every ``a`` in ``items`` (1-based) and every item ``j``."""
        co = self.cooccurrence[items - 1].toarray()
        denom = np.sqrt(np.outer(self.support[items - 1], self.support)) + self.lam
        with np.errstate(divide="ignore", invalid="ignore"):
            sim = np.where(denom > 0, co / denom, 0.0)
        return sim


def itemknn_train(
    sessions: Iterable[IndexSession],
    n_items: int,
    lam: float = DEFAULT_LAMBDA,
    *,
    exclude_self: bool = True,
) -> ItemKnnModel:
    """Session-level co-presence: each session counts a pair at most once."""
    if lam < 0:
        raise BaselineError(f"lambda must be non-negative, got {lam}")
    sessions = _check_sessions(sessions, n_items)
    rows, cols = [], []
    for n, s in enumerate(sessions):
        for item in sorted(set(s)):
            rows.append(n)
            cols.append(item - 1)
    incidence = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(len(sessions), n_items)
    )
    co = (incidence.T @ incidence).tocsr()
    support = co.diagonal().astype(np.int64)
    co = (co - sparse.diags(support)).tocsr()
    co.eliminate_zeros()
    logger.info("item-knn: %d items, %d co-occurring pairs", n_items, co.nnz // 2)
    return ItemKnnModel(support, co, float(lam), exclude_self)


def itemknn_scores(model: ItemKnnModel, prefix: IndexSession) -> np.ndarray:
    return _itemknn_rows(model, [prefix])[0]


def _itemknn_rows(model: ItemKnnModel, prefixes: Sequence[IndexSession]) -> np.ndarray:
    last = np.array([p[-1] for p in prefixes], dtype=np.int64)
    sim = model.similarity_rows(last)
    if model.exclude_self:
        sim[np.arange(len(last)), last - 1] = -np.inf
    return sim


# -----------------------------
# Scorer interface
# -----------------------------


class BaselineScorer:
    name = "baseline"

    def __init__(self, model) -> None:
        self.model = model

    @property
    def n_items(self) -> int:
        return self.model.n_items

    def score(self, prefix: IndexSession) -> np.ndarray:
        raise NotImplementedError

    def score_batch(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        if not len(prefixes):
            return np.zeros((0, self.n_items))
        return np.vstack([self.score(p) for p in prefixes])


class PopScorer(BaselineScorer):
    name = "pop"

    def score(self, prefix: IndexSession) -> np.ndarray:
        return pop_scores(self.model, prefix)

    def score_batch(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        return np.tile(pop_scores(self.model, ()), (len(prefixes), 1))


class SPopScorer(BaselineScorer):
    name = "spop"

    def score(self, prefix: IndexSession) -> np.ndarray:
        return spop_scores(self.model, prefix)


class ItemKnnScorer(BaselineScorer):
    name = "itemknn"

    def score(self, prefix: IndexSession) -> np.ndarray:
        return itemknn_scores(self.model, prefix)

    def score_batch(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        if not len(prefixes):
            return np.zeros((0, self.n_items))
        return _itemknn_rows(self.model, prefixes)


BASELINES: Dict[str, Callable[..., BaselineScorer]] = {
    "pop": lambda sessions, n_items, **_: PopScorer(pop_train(sessions, n_items)),
    "spop": lambda sessions, n_items, **_: SPopScorer(pop_train(sessions, n_items)),
    "itemknn": lambda sessions, n_items, lam=DEFAULT_LAMBDA, exclude_self=True: ItemKnnScorer(
        itemknn_train(sessions, n_items, lam, exclude_self=exclude_self)
    ),
}


def train_baseline(name: str, sessions: Iterable[IndexSession], n_items: int, **options) -> BaselineScorer:
    try:
        factory = BASELINES[name]
    except KeyError:
        raise BaselineError(f"unknown baseline {name!r}; choose from {', '.join(BASELINES)}") from None
    return factory(sessions, n_items, **options)


# -----------------------------
# Text serialization
# -----------------------------
#
#   kind   a             b   value
#   meta   baseline      -   itemknn
#   meta   n_items       -   100
#   supp   <i>           -   <sessions>
#   co     <i>           <j> <sessions>      (i < j only)
#   count  <i>           -   <clicks>        (pop / spop)


def save_baseline(scorer: BaselineScorer, path: PathLike) -> Path:
    path = Path(path)
    model = scorer.model
    rows: List[List[str]] = [
        ["meta", "baseline", "-", scorer.name],
        ["meta", "n_items", "-", str(model.n_items)],
    ]
    if isinstance(model, PopModel):
        rows += [["count", str(i), "-", str(int(c))] for i, c in enumerate(model.counts, start=1)]
    else:
        rows += [
            ["meta", "lambda", "-", repr(model.lam)],
            ["meta", "exclude_self", "-", str(int(model.exclude_self))],
        ]
        rows += [["supp", str(i), "-", str(int(c))] for i, c in enumerate(model.support, start=1)]
        upper = sparse.triu(model.cooccurrence, k=1).tocoo()
        triples = sorted(zip(upper.row.tolist(), upper.col.tolist(), upper.data.tolist()))
        rows += [["co", str(i + 1), str(j + 1), str(int(v))] for i, j, v in triples]

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["kind", "a", "b", "value"])
        writer.writerows(rows)
    return path


def load_baseline(path: PathLike) -> BaselineScorer:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"baseline model not found: {path}")
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    if not rows or rows[0] != ["kind", "a", "b", "value"]:
        raise BaselineError(f"{path}: not a baseline model file")

    meta: Dict[str, str] = {}
    counts: Dict[int, int] = {}
    support: Dict[int, int] = {}
    co_rows, co_cols, co_vals = [], [], []
    try:
        for kind, a, b, value in rows[1:]:
            if kind == "meta":
                meta[a] = value
            elif kind == "count":
                counts[int(a)] = int(value)
            elif kind == "supp":
                support[int(a)] = int(value)
            elif kind == "co":
                i, j, v = int(a) - 1, int(b) - 1, int(value)
                co_rows += [i, j]
                co_cols += [j, i]
                co_vals += [v, v]
            else:
                raise BaselineError(f"{path}: unknown row kind {kind!r}")
        name, n_items = meta["baseline"], int(meta["n_items"])
    except (ValueError, KeyError) as exc:
        raise BaselineError(f"{path}: malformed baseline model ({exc})") from None

    if name in ("pop", "spop"):
        model = PopModel(np.array([counts.get(i, 0) for i in range(1, n_items + 1)], dtype=np.int64))
        return PopScorer(model) if name == "pop" else SPopScorer(model)
    if name == "itemknn":
        co = sparse.csr_matrix(
            (np.array(co_vals, dtype=np.int64), (co_rows, co_cols)), shape=(n_items, n_items)
        )
        model = ItemKnnModel(
            np.array([support.get(i, 0) for i in range(1, n_items + 1)], dtype=np.int64),
            co,
            float(meta.get("lambda", DEFAULT_LAMBDA)),
            meta.get("exclude_self", "1") == "1",
        )
        return ItemKnnScorer(model)
    raise BaselineError(f"{path}: unknown baseline {name!r}")
