"""
Preprocessing pipeline: click log -> sessions -> filtered corpus -> temporal
split -> prefix/label examples.

Every function is a pure transformation of its inputs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import timedelta
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import pandas as pd

from .records import (
    ClickEvent,
    ClickLog,
    ClickSchema,
    DatasetError,
    EmptyCorpusError,
    Example,
    ExampleSet,
    ItemVocab,
    MalformedInputError,
    Session,
    SessionCorpus,
    SplitError,
)

logger = logging.getLogger(__name__)

TimeSpan = Union[int, timedelta]
Rational = Union[Fraction, float, int, str]

_DIGITS = r"\d+"
# 10**18 ms is far past any real click and well inside int64.
_MAX_MS_DIGITS = 18
_MS_PER_DAY = 86_400_000


# -----------------------------
# Ingestion
# -----------------------------


def _integers(raw: pd.Series, max_digits: int) -> Tuple[pd.Series, pd.Series]:
    """Non-negative integers of at most ``max_digits`` significant digits; anything else is invalid."""
    valid = raw.str.fullmatch(_DIGITS).fillna(False).astype(bool)
    valid &= raw.str.lstrip("0").str.len() <= max_digits
    return raw.where(valid, "0").astype("int64"), valid


def _parse_timestamps(frame: pd.DataFrame, schema: ClickSchema) -> Tuple[pd.Series, pd.Series]:
    """Returns (milliseconds as int64 where valid, validity mask)."""
    raw = frame[schema.timestamp_column].str.strip()
    fmt = schema.timestamp_format

    if fmt in ("ms", "s"):
        ms, valid = _integers(raw, _MAX_MS_DIGITS - 3 if fmt == "s" else _MAX_MS_DIGITS)
        if fmt == "s":
            ms = ms * 1000
    elif fmt in ("iso", "date"):
        parsed = pd.to_datetime(
            raw,
            errors="coerce",
            utc=True,
            format="ISO8601" if fmt == "iso" else "%Y-%m-%d",
        )
        valid = parsed.notna()
        epoch = pd.Timestamp(0, tz="UTC")
        ms = ((parsed.where(valid, epoch) - epoch) // pd.Timedelta(1, "ms")).astype("int64")
        valid &= ms >= 0
    else:
        raise ValueError(f"unknown timestamp_format {fmt!r}")

    if schema.offset_column:
        offset = frame[schema.offset_column].str.strip()
        offsets, offset_ok = _integers(offset, _MAX_MS_DIGITS)
        ms = ms + offsets
        valid &= offset_ok

    return ms, valid


def load_clicks(
    path: Union[str, Path],
    schema: ClickSchema = ClickSchema(),
    *,
    max_malformed_fraction: float = 1.0,
) -> ClickLog:
    """
    Read a delimited UTF-8 click log with a header row.

    Rows with a bad timestamp, an empty session/item id or the wrong number of
    fields are skipped and counted. More than ``max_malformed_fraction`` of
    rejected rows aborts the load.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"click log not found: {path}")

    bad_lines: List[List[str]] = []

    def _reject(line: List[str]) -> None:
        bad_lines.append(line)
        return None

    try:
        frame = pd.read_csv(
            path,
            sep=schema.delimiter,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            engine="python",
            on_bad_lines=_reject,
        )
    except pd.errors.EmptyDataError:
        raise MalformedInputError(f"{path}: no header row") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise MalformedInputError(f"{path}: unparseable click log ({exc})") from exc

    missing = [c for c in schema.columns if c not in frame.columns]
    if missing:
        raise MalformedInputError(
            f"{path}: header {list(frame.columns)} lacks column(s) {missing}"
        )

    frame = frame.fillna("")
    sessions = frame[schema.session_column].str.strip()
    items = frame[schema.item_column].str.strip()
    ms, valid = _parse_timestamps(frame, schema)
    valid &= (sessions != "") & (items != "")

    malformed = int((~valid).sum()) + len(bad_lines)
    total = len(frame) + len(bad_lines)
    if malformed:
        logger.warning("%s: %d of %d rows malformed", path, malformed, total)
    if total and malformed / total > max_malformed_fraction:
        raise MalformedInputError(
            f"{path}: {malformed} of {total} rows malformed "
            f"(limit {max_malformed_fraction:.0%})"
        )

    events = [
        ClickEvent(session_id=s, timestamp=int(t), item_id=i)
        for s, t, i in zip(sessions[valid], ms[valid], items[valid])
    ]
    logger.info("%s: loaded %d clicks", path, len(events))
    return ClickLog(events=events, malformed=malformed)


def build_sessions(events: Iterable[ClickEvent]) -> SessionCorpus:
    """Group by session id; order clicks by timestamp and sessions by start time (both stable)."""
    groups: Dict[str, List[Tuple[int, int, str]]] = {}
    for position, ev in enumerate(events):
        groups.setdefault(ev.session_id, []).append((ev.timestamp, position, ev.item_id))

    sessions = []
    for session_id, clicks in groups.items():
        clicks.sort()
        sessions.append(Session(session_id, clicks[0][0], tuple(c[2] for c in clicks)))
    sessions.sort(key=lambda s: s.start)
    return SessionCorpus(tuple(sessions))


# -----------------------------
# Filtering
# -----------------------------


def build_vocab(corpus: SessionCorpus) -> ItemVocab:
    return ItemVocab.from_items(item for s in corpus for item in s.items)


def _filter_once(
    corpus: SessionCorpus, min_session_len: int, min_item_support: int
) -> SessionCorpus:
    counts = corpus.item_counts()
    kept = []
    for s in corpus:
        items = tuple(i for i in s.items if counts[i] >= min_item_support)
        if len(items) >= min_session_len:
            kept.append(Session(s.session_id, s.start, items))
    return SessionCorpus(tuple(kept))


def filter_corpus(
    corpus: SessionCorpus,
    min_session_len: int = 2,
    min_item_support: int = 5,
    *,
    fixpoint: bool = False,
) -> Tuple[SessionCorpus, ItemVocab]:
    """
    Drop items clicked fewer than ``min_item_support`` times, then sessions left
    shorter than ``min_session_len``. One pass unless ``fixpoint`` is set, in
    which case the two filters repeat until nothing changes.
    """
    if not len(corpus):
        raise EmptyCorpusError("cannot filter an empty corpus")

    current = corpus
    while True:
        filtered = _filter_once(current, min_session_len, min_item_support)
        if not fixpoint or filtered == current:
            break
        current = filtered

    if not len(filtered):
        raise EmptyCorpusError(
            f"no session survives filtering (min_session_len={min_session_len}, "
            f"min_item_support={min_item_support})"
        )
    logger.info(
        "filtered corpus: %d -> %d sessions, %d clicks",
        len(corpus),
        len(filtered),
        filtered.n_clicks,
    )
    return filtered, build_vocab(filtered)


def _as_ms(span: TimeSpan) -> int:
    if isinstance(span, timedelta):
        return int(span / timedelta(milliseconds=1))
    return int(span)


def temporal_split(
    corpus: SessionCorpus, holdout_duration: TimeSpan
) -> Tuple[SessionCorpus, SessionCorpus]:
    """Sessions starting within the last ``holdout_duration`` of the corpus go to test."""
    holdout = _as_ms(holdout_duration)
    if holdout <= 0:
        raise SplitError(f"holdout duration must be positive, got {holdout} ms")
    if not len(corpus):
        raise SplitError("cannot split an empty corpus")

    threshold = max(s.start for s in corpus) - holdout
    train = tuple(s for s in corpus if s.start <= threshold)
    test = tuple(s for s in corpus if s.start > threshold)
    if not train:
        raise SplitError(f"holdout of {holdout} ms leaves no training sessions")
    if not test:
        raise SplitError(f"holdout of {holdout} ms leaves no test sessions")
    logger.info("temporal split at %d: %d train / %d test sessions", threshold, len(train), len(test))
    return SessionCorpus(train), SessionCorpus(test)


def filter_test_items(
    test: SessionCorpus, train_vocab: ItemVocab, min_session_len: int = 2
) -> SessionCorpus:
    """Remove clicks on items the training data never saw; drop sessions left too short."""
    kept = []
    for s in test:
        items = tuple(i for i in s.items if i in train_vocab)
        if len(items) >= min_session_len:
            kept.append(Session(s.session_id, s.start, items))
    return SessionCorpus(tuple(kept))


def as_fraction(value: Rational) -> Fraction:
    """
    Exact rational for ``value``: ``"1/64"``, ``"0.1"``, ``3`` or a float read
    as its shortest decimal, so ``0.1`` is 1/10 rather than its binary value.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(str(value).strip())


def take_recent_fraction(train: SessionCorpus, fraction: Rational) -> SessionCorpus:
    """The latest ``ceil(fraction * count)`` sessions by start time."""
    frac = as_fraction(fraction)
    if not 0 < frac <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    ordered = sorted(train.sessions, key=lambda s: s.start)
    keep = math.ceil(frac * len(ordered))
    return SessionCorpus(tuple(ordered[len(ordered) - keep:]))


# -----------------------------
# Sequence splitting
# -----------------------------


def split_sequences(
    corpus: SessionCorpus,
    vocab: ItemVocab,
    max_len: int = 19,
    *,
    skip_unknown: bool = False,
) -> ExampleSet:
    """
    Session ``[x1..xn]`` yields ``([x1], x2), ([x1, x2], x3), ...`` with every
    prefix cut to its last ``max_len`` items.

    With ``skip_unknown`` items outside ``vocab`` are left out of prefixes and
    examples labelled with them are dropped instead of raising.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")

    examples: List[Example] = []
    for s in corpus:
        if skip_unknown:
            known = [vocab.index(i) if i in vocab else 0 for i in s.items]
        else:
            if len(s) < 2:
                raise DatasetError(f"session {s.session_id!r} has fewer than 2 clicks")
            known = [vocab.index(i) for i in s.items]

        for t in range(1, len(known)):
            label = known[t]
            prefix = tuple(i for i in known[:t] if i)[-max_len:]
            if label and prefix:
                examples.append(Example(prefix, label, s.session_id))
    return ExampleSet(tuple(examples))


# -----------------------------
# Statistics
# -----------------------------


@dataclass(frozen=True)
class CorpusStats:
    clicks: int
    train_sessions: int
    test_sessions: int
    items: int
    avg_length: float
    unscorable_test_cases: int = 0

    def rows(self) -> List[Tuple[str, str]]:
        return [
            ("clicks", str(self.clicks)),
            ("train_sessions", str(self.train_sessions)),
            ("test_sessions", str(self.test_sessions)),
            ("items", str(self.items)),
            ("avg_length", f"{self.avg_length:.2f}"),
            ("unscorable_test_cases", str(self.unscorable_test_cases)),
        ]


def corpus_stats(
    train: SessionCorpus, test: SessionCorpus, unscorable_test_cases: int = 0
) -> CorpusStats:
    sessions = len(train) + len(test)
    clicks = train.n_clicks + test.n_clicks
    items = len(set(train.item_counts()) | set(test.item_counts()))
    return CorpusStats(
        clicks=clicks,
        train_sessions=len(train),
        test_sessions=len(test),
        items=items,
        avg_length=clicks / sessions if sessions else 0.0,
        unscorable_test_cases=unscorable_test_cases,
    )


def days(n: float) -> int:
    """``n`` days in milliseconds."""
    return int(n * _MS_PER_DAY)
