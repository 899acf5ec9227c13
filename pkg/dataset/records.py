from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple


class DatasetError(Exception):
    """Base class for every preprocessing failure."""


class MalformedInputError(DatasetError):
    pass


class EmptyCorpusError(DatasetError):
    pass


class UnknownItemError(DatasetError, KeyError):
    def __init__(self, item_id: str) -> None:
        super().__init__(item_id)
        self.item_id = item_id

    def __str__(self) -> str:
        return f"unknown item id {self.item_id!r}"


class SplitError(DatasetError):
    pass


@dataclass(frozen=True)
class ClickEvent:
    session_id: str
    timestamp: int  # ms since epoch
    item_id: str

    def __post_init__(self) -> None:
        if not self.session_id or not self.item_id:
            raise MalformedInputError("session_id and item_id must be non-empty")
        if self.timestamp < 0:
            raise MalformedInputError(f"negative timestamp {self.timestamp}")


@dataclass
class ClickLog:
    """Events of a click file in file order, plus how many rows were rejected."""

    events: List[ClickEvent]
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[ClickEvent]:
        return iter(self.events)

    def __getitem__(self, i: int) -> ClickEvent:
        return self.events[i]


@dataclass(frozen=True)
class ClickSchema:
    """
    Column mapping for a delimited click log.

    timestamp_format:
      - "ms":   integer milliseconds since epoch
      - "s":    integer seconds since epoch
      - "iso":  ISO-8601 datetime strings
      - "date": calendar dates (YYYY-MM-DD); ``offset_column`` optionally adds
                integer milliseconds within the day
    """

    session_column: str = "session"
    timestamp_column: str = "ts"
    item_column: str = "item"
    delimiter: str = ","
    timestamp_format: str = "ms"
    offset_column: Optional[str] = None

    @property
    def columns(self) -> Tuple[str, ...]:
        cols = (self.session_column, self.timestamp_column, self.item_column)
        return cols + ((self.offset_column,) if self.offset_column else ())


@dataclass(frozen=True)
class Session:
    session_id: str
    start: int
    items: Tuple[str, ...]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class SessionCorpus:
    sessions: Tuple[Session, ...] = ()

    def __len__(self) -> int:
        return len(self.sessions)

    def __iter__(self) -> Iterator[Session]:
        return iter(self.sessions)

    def __getitem__(self, i: int) -> Session:
        return self.sessions[i]

    @property
    def n_clicks(self) -> int:
        return sum(len(s) for s in self.sessions)

    def item_counts(self) -> Counter:
        counts: Counter = Counter()
        for s in self.sessions:
            counts.update(s.items)
        return counts

    def by_id(self) -> Dict[str, Session]:
        return {s.session_id: s for s in self.sessions}


@dataclass(frozen=True)
class ItemVocab:
    """Item ids in index order: ``items[i]`` has index ``i + 1``; index 0 is padding."""

    items: Tuple[str, ...]
    _forward: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        forward = {item: i + 1 for i, item in enumerate(self.items)}
        if len(forward) != len(self.items):
            raise DatasetError("duplicate item ids in vocabulary")
        object.__setattr__(self, "_forward", forward)

    @classmethod
    def from_items(cls, items: Iterable[str]) -> "ItemVocab":
        """First-appearance order, duplicates skipped."""
        return cls(tuple(dict.fromkeys(items)))

    @property
    def m(self) -> int:
        return len(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._forward

    def index(self, item_id: str) -> int:
        try:
            return self._forward[item_id]
        except KeyError:
            raise UnknownItemError(item_id) from None

    def item(self, index: int) -> str:
        if not 1 <= index <= self.m:
            raise IndexError(f"item index {index} outside 1..{self.m}")
        return self.items[index - 1]


@dataclass(frozen=True)
class Example:
    prefix: Tuple[int, ...]
    label: int
    session_id: str = ""


@dataclass(frozen=True)
class ExampleSet:
    examples: Tuple[Example, ...] = ()

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    def __add__(self, other: "ExampleSet") -> "ExampleSet":
        return ExampleSet(self.examples + other.examples)

    def subset(self, indices: Iterable[int]) -> "ExampleSet":
        return ExampleSet(tuple(self.examples[i] for i in indices))
