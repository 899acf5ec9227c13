"""
Delimited-text formats written by preprocessing.

  examples:  ``<space-separated prefix indices>\\t<label index>``
  vocab:     ``item_id\\tindex``
  sessions:  ``session_id\\tstart\\t<space-separated indices>``
  stats:     ``key\\tvalue``

Every writer produces byte-identical output for identical input.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, List, Tuple, Union

from .records import DatasetError, Example, ExampleSet, ItemVocab, SessionCorpus

PathLike = Union[str, Path]

IndexedSession = Tuple[str, int, Tuple[int, ...]]


def _lines(path: PathLike) -> List[str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    return path.read_text(encoding="utf-8").splitlines()


def write_examples(examples: ExampleSet, path: PathLike) -> None:
    body = "".join(
        " ".join(map(str, ex.prefix)) + "\t" + str(ex.label) + "\n" for ex in examples
    )
    Path(path).write_text(body, encoding="utf-8")


def read_examples(path: PathLike) -> ExampleSet:
    examples = []
    for n, line in enumerate(_lines(path), start=1):
        if not line.strip():
            continue
        try:
            prefix, label = line.split("\t")
            examples.append(Example(tuple(int(i) for i in prefix.split()), int(label)))
        except ValueError:
            raise DatasetError(f"{path}:{n}: expected '<prefix>\\t<label>', got {line!r}") from None
        if not examples[-1].prefix:
            raise DatasetError(f"{path}:{n}: empty prefix")
    return ExampleSet(tuple(examples))


def write_vocab(vocab: ItemVocab, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["item_id", "index"])
        for index, item in enumerate(vocab.items, start=1):
            writer.writerow([item, index])


def read_vocab(path: PathLike) -> ItemVocab:
    rows = list(csv.reader(_lines(path), delimiter="\t"))
    if not rows or rows[0] != ["item_id", "index"]:
        raise DatasetError(f"{path}: not a vocabulary file")
    items = []
    for n, row in enumerate(rows[1:], start=1):
        if len(row) != 2 or row[1] != str(n):
            raise DatasetError(f"{path}: indices must run 1..m in order (row {n})")
        items.append(row[0])
    return ItemVocab(tuple(items))


def write_sessions(corpus: SessionCorpus, vocab: ItemVocab, path: PathLike) -> None:
    body = "".join(
        f"{s.session_id}\t{s.start}\t{' '.join(str(vocab.index(i)) for i in s.items)}\n"
        for s in corpus
    )
    Path(path).write_text(body, encoding="utf-8")


def read_sessions(path: PathLike) -> List[IndexedSession]:
    sessions = []
    for n, line in enumerate(_lines(path), start=1):
        try:
            session_id, start, items = line.split("\t")
            sessions.append((session_id, int(start), tuple(int(i) for i in items.split())))
        except ValueError:
            raise DatasetError(f"{path}:{n}: malformed session row") from None
    return sessions


def read_session_examples(path: PathLike, max_len: int = 19) -> ExampleSet:
    """Prefix/label examples of an indexed sessions file, each tagged with its session id."""
    return ExampleSet(
        tuple(
            Example(items[:t][-max_len:], items[t], session_id)
            for session_id, _, items in read_sessions(path)
            for t in range(1, len(items))
        )
    )


def write_table(rows: Iterable[Tuple[str, str]], path: PathLike, header=("key", "value")) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
