from __future__ import annotations

import argparse
import logging
import typing
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

from django.core.management.base import BaseCommand, CommandError

from baselines.scorers import BaselineError
from dataset.records import DatasetError, ItemVocab
from dataset.textio import read_examples, read_vocab
from evaluation.ranking import EvaluationError
from narm.checkpoint import CheckpointError, load_checkpoint
from narm.params import NarmParams
from numerics.kernels import NonFiniteError, ShapeError
from training.config import ConfigError
from training.loop import read_best_pointer
from training.optim import TrainingError

from .config import RunConfig

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
VERIFICATION_FAILURE = 1

# Raised by the pipeline for bad input or bad options.
INPUT_ERRORS = (
    ConfigError,
    DatasetError,
    CheckpointError,
    EvaluationError,
    BaselineError,
    ShapeError,
    FileNotFoundError,
    IndexError,
    ValueError,
)

TRAIN_FILE = "train.tsv"
TEST_FILE = "test.tsv"
VOCAB_FILE = "vocab.tsv"
SESSIONS_FILE = "train_sessions.tsv"
TEST_SESSIONS_FILE = "test_sessions.tsv"
STATS_FILE = "stats.tsv"
MODEL_DIR = "model"


def flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _arg_type(hint: Any) -> Any:
    if typing.get_origin(hint) is Union:
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    return hint


class NarmCommand(BaseCommand):
    """
    Base for the pipeline commands.

    Every command takes ``--config FILE`` and one flag per RunConfig field in
    ``config_fields`` (all fields when None). Flags default to None so that only
    the ones actually given override the file.
    """

    config_fields: Optional[Tuple[str, ...]] = None

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--config", metavar="FILE", help="key=value run configuration file")
        hints = typing.get_type_hints(RunConfig)
        for f in fields(RunConfig):
            if self.config_fields is not None and f.name not in self.config_fields:
                continue
            kind = _arg_type(hints[f.name])
            if kind is bool:
                parser.add_argument(flag(f.name), action=argparse.BooleanOptionalAction, default=None)
            else:
                parser.add_argument(flag(f.name), type=kind, default=None, metavar=f.name.upper())
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser: argparse.ArgumentParser) -> None:
        pass

    def load_config(self, options: Dict[str, Any]) -> RunConfig:
        names = self.config_fields or tuple(f.name for f in fields(RunConfig))
        return RunConfig.load(options.get("config"), {name: options.get(name) for name in names})

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
            options.pop("config", None)
            return self.run(config, **options)
        except CommandError:
            raise
        except (TrainingError, NonFiniteError) as exc:
            raise CommandError(str(exc), returncode=VERIFICATION_FAILURE) from exc
        except INPUT_ERRORS as exc:
            raise CommandError(_message(exc), returncode=USAGE_ERROR) from exc

    def run(self, config: RunConfig, **options) -> Optional[str]:
        raise NotImplementedError

    # -----------------------------
    # Shared readers
    # -----------------------------

    def read_vocab(self, config: RunConfig) -> ItemVocab:
        return read_vocab(config.out / VOCAB_FILE)

    def read_examples(self, config: RunConfig, name: str):
        return read_examples(config.out / name)

    def checkpoint_path(self, config: RunConfig) -> Path:
        if config.checkpoint:
            return Path(config.checkpoint)
        _, path = read_best_pointer(config.out / MODEL_DIR)
        return path

    def load_model(self, config: RunConfig) -> NarmParams:
        path = self.checkpoint_path(config)
        logger.debug("loading checkpoint %s", path)
        return load_checkpoint(path)

    def write_rows(self, rows: Iterable[Iterable[Any]]) -> None:
        for row in rows:
            self.stdout.write("\t".join(str(v) for v in row))


def _message(exc: BaseException) -> str:
    # KeyError subclasses repr their argument in str(); prefer the class's own text.
    if isinstance(exc, KeyError) and type(exc).__str__ is KeyError.__str__:
        return str(exc.args[0]) if exc.args else type(exc).__name__
    return str(exc)
