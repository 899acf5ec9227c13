from __future__ import annotations

import logging
import os
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Dict, Iterator, Optional

logger = logging.getLogger(__name__)

_in_trace: ContextVar[bool] = ContextVar("narmrec_in_trace", default=False)


def _opik_enabled() -> bool:
    # Spans are only emitted when the SDK has somewhere to send them.
    return bool(os.getenv("OPIK_API_KEY") or os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT"))


@contextmanager
def _opik_context(kind: str, name: str, metadata: Optional[Dict[str, Any]]) -> Iterator[None]:
    if not _opik_enabled():
        yield
        return

    try:
        from opik import context_manager  # type: ignore
    except Exception:
        logger.debug("opik is configured but not importable; %s %r not recorded", kind, name)
        yield
        return

    start = getattr(context_manager, f"start_as_current_{kind}")
    update = getattr(context_manager, f"update_current_{kind}")
    with start(name=name):
        if metadata:
            try:
                update(metadata=metadata)
            except Exception:
                pass
        yield


@contextmanager
def opik_trace(name: str, *, metadata: Optional[Dict[str, Any]] = None) -> Iterator[None]:
    """
    Trace a top-level pipeline stage (preprocess, train, evaluate).

    Inside another stage (validation during training) it opens a span under
    that trace instead. No-op unless Opik is installed and configured.
    """
    if _in_trace.get():
        with _opik_context("span", name, metadata):
            yield
        return
    token = _in_trace.set(True)
    try:
        with _opik_context("trace", name, metadata):
            yield
    finally:
        _in_trace.reset(token)


@contextmanager
def opik_span(name: str, *, metadata: Optional[Dict[str, Any]] = None) -> Iterator[None]:
    """Span under the current trace: one training epoch, one scoring pass."""
    with _opik_context("span", name, metadata):
        yield


def record_metrics(**metrics: float) -> None:
    """Attach scalar metrics (epoch loss, validation recall) to the current span."""
    if not _opik_enabled():
        return
    try:
        from opik.context_manager import update_current_span  # type: ignore

        update_current_span(metadata={k: float(v) for k, v in metrics.items()})
    except Exception:
        pass
