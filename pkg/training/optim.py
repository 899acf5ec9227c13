from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from narm.params import GradientSet, NarmParams


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    """First and second moments per parameter block, plus the step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NarmParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(params[name]) for name in params},
            v={name: np.zeros_like(params[name]) for name in params},
        )


def adam_update(
    params: NarmParams, grads: GradientSet, state: AdamState, lr: float
) -> Tuple[NarmParams, AdamState]:
    """One bias-corrected Adam step, applied to ``params`` in place."""
    for name in grads:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(f"non-finite gradient in parameter block {name!r}")

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name in params:
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params.weights[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def clip_by_norm(grads: GradientSet, max_norm: float) -> float:
    """Rescale ``grads`` so their global norm is at most ``max_norm``; returns the norm before clipping."""
    norm = grads.global_norm()
    if max_norm > 0 and norm > max_norm:
        grads.scale(max_norm / norm)
    return norm
