from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from numerics.kernels import finite_difference_grad, make_rng, relative_error, uniform_init

from .network import backward, draw_masks, forward
from .params import NarmParams, NetworkConfig, init_params

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-5
# Parameters are drawn wider than the training init so no block sits near zero.
POINT_BOUND = 0.5


@dataclass
class GradCheckReport:
    """Worst relative error per parameter block over all checked seeds."""

    errors: Dict[str, float] = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE
    seeds: int = 0

    def record(self, name: str, error: float) -> None:
        self.errors[name] = max(error, self.errors.get(name, 0.0))

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    def rows(self) -> List[Tuple[str, str, str]]:
        return [
            (name, f"{err:.3e}", "ok" if err <= self.tolerance else "FAIL")
            for name, err in self.errors.items()
        ]


def random_point(config: NetworkConfig, seed: int) -> Tuple[NarmParams, np.random.Generator]:
    rng = make_rng(seed)
    params = init_params(config, rng, embed_bound=POINT_BOUND, weight_bound=POINT_BOUND)
    for name in params:
        if name.startswith("b"):
            params.weights[name] = uniform_init(rng, params[name].shape, POINT_BOUND)
    return params, rng


def check_gradients(
    config: NetworkConfig,
    seeds: Iterable[int] = range(20),
    *,
    prefix_len: int = 3,
    eps: float = 1e-5,
    tolerance: float = DEFAULT_TOLERANCE,
    dropout: bool = False,
    corrupt: Optional[str] = None,
) -> GradCheckReport:
    """
    Compare ``backward`` against central differences of ``forward``'s loss at
    random parameter points, one random prefix and label per seed.

    ``dropout`` fixes one pair of dropout masks per seed and checks the
    train-mode gradients through them. ``corrupt`` names a block whose
    analytic gradient is perturbed before comparison (harness self-test).
    """
    if corrupt is not None and corrupt not in config.param_shapes():
        raise ValueError(f"no parameter block named {corrupt!r}")

    report = GradCheckReport(tolerance=tolerance)
    for seed in seeds:
        params, rng = random_point(config, seed)
        prefix = [int(i) for i in rng.integers(1, config.n_items + 1, size=prefix_len)]
        label = int(rng.integers(1, config.n_items + 1))
        masks = draw_masks(params, rng, prefix_len) if dropout else None
        mode = "train" if dropout else "eval"

        fwd = forward(params, prefix, label, mode, masks=masks)
        grads = backward(params, prefix, label, fwd)
        if corrupt is not None:
            grads.blocks[corrupt] += 1e-3

        for name in params:

            def objective(theta, name=name):
                return forward(params.replace(name, theta), prefix, label, mode, masks=masks).loss

            numeric = finite_difference_grad(objective, params[name], eps)
            report.record(name, relative_error(grads[name], numeric))
        report.seeds += 1

    logger.info(
        "gradient check over %d seeds: max relative error %.3e (%s)",
        report.seeds,
        report.max_error,
        "pass" if report.passed else "FAIL",
    )
    return report
