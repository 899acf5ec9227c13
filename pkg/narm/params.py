from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from numerics.kernels import fan_in_bound, uniform_init

MODES = ("hybrid", "global", "local")
DECODERS = ("bilinear", "full")


@dataclass(frozen=True)
class NetworkConfig:
    """
    Shape and variant of the network.

    mode:      which session feature feeds the decoder (global = final hidden
               state, local = attention-weighted sum, hybrid = both stacked)
    decoder:   "bilinear" scores item i as emb_i' B c, "full" as row i of Wout c
    """

    n_items: int
    embedding_dim: int = 50
    hidden_dim: int = 100
    mode: str = "hybrid"
    decoder: str = "bilinear"
    use_bias: bool = False
    attention_softmax: bool = False
    truncation: int = 19

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        for name in ("n_items", "embedding_dim", "hidden_dim", "truncation"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")

    @property
    def repr_dim(self) -> int:
        """Dimension of the session representation c."""
        return 2 * self.hidden_dim if self.mode == "hybrid" else self.hidden_dim

    @property
    def uses_attention(self) -> bool:
        return self.mode != "global"

    def param_shapes(self) -> Dict[str, Tuple[int, int]]:
        m, d, h, c = self.n_items, self.embedding_dim, self.hidden_dim, self.repr_dim
        shapes: Dict[str, Tuple[int, int]] = {"Emb": (m + 1, d)}
        for gate in ("z", "r", ""):
            shapes[f"W{gate}"] = (h, d)
            shapes[f"U{gate}"] = (h, h)
        if self.use_bias:
            shapes.update(bz=(h, 1), br=(h, 1), bh=(h, 1))
        if self.uses_attention:
            shapes.update(A1=(h, h), A2=(h, h), v=(h, 1))
            if self.use_bias:
                shapes["ba"] = (h, 1)
        if self.decoder == "bilinear":
            shapes["B"] = (d, c)
        else:
            shapes["Wout"] = (m, c)
        if self.use_bias:
            shapes["bo"] = (m, 1)
        return shapes

    def echo(self) -> Dict[str, object]:
        return {
            "D": self.embedding_dim,
            "H": self.hidden_dim,
            "m": self.n_items,
            "truncation": self.truncation,
            "mode": self.mode,
            "decoder": self.decoder,
            "use_bias": self.use_bias,
            "attention_softmax": self.attention_softmax,
        }

    @classmethod
    def from_echo(cls, echo: Dict[str, object]) -> "NetworkConfig":
        return cls(
            n_items=int(echo["m"]),
            embedding_dim=int(echo["D"]),
            hidden_dim=int(echo["H"]),
            truncation=int(echo["truncation"]),
            mode=str(echo["mode"]),
            decoder=str(echo["decoder"]),
            use_bias=bool(echo["use_bias"]),
            attention_softmax=bool(echo["attention_softmax"]),
        )


@dataclass
class NarmParams:
    """Learnable weights by block name; ``Emb`` row 0 is the all-zero padding row."""

    config: NetworkConfig
    weights: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = self.config.param_shapes()
        if set(self.weights) != set(expected):
            raise ValueError(
                f"parameter blocks {sorted(self.weights)} do not match {sorted(expected)}"
            )
        for name, shape in expected.items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name}: shape {self.weights[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.config.param_shapes())

    def copy(self) -> "NarmParams":
        return NarmParams(self.config, {k: v.copy() for k, v in self.weights.items()})

    def replace(self, name: str, value: np.ndarray) -> "NarmParams":
        weights = dict(self.weights)
        weights[name] = value
        return NarmParams(self.config, weights)


@dataclass
class GradientSet:
    """One gradient block per parameter block, same shapes."""

    blocks: Dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: NarmParams) -> "GradientSet":
        return cls({name: np.zeros_like(params[name]) for name in params})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.blocks)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.blocks.values())))

    def scale(self, factor: float) -> None:
        for g in self.blocks.values():
            g *= factor


def init_params(
    config: NetworkConfig,
    rng: np.random.Generator,
    *,
    embed_bound: float = 0.1,
    weight_bound: Optional[float] = None,
) -> NarmParams:
    """
    Embeddings uniform on ``[-embed_bound, embed_bound]``, weight matrices uniform
    on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` (or ``weight_bound`` when given),
    biases zero.
    """
    weights: Dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes().items():
        if name.startswith("b"):
            weights[name] = np.zeros(shape)
        elif name == "Emb":
            emb = uniform_init(rng, shape, embed_bound)
            emb[0] = 0.0
            weights[name] = emb
        else:
            fan_in = shape[0] if name == "v" else shape[1]  # v enters transposed
            bound = weight_bound if weight_bound is not None else fan_in_bound(fan_in)
            weights[name] = uniform_init(rng, shape, bound)
    return NarmParams(config, weights)
