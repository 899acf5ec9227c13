from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict

from narm.params import DECODERS, MODES, NetworkConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 512
    epochs: int = 30
    embedding_dim: int = 50
    hidden_dim: int = 100
    truncation: int = 19
    dropout_embed: float = 0.25
    dropout_repr: float = 0.50
    validation_fraction: float = 0.10
    seed: int = 0
    mode: str = "hybrid"
    decoder: str = "bilinear"
    use_bias: bool = False
    attention_softmax: bool = False
    embed_init_bound: float = 0.1
    clip_norm: float = 0.0
    show_progress: bool = False

    def validate(self) -> "TrainConfig":
        for name in ("batch_size", "epochs", "embedding_dim", "hidden_dim", "truncation"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("dropout_embed", "dropout_repr", "validation_fraction"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be non-negative, got {self.clip_norm}")
        if self.embed_init_bound <= 0:
            raise ConfigError(f"embed_init_bound must be positive, got {self.embed_init_bound}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"decoder must be one of {', '.join(DECODERS)}, got {self.decoder!r}")
        return self

    def network(self, n_items: int) -> NetworkConfig:
        return NetworkConfig(
            n_items=n_items,
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            mode=self.mode,
            decoder=self.decoder,
            use_bias=self.use_bias,
            attention_softmax=self.attention_softmax,
            truncation=self.truncation,
        )

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))
