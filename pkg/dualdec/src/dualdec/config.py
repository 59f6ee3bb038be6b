"""Model configuration."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class DualDecoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    max_len: int = 64
    cross_attn_layers: tuple[int, ...] = None  # type: ignore[assignment]  # default: every layer
    seed: int = 0
    bidirectional_guided: bool = False  # guided self-attention is causal by default

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.cross_attn_layers is None:
            object.__setattr__(self, "cross_attn_layers", tuple(range(self.n_layers)))
        else:
            layers = tuple(self.cross_attn_layers)
            if any(l < 0 or l >= self.n_layers for l in layers):
                raise ValueError(f"cross_attn_layers {layers} out of range")
            object.__setattr__(self, "cross_attn_layers", layers)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "d_model": self.d_model,
            "n_heads": self.n_heads, "n_layers": self.n_layers,
            "max_len": self.max_len, "cross_attn_layers": list(self.cross_attn_layers),
            "seed": self.seed, "bidirectional_guided": self.bidirectional_guided,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DualDecoderConfig":
        data = dict(data)
        data["cross_attn_layers"] = tuple(data["cross_attn_layers"])
        return cls(**data)


PAD_ID = 0
