from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..codec import DEFAULT_MAX_OBJECTS
from ..geometry import GridSpec


@dataclass(frozen=True)
class ModelConfig:
    """Shapes and hyperparameters of the layout transformer.

    ``K`` is the text vocabulary size; ``S`` and ``C`` fix the joint
    classification space (``S*S*C`` grid/category classes plus EOS).
    """

    K: int
    S: int = 7
    C: int = 80
    d: int = 32
    heads: int = 4
    layers_enc: int = 2
    layers_dec: int = 2
    d_ff: int = 64
    d_reg: int = 32
    lam: float = 2.0
    max_objects: int = DEFAULT_MAX_OBJECTS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if min(self.K, self.S, self.C, self.d, self.heads, self.d_ff, self.d_reg, self.max_objects) < 1:
            raise ValueError("sizes must be positive")
        if self.layers_enc < 0 or self.layers_dec < 0:
            raise ValueError("layer counts must be non-negative")

    @property
    def n_classes(self) -> int:
        """Output classes: every joint index plus EOS."""
        return self.S * self.S * self.C + 1

    @property
    def n_dec_tokens(self) -> int:
        """Decoder input vocabulary: joint indices, EOS and BOS."""
        return self.S * self.S * self.C + 2

    def gridspec(self) -> GridSpec:
        return GridSpec(S=self.S, C=self.C)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})
