from __future__ import annotations

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes and component switches.

    ``proj_dim`` is the width of the projected direction features g(v); the
    forward embedding W_a[h, x] lives in the same space, so the full-fidelity
    layout has ``proj_dim == 2 * hidden``.
    """

    vocab_size: int = 64
    embed_dim: int = 32
    hidden: int = 64
    feature_dim: int = 96
    proj_dim: int = 128
    marker_tile: int = 4
    max_instruction_len: int = 40
    dropout: float = 0.0
    regret: bool = True
    marker: bool = True
    oscillation_block: bool = True
    max_steps: int = 20

    @property
    def scored_dim(self):
        return self.proj_dim + (self.marker_tile if self.marker else 0)

    @property
    def uses_w_fr(self):
        return self.regret or self.marker

    def variant(self, **flags):
        return replace(self, **flags)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


DESK_MODEL = ModelConfig()

FULL_FIDELITY_MODEL = ModelConfig(
    embed_dim=256, hidden=512, feature_dim=2176, proj_dim=1024, marker_tile=32, dropout=0.5)
