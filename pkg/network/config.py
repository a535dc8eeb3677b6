"""Model hyperparameters"""

from dataclasses import asdict, dataclass, fields

from errors import ValidationError

VARIANTS = ("full", "no_tab", "encoder_subpixel", "vit_encoder")


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the network and its ablation variants"""

    embed_dim: int = 32
    heads: int = 4
    encoder_depth: int = 4
    n_fim: int = 2
    stl_per_tab: int = 4
    window: int = 8
    upsample: int = 4
    variant: str = "full"
    tau_min: float = 0.01
    mlp_ratio: float = 2.0
    bias_hidden: int = 64
    vit_patch: int = 4

    def validate(self):
        """Raise ValidationError unless every field is usable"""
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        for name in ("embed_dim", "heads", "window", "upsample", "bias_hidden", "vit_patch"):
            if getattr(self, name) < 1:
                raise ValidationError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("encoder_depth", "n_fim", "stl_per_tab"):
            if getattr(self, name) < 0:
                raise ValidationError(f"model.{name} must be >= 0, got {getattr(self, name)}")
        if self.embed_dim % self.heads:
            raise ValidationError(f"model.embed_dim {self.embed_dim} is not divisible by model.heads {self.heads}")
        if self.variant == "full" and self.stl_per_tab != 4:
            raise ValidationError("model.stl_per_tab must be 4 for the full variant")
        if self.tau_min <= 0:
            raise ValidationError("model.tau_min must be > 0")
        if self.mlp_ratio <= 0:
            raise ValidationError("model.mlp_ratio must be > 0")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown model config keys: {', '.join(unknown)}")
        return cls(**values).validate()
