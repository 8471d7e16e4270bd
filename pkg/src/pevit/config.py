"""Model configuration and MLP capacity strategies."""

from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Union

from .errors import ConfigError


@dataclass(frozen=True)
class Baseline:
    label = "Baseline"


@dataclass(frozen=True)
class Grouped:
    """Consecutive runs of ``group_size`` blocks read one MLP storage."""

    group_size: int = 2
    label = "GroupedMLP"


@dataclass(frozen=True)
class Shallow:
    """Every block keeps its own MLP, narrowed to ``width_ratio`` of the baseline width."""

    width_ratio: Fraction = Fraction(1, 2)
    label = "ShallowMLP"

    def __post_init__(self):
        object.__setattr__(self, "width_ratio", as_fraction(self.width_ratio))


MLPVariant = Union[Baseline, Grouped, Shallow]

VARIANT_NAMES = ("baseline", "grouped", "shallow")


def as_fraction(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    try:
        return Fraction(value)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"width ratio {value!r} is not a rational number") from exc


def make_variant(name, group_size=2, width_ratio=Fraction(1, 2)):
    name = str(name).lower()
    if name == "baseline":
        return Baseline()
    if name == "grouped":
        return Grouped(int(group_size))
    if name == "shallow":
        return Shallow(width_ratio)
    raise ConfigError(f"unknown variant {name!r}; expected one of {', '.join(VARIANT_NAMES)}")


def variant_name(variant):
    return {Baseline: "baseline", Grouped: "grouped", Shallow: "shallow"}[type(variant)]


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    patch_size: int = 16
    in_channels: int = 3
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_hidden: int = 3072
    num_classes: int = 1000
    drop_path_rate: float = 0.1
    variant: MLPVariant = field(default_factory=Baseline)

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("image_size", "patch_size", "in_channels", "embed_dim", "depth",
                    "num_heads", "mlp_hidden", "num_classes")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ConfigError(f"drop_path_rate must lie in [0, 1), got {self.drop_path_rate}")
        v = self.variant
        if isinstance(v, Grouped):
            if v.group_size < 1 or self.depth % v.group_size:
                raise ConfigError(
                    f"depth {self.depth} is not divisible by group_size {v.group_size}"
                )
        elif isinstance(v, Shallow):
            width = v.width_ratio * self.mlp_hidden
            if not 0 < v.width_ratio <= 1:
                raise ConfigError(f"width_ratio must lie in (0, 1], got {v.width_ratio}")
            if width.denominator != 1:
                raise ConfigError(
                    f"width_ratio {v.width_ratio} x mlp_hidden {self.mlp_hidden} is not an integer"
                )
        elif not isinstance(v, Baseline):
            raise ConfigError(f"unknown MLP variant {v!r}")

    @property
    def num_patches(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def num_tokens(self):
        return self.num_patches + 1

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def mlp_width(self):
        """Hidden width of each MLP after the variant transform."""
        if isinstance(self.variant, Shallow):
            return int(self.variant.width_ratio * self.mlp_hidden)
        return self.mlp_hidden

    @property
    def expansion_ratio(self):
        return Fraction(self.mlp_width, self.embed_dim)

    def sharing_map(self):
        """Block index -> MLP storage index."""
        if isinstance(self.variant, Grouped):
            g = self.variant.group_size
            return {i: i // g for i in range(self.depth)}
        return {i: i for i in range(self.depth)}

    @property
    def num_mlp_storages(self):
        return len(set(self.sharing_map().values()))

    def with_variant(self, variant):
        return replace(self, variant=variant)

    def to_dict(self):
        d = asdict(self)
        d.pop("variant")
        d["variant"] = variant_name(self.variant)
        if isinstance(self.variant, Grouped):
            d["group_size"] = self.variant.group_size
        if isinstance(self.variant, Shallow):
            d["width_ratio"] = str(self.variant.width_ratio)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        variant = make_variant(
            d.pop("variant", "baseline"),
            d.pop("group_size", 2),
            d.pop("width_ratio", Fraction(1, 2)),
        )
        unknown = set(d) - {f for f in cls.__dataclass_fields__ if f != "variant"}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(variant=variant, **d)


VIT_B16 = ModelConfig()

TINY = ModelConfig(
    image_size=32,
    patch_size=4,
    embed_dim=64,
    depth=4,
    num_heads=4,
    mlp_hidden=256,
    num_classes=10,
)

PRESETS = {"vit_b16": VIT_B16, "tiny": TINY}
