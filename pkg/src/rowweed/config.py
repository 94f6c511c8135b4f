"""Run configuration: one JSON object with a section per stage.

Every key has a default, so ``{}`` is a valid config. Unknown sections or
keys are rejected rather than ignored, since a typo would otherwise
silently fall back to a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .classifier import TrainConfig
from .errors import ConfigError
from .labeler import LabelingConfig
from .rowdetect import HoughConfig
from .superpixel import SlicConfig


@dataclass(frozen=True)
class SegmentConfig:
    opening_radius: int = 0
    exg_floor: float = 0.05


@dataclass(frozen=True)
class SynthConfig:
    preset: str = "bean_like"
    # FieldSpec fields applied on top of the preset
    overrides: dict = field(default_factory=dict)
    train_fields: int = 2
    test_fields: int = 3
    # each field's row direction is drawn uniformly from this range
    orientation_range_deg: tuple[float, float] = (-45.0, 45.0)
    # take the weed training samples from fields of another preset
    weeds_from: str | None = None

    def __post_init__(self):
        if self.train_fields < 1 or self.test_fields < 0:
            raise ValueError("need >= 1 training field and >= 0 test fields")
        lo, hi = self.orientation_range_deg
        if hi < lo:
            raise ValueError("orientation range is reversed")


@dataclass(frozen=True)
class InferenceConfig:
    stride: int = 16
    eps: float = 0.05
    background_fraction: float = 0.1

    def __post_init__(self):
        if not 1 <= self.stride <= 64:
            raise ValueError("inference stride must lie in [1, 64]")
        if not 0 <= self.eps < 0.5:
            raise ValueError("eps must lie in [0, 0.5)")


@dataclass(frozen=True)
class EvalConfig:
    angle_gate_deg: float = 2.0
    rho_gate_px: float = 10.0
    # held-out patches labelled from truth
    patch_stride: int = 32
    patch_purity: float = 0.9


SECTIONS = {
    "synth": SynthConfig,
    "segment": SegmentConfig,
    "hough": HoughConfig,
    "slic": SlicConfig,
    "labeling": LabelingConfig,
    "train": TrainConfig,
    "inference": InferenceConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthConfig = SynthConfig()
    segment: SegmentConfig = SegmentConfig()
    hough: HoughConfig = HoughConfig()
    slic: SlicConfig = SlicConfig()
    labeling: LabelingConfig = LabelingConfig()
    train: TrainConfig = TrainConfig()
    inference: InferenceConfig = InferenceConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = 0

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in SECTIONS}
        d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()
        for name, section in d.items():
            if name == "seed":
                cfg = replace(cfg, seed=_int(section, "seed"))
            else:
                cfg = cfg.with_section(name, section)
        return cfg

    def with_section(self, name: str, values: dict) -> "PipelineConfig":
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section {name!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"section {name!r} must be an object")
        current = getattr(self, name)
        known = {f.name for f in fields(current)}
        bad = set(values) - known
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        try:
            return replace(self, **{name: replace(current, **kw)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value in section {name!r}: {exc}") from exc

    def set(self, dotted: str, value) -> "PipelineConfig":
        """Override one ``section.key`` (or ``seed``)."""
        if dotted == "seed":
            return replace(self, seed=_int(value, "seed"))
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        if section == "synth" and key.startswith("overrides."):
            ov = dict(self.synth.overrides)
            ov[key.split(".", 1)[1]] = value
            return self.with_section("synth", {"overrides": ov})
        return self.with_section(section, {key: value})


def _int(v, name) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer")
    return v


def parse_value(text: str):
    """Command-line override values are JSON when they parse, else strings."""
    try:
        return json.loads(text)
    except ValueError:
        return text


def load_config(path=None, overrides: list[str] | None = None) -> PipelineConfig:
    """Config file (optional) plus ``section.key=value`` overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        cfg = PipelineConfig.from_dict(d)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        cfg = cfg.set(key.strip(), parse_value(value))
    return cfg
