"""Run configuration and its flat ``section.key = value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .networks import AggregatorConfig

STAGES = ("teacher", "aggregate", "distill", "no-kd-baseline", "l1-distill-baseline")
TEACHER_KINDS = ("teacher-cnn-a", "teacher-cnn-b", "teacher-windowed")


class ConfigError(ValueError):
    """Carries every violated constraint, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class TrainConfig:
    stage: str = "distill"
    scale: int = 2
    lr: float = 1e-4
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 1000
    iterations: int = 2000
    batch_size: int = 8
    patch_size: int = 32
    alpha: float = 0.1
    level: int = 1
    seed: int = 0
    distill_loss: str = "wavelet"
    teacher_kind: str = "teacher-cnn-a"
    teachers: tuple[str, ...] = ()
    student_feats: int = 16
    student_blocks: int = 4
    data_dir: str = ""
    val_dir: str = ""
    aggregator_ckpt: str = ""
    ckpt_every: int = 500
    precision: str = "f32"
    augment: bool = True
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)

    def validate(self) -> list[str]:
        errs = []
        if self.stage not in STAGES:
            errs.append(f"train.stage={self.stage!r} not in {STAGES}")
        if self.scale not in (2, 3, 4):
            errs.append(f"train.scale={self.scale} must be 2, 3 or 4")
        for name in ("lr", "lr_decay_factor", "iterations", "batch_size", "patch_size", "level",
                     "student_feats", "student_blocks", "ckpt_every"):
            if getattr(self, name) <= 0:
                errs.append(f"train.{name}={getattr(self, name)} must be positive")
        if self.lr_decay_every < 0:
            errs.append("train.lr_decay_every must be >= 0")
        if self.alpha < 0:
            errs.append(f"train.alpha={self.alpha} must be >= 0")
        if self.precision not in ("f32", "f64"):
            errs.append(f"train.precision={self.precision!r} must be f32 or f64")
        if self.distill_loss not in ("wavelet", "wavelet-hf", "dct", "l1"):
            errs.append(f"train.distill_loss={self.distill_loss!r} is unknown")
        if self.stage == "teacher" and self.teacher_kind not in TEACHER_KINDS:
            errs.append(f"train.teacher_kind={self.teacher_kind!r} not in {TEACHER_KINDS}")
        if self.stage in ("aggregate", "distill", "l1-distill-baseline") and not self.teachers:
            errs.append(f"train.teachers must list at least one teacher for stage {self.stage}")
        if self.stage in ("distill", "l1-distill-baseline") and not self.aggregator_ckpt:
            errs.append(f"train.aggregator_ckpt is required for stage {self.stage}")
        hr_patch = self.patch_size * self.scale
        if self.level > 0 and hr_patch % (2**self.level):
            errs.append(
                f"HR patch {hr_patch} (train.patch_size*train.scale) not divisible by 2^K={2**self.level}"
            )
        if self.distill_loss == "dct" and hr_patch % 8:
            errs.append(f"HR patch {hr_patch} not divisible by the 8x8 DCT block")
        if self.stage == "aggregate" and self.patch_size % self.aggregator.window:
            errs.append(
                f"train.patch_size={self.patch_size} not divisible by aggregator.window={self.aggregator.window}"
            )
        if self.aggregator.scale != self.scale:
            errs.append(f"aggregator.scale={self.aggregator.scale} != train.scale={self.scale}")
        if self.teachers and self.aggregator.teachers != len(self.teachers):
            errs.append(
                f"aggregator.teachers={self.aggregator.teachers} != number of train.teachers ({len(self.teachers)})"
            )
        errs += self.aggregator.validate()
        return errs

    def check(self) -> "TrainConfig":
        errs = self.validate()
        if errs:
            raise ConfigError(errs)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["teachers"] = list(self.teachers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        agg = AggregatorConfig(**d.pop("aggregator", {}))
        d["teachers"] = tuple(d.get("teachers", ()))
        return cls(aggregator=agg, **d)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def _convert(raw: str, kind, key: str):
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool, "str": str}.get(
        str(kind), None
    )
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw.strip()


def _field_types(cls) -> dict[str, str]:
    return {f.name: f.type for f in fields(cls)}


def apply_overrides(cfg: TrainConfig, pairs: list[str]) -> TrainConfig:
    """Apply ``section.key=value`` assignments; unknown keys are all reported together."""
    d = cfg.to_dict()
    tt, at = _field_types(TrainConfig), _field_types(AggregatorConfig)
    errs = []
    for pair in pairs:
        if "=" not in pair:
            errs.append(f"malformed assignment {pair!r} (expected key=value)")
            continue
        key, raw = (s.strip() for s in pair.split("=", 1))
        section, _, name = key.partition(".")
        try:
            if section == "train" and name in tt and name != "aggregator":
                if name == "teachers":
                    d[name] = [t.strip() for t in raw.split(",") if t.strip()]
                else:
                    d[name] = _convert(raw, tt[name], key)
            elif section == "aggregator" and name in at:
                d["aggregator"][name] = _convert(raw, at[name], key)
            else:
                errs.append(f"unknown config key {key!r}")
        except ValueError as exc:
            errs.append(f"bad value for {key}: {exc}")
    if errs:
        raise ConfigError(errs)
    return TrainConfig.from_dict(d)


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    pairs = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(line)
    return apply_overrides(base or TrainConfig(), pairs)


def dump_config(cfg: TrainConfig) -> str:
    d = cfg.to_dict()
    agg = d.pop("aggregator")
    lines = []
    for k, v in d.items():
        lines.append(f"train.{k} = {','.join(v) if isinstance(v, list) else v}")
    for k, v in agg.items():
        lines.append(f"aggregator.{k} = {v}")
    return "\n".join(lines) + "\n"
