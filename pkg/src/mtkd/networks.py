"""Super-resolution networks: desk-scale teachers, the compact student and the
knowledge-aggregation network that fuses teacher outputs.

Every model maps ``N,H,W,3`` (LR) to ``N,sH,sW,3``; the aggregator instead
maps a list of ``N,sH,sW,3`` teacher outputs to one ``N,sH,sW,3`` image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .dctswin import DCTSwinBlock
from .nn import Conv2d, Linear, Module
from .tensor import DimensionError, Tensor

MODEL_KINDS = ("teacher-cnn-a", "teacher-cnn-b", "teacher-windowed", "student", "aggregator")


def pad_to_multiple(x: Tensor, multiple: int) -> tuple[Tensor, int, int]:
    """Reflect-pad the bottom/right edge so H and W are multiples of ``multiple``."""
    h, w = x.shape[1], x.shape[2]
    ph, pw = (-h) % multiple, (-w) % multiple
    return T.reflect_pad(x, ph, pw), h, w


class ResBlock(Module):
    def __init__(self, feats: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(feats, feats, rng)
        self.conv2 = Conv2d(feats, feats, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.relu(self.conv1(x)))


class ChannelAttention(Module):
    def __init__(self, feats: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        mid = max(1, feats // reduction)
        self.down = Linear(feats, mid, rng, std=1.0 / np.sqrt(feats))
        self.up = Linear(mid, feats, rng, std=1.0 / np.sqrt(mid))

    def forward(self, x: Tensor) -> Tensor:
        n, _, _, c = x.shape
        pooled = T.mean(x, axis=(1, 2))
        w = T.sigmoid(self.up(T.relu(self.down(pooled))))
        return x * T.reshape(w, (n, 1, 1, c))


class RCABlock(Module):
    def __init__(self, feats: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(feats, feats, rng)
        self.conv2 = Conv2d(feats, feats, rng)
        self.ca = ChannelAttention(feats, reduction, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.ca(self.conv2(T.relu(self.conv1(x))))


class Upsampler(Module):
    """Sub-pixel upsampling: conv to ``C*s^2`` channels, then pixel shuffle."""

    def __init__(self, feats: int, scale: int, rng: np.random.Generator):
        super().__init__()
        self.scale = scale
        self.conv = Conv2d(feats, feats * scale * scale, rng)

    def forward(self, x: Tensor) -> Tensor:
        return T.pixel_shuffle(self.conv(x), self.scale)


class SrModel(Module):
    """Common surface for every network: ``kind``, ``scale`` and ``arch``."""

    kind = "abstract"

    def __init__(self, scale: int, arch: dict):
        super().__init__()
        if scale < 1:
            raise ValueError(f"scale must be positive, got {scale}")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "arch", dict(arch))

    def describe(self) -> dict:
        return {"kind": self.kind, "scale": self.scale, "arch": dict(self.arch)}

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[-1] != 3:
            raise DimensionError(f"{self.kind}: expected N,H,W,3 input, got {x.shape}")


class ResidualSR(SrModel):
    """Shallow conv -> residual blocks -> conv + global skip -> sub-pixel upsample -> conv.

    ``block="res"`` is the EDSR-style family (student, teacher a);
    ``block="rca"`` adds channel attention (teacher b).
    """

    def __init__(self, kind: str, scale: int, feats: int, blocks: int, rng: np.random.Generator,
                 block: str = "res", reduction: int = 4):
        super().__init__(scale, {"feats": feats, "blocks": blocks, "block": block, "reduction": reduction})
        object.__setattr__(self, "kind", kind)
        self.head = Conv2d(3, feats, rng)
        if block == "res":
            self.body = [ResBlock(feats, rng) for _ in range(blocks)]
        elif block == "rca":
            self.body = [RCABlock(feats, reduction, rng) for _ in range(blocks)]
        else:
            raise ValueError(f"unknown block type {block!r}")
        self.body_conv = Conv2d(feats, feats, rng)
        self.up = Upsampler(feats, scale, rng)
        self.tail = Conv2d(feats, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        f = self.head(x)
        y = f
        for b in self.body:
            y = b(y)
        y = self.body_conv(y) + f
        return self.tail(self.up(y))


class WindowedSR(SrModel):
    """Small plain-Swin network (no DCT) used as the windowed-attention teacher."""

    kind = "teacher-windowed"

    def __init__(self, scale: int, feats: int, depth: int, heads: int, window: int, rng: np.random.Generator):
        super().__init__(scale, {"feats": feats, "depth": depth, "heads": heads, "window": window})
        self.head = Conv2d(3, feats, rng)
        self.block = DCTSwinBlock(feats, heads, window, depth, rng, use_dct=False)
        self.body_conv = Conv2d(feats, feats, rng)
        self.up = Upsampler(feats, scale, rng)
        self.tail = Conv2d(feats, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        self.check_input(x)
        x, h, w = pad_to_multiple(x, self.arch["window"])
        f = self.head(x)
        y = self.body_conv(self.block(f)) + f
        y = self.tail(self.up(y))
        s = self.scale
        return y[:, : s * h, : s * w, :] if y.shape[1] != s * h or y.shape[2] != s * w else y


@dataclass
class AggregatorConfig:
    teachers: int = 3
    scale: int = 2
    channels: int = 24
    blocks: int = 4
    layers: int = 2
    window: int = 8
    heads: int = 3
    mlp_ratio: float = 2.0
    use_dct: bool = True
    use_mlp: bool = True

    def validate(self) -> list[str]:
        errs = []
        for name in ("teachers", "scale", "channels", "blocks", "layers", "window", "heads"):
            if getattr(self, name) < 1:
                errs.append(f"aggregator.{name} must be >= 1")
        if self.heads >= 1 and self.channels % self.heads:
            errs.append(f"aggregator.channels={self.channels} not divisible by aggregator.heads={self.heads}")
        return errs


class Aggregator(SrModel):
    """Fuses N teacher outputs into one enhanced HR estimate.

    concat -> pixel_unshuffle(s) -> conv (F_s) -> B DCTSwin blocks -> conv (F_d)
    -> F_s + F_d -> conv to C*s^2 -> pixel_shuffle(s) -> conv to 3 channels.
    """

    kind = "aggregator"

    def __init__(self, cfg: AggregatorConfig, rng: np.random.Generator):
        errs = cfg.validate()
        if errs:
            raise ValueError("; ".join(errs))
        super().__init__(cfg.scale, asdict(cfg))
        object.__setattr__(self, "cfg", cfg)
        s, c = cfg.scale, cfg.channels
        self.in_channels = 3 * cfg.teachers * s * s
        self.shallow = Conv2d(self.in_channels, c, rng)
        self.blocks = [
            DCTSwinBlock(c, cfg.heads, cfg.window, cfg.layers, rng,
                         mlp_ratio=cfg.mlp_ratio, use_dct=cfg.use_dct, use_mlp=cfg.use_mlp)
            for _ in range(cfg.blocks)
        ]
        self.deep_conv = Conv2d(c, c, rng)
        self.up = Upsampler(c, s, rng)
        self.out = Conv2d(c, 3, rng)

    def forward(self, teacher_outputs: list[Tensor]) -> Tensor:
        if len(teacher_outputs) != self.cfg.teachers:
            raise DimensionError(f"aggregator expects {self.cfg.teachers} teacher outputs, got {len(teacher_outputs)}")
        shapes = [tuple(t.shape) for t in teacher_outputs]
        if len(set(shapes)) != 1:
            raise DimensionError(f"aggregator: teacher output shapes differ: {shapes}")
        x = T.concat(teacher_outputs, axis=-1) if len(teacher_outputs) > 1 else teacher_outputs[0]
        s = self.scale
        x, h, w = pad_to_multiple(x, s * self.cfg.window)
        x = T.pixel_unshuffle(x, s)
        assert x.shape[-1] == self.in_channels
        f_s = self.shallow(x)
        y = f_s
        for blk in self.blocks:
            y = blk(y)
        y = self.deep_conv(y) + f_s
        y = self.out(self.up(y))
        if y.shape[1] != h or y.shape[2] != w:
            y = y[:, :h, :w, :]
        return y


@dataclass
class ModelSpec:
    """Serializable recipe for rebuilding any network."""

    kind: str
    scale: int
    arch: dict = field(default_factory=dict)
    seed: int = 0


DEFAULT_ARCH = {
    "student": {"feats": 16, "blocks": 4},
    "teacher-cnn-a": {"feats": 24, "blocks": 4},
    "teacher-cnn-b": {"feats": 24, "blocks": 3, "reduction": 4},
    "teacher-windowed": {"feats": 24, "depth": 2, "heads": 3, "window": 4},
}


def build_model(spec: ModelSpec) -> SrModel:
    rng = np.random.default_rng(spec.seed)
    if spec.kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {spec.kind!r}; expected one of {MODEL_KINDS}")
    arch = {**DEFAULT_ARCH.get(spec.kind, {}), **spec.arch}
    if spec.kind == "student":
        return ResidualSR("student", spec.scale, arch["feats"], arch["blocks"], rng)
    if spec.kind == "teacher-cnn-a":
        return ResidualSR("teacher-cnn-a", spec.scale, arch["feats"], arch["blocks"], rng)
    if spec.kind == "teacher-cnn-b":
        return ResidualSR("teacher-cnn-b", spec.scale, arch["feats"], arch["blocks"], rng,
                          block="rca", reduction=arch.get("reduction", 4))
    if spec.kind == "teacher-windowed":
        return WindowedSR(spec.scale, arch["feats"], arch["depth"], arch["heads"], arch["window"], rng)
    cfg = AggregatorConfig(**{**arch, "scale": spec.scale})
    return Aggregator(cfg, rng)


def student_forward(lr: Tensor, model: SrModel) -> Tensor:
    if model.kind != "student":
        raise ValueError(f"student_forward needs a student model, got {model.kind}")
    return model(lr)


def teacher_forward(lr: Tensor, model: SrModel) -> Tensor:
    """Frozen-teacher inference (no tape is recorded)."""
    if not model.kind.startswith("teacher"):
        raise ValueError(f"teacher_forward needs a teacher model, got {model.kind}")
    with T.no_grad():
        return model(lr)


def aggregator_forward(teacher_outputs: list[Tensor], model: Aggregator) -> Tensor:
    return model(teacher_outputs)
