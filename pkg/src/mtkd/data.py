"""Dataset ingestion, bicubic degradation and paired patch sampling."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Unusable dataset or sampling configuration."""


# ---------------------------------------------------------------------------
# bicubic resampling


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax <= 2, far, 0.0))


def _mirror(idx: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    m = np.mod(idx, period)
    return np.where(m < n, m, period - 1 - m)


def resize_weights(in_len: int, out_len: int, scale: float, antialias: bool = True) -> np.ndarray:
    """Dense ``[out_len, in_len]`` bicubic interpolation matrix (MATLAB imresize convention)."""
    kscale = scale if (antialias and scale < 1) else 1.0
    width = 4.0 / kscale
    u = np.arange(1, out_len + 1, dtype=np.float64)
    x = u / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(x - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kscale * cubic(kscale * (x[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    mat = np.zeros((out_len, in_len))
    src = _mirror(idx.astype(np.int64) - 1, in_len)
    for r in range(out_len):
        np.add.at(mat[r], src[r], w[r])
    return mat


def bicubic_downsample(img: np.ndarray, s: int) -> np.ndarray:
    """Downscale an HxWxC float image by integer factor ``s`` (antialiased bicubic, a=-0.5)."""
    h, w = img.shape[:2]
    if h % s or w % s:
        raise DataError(f"bicubic_downsample: {h}x{w} not divisible by {s}")
    wh = resize_weights(h, h // s, 1.0 / s)
    ww = resize_weights(w, w // s, 1.0 / s)
    x = np.asarray(img, dtype=np.float64)
    return np.einsum("oh,hwc->owc", wh, np.einsum("pw,hwc->hpc", ww, x))


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Float image in 0..1 to rounded, clipped 8-bit."""
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# ingestion


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PNG":
            raise DataError(f"{path.name}: not a PNG file ({im.format})")
        if im.mode != "RGB":
            raise DataError(f"{path.name}: expected 8-bit RGB, found mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


def write_png(path: Path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(path, format="PNG")


@dataclass
class PairedDataset:
    names: list[str]
    hr: list[np.ndarray]
    lr: list[np.ndarray]
    scale: int
    skipped: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.names)

    def subset(self, idx) -> "PairedDataset":
        idx = list(idx)
        return PairedDataset([self.names[i] for i in idx], [self.hr[i] for i in idx],
                             [self.lr[i] for i in idx], self.scale)

    def manifest(self) -> dict:
        return {
            "scale": self.scale,
            "pairs": [
                {"name": n, "hr_shape": list(h.shape), "lr_shape": list(l.shape),
                 "hr_sha1": hashlib.sha1(h.tobytes()).hexdigest(),
                 "lr_sha1": hashlib.sha1(l.tobytes()).hexdigest()}
                for n, h, l in zip(self.names, self.hr, self.lr)
            ],
            "skipped": list(self.skipped),
        }


def ingest_dataset(hr_dir, scale: int, cache_dir=None) -> PairedDataset:
    """Load every PNG in ``hr_dir``, crop to multiples of ``scale`` and derive bicubic LR.

    LR images are cached as PNGs under ``cache_dir/x{scale}`` together with a
    ``manifest.json`` listing pairs and skipped files.
    """
    hr_dir = Path(hr_dir)
    if not hr_dir.is_dir():
        raise DataError(f"dataset directory {hr_dir} does not exist")
    names, hrs, lrs, skipped = [], [], [], []
    for path in sorted(p for p in hr_dir.iterdir() if p.is_file()):
        try:
            img = read_png(path)
        except Exception as exc:  # unreadable files are skipped, not fatal
            reason = str(exc) if isinstance(exc, DataError) else f"{path.name}: unreadable ({type(exc).__name__})"
            log.warning("skipping %s", reason)
            skipped.append({"name": path.name, "reason": reason})
            continue
        h, w = img.shape[:2]
        img = img[: h - h % scale, : w - w % scale]
        if img.shape[0] == 0 or img.shape[1] == 0:
            skipped.append({"name": path.name, "reason": f"{path.name}: smaller than scale {scale}"})
            continue
        lr = to_uint8(bicubic_downsample(img / 255.0, scale))
        names.append(path.stem)
        hrs.append(img)
        lrs.append(lr)
    if not names:
        raise DataError(f"no usable PNG images in {hr_dir}")
    ds = PairedDataset(names, hrs, lrs, scale, skipped)
    if cache_dir is not None:
        out = Path(cache_dir) / f"x{scale}"
        out.mkdir(parents=True, exist_ok=True)
        for n, lr in zip(names, lrs):
            write_png(out / f"{n}.png", lr)
        (out / "manifest.json").write_text(json.dumps(ds.manifest(), indent=1, sort_keys=True))
    return ds


# ---------------------------------------------------------------------------
# synthetic desk-scale images


def synthetic_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """A structured RGB test image: smooth gradient, stripes and anti-aliased shapes."""
    ss = 4
    big = size * ss
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = np.zeros((size, size, 3))
    for c in range(3):
        a, b, c0 = rng.uniform(-0.4, 0.4, 3)
        base[..., c] = 0.5 + a * xx + b * yy + 0.1 * c0
    freq = rng.uniform(3, 10)
    theta = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)))
    tint = rng.uniform(0, 0.25, 3)
    base = np.clip(base + stripes[..., None] * tint - tint / 2, 0, 1)
    canvas = Image.fromarray(to_uint8(base)).resize((big, big), Image.NEAREST)
    draw = ImageDraw.Draw(canvas)
    for _ in range(int(rng.integers(4, 9))):
        color = tuple(int(v) for v in rng.integers(0, 256, 3))
        x0, y0 = rng.uniform(-0.1, 0.9, 2) * big
        w, h = rng.uniform(0.08, 0.5, 2) * big
        box = [float(x0), float(y0), float(x0 + w), float(y0 + h)]
        kind = int(rng.integers(0, 3))
        if kind == 0:
            draw.rectangle(box, fill=color)
        elif kind == 1:
            draw.ellipse(box, fill=color)
        else:
            draw.line(box, fill=color, width=int(rng.integers(ss, 4 * ss)))
    canvas = canvas.filter(ImageFilter.BoxBlur(ss / 2)).resize((size, size), Image.BOX)
    return np.asarray(canvas, dtype=np.uint8)


def make_synthetic_dataset(out_dir, count: int, size: int = 96, seed: int = 0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        p = out / f"img_{i:03d}.png"
        write_png(p, synthetic_image(rng, size))
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# patch sampling


def augment(img: np.ndarray, flip: bool, rot: int) -> np.ndarray:
    if flip:
        img = img[:, ::-1]
    if rot:
        img = np.rot90(img, rot, axes=(0, 1))
    return np.ascontiguousarray(img)


class PatchSampler:
    """Seeded sampler of co-located LR/HR patches with flip/rotation augmentation.

    ``extras`` are additional HR-resolution images per pair (e.g. precomputed
    teacher outputs) that are cropped and augmented exactly like the HR image.
    """

    def __init__(self, dataset: PairedDataset, patch: int, seed: int = 0, augment: bool = True,
                 extras: list[list[np.ndarray]] | None = None):
        if len(dataset) == 0:
            raise DataError("patch sampler needs a non-empty dataset")
        smallest = min(min(l.shape[:2]) for l in dataset.lr)
        if patch > smallest:
            raise DataError(f"LR patch {patch} larger than smallest LR image side {smallest}")
        self.ds = dataset
        self.patch = patch
        self.scale = dataset.scale
        self.augment = augment
        self.extras = extras or []
        self.rng = np.random.default_rng(seed)

    def get_state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state

    def draw(self) -> tuple[int, int, int, bool, int]:
        i = int(self.rng.integers(len(self.ds)))
        h, w = self.ds.lr[i].shape[:2]
        y = int(self.rng.integers(h - self.patch + 1))
        x = int(self.rng.integers(w - self.patch + 1))
        flip = bool(self.rng.integers(2)) if self.augment else False
        rot = int(self.rng.integers(4)) if self.augment else 0
        return i, y, x, flip, rot

    def crop(self, i: int, y: int, x: int, flip: bool, rot: int) -> list[np.ndarray]:
        p, s = self.patch, self.scale
        lr = self.ds.lr[i][y : y + p, x : x + p]
        hr_win = (slice(s * y, s * (y + p)), slice(s * x, s * (x + p)))
        out = [lr, self.ds.hr[i][hr_win]] + [e[i][hr_win] for e in self.extras]
        return [augment(a, flip, rot) for a in out]

    def sample(self, batch: int) -> list[np.ndarray]:
        """Return ``[LR, HR, *extras]`` stacked NHWC float32 arrays in 0..1."""
        items = [self.crop(*self.draw()) for _ in range(batch)]
        out = []
        for k in range(len(items[0])):
            arr = np.stack([it[k] for it in items])
            out.append(arr.astype(np.float32) / 255.0 if arr.dtype == np.uint8 else arr.astype(np.float32))
        return out


def sample_batch(sampler: PatchSampler, batch: int) -> tuple[np.ndarray, np.ndarray]:
    lr, hr = sampler.sample(batch)[:2]
    return lr, hr
