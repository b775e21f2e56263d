"""PSNR and SSIM on 8-bit-range images (HxWxC float arrays in 0..255)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

_Y_WEIGHTS = np.array([65.481, 128.553, 24.966]) / 255.0


@dataclass
class MetricResult:
    psnr: float
    ssim: float
    mode: str = "Y"
    crop: int = 0


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma in the 16..235 studio range, for RGB input in 0..255."""
    return img[..., :3] @ _Y_WEIGHTS + 16.0


def _prepare(ref, test, mode: str, crop: int) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"metric inputs differ in shape: {ref.shape} vs {test.shape}")
    if ref.ndim != 3:
        raise ValueError(f"metric inputs must be HxWxC, got {ref.shape}")
    if crop:
        ref = ref[crop:-crop, crop:-crop]
        test = test[crop:-crop, crop:-crop]
    if mode == "Y":
        return rgb_to_y(ref)[..., None], rgb_to_y(test)[..., None]
    if mode == "RGB":
        return ref, test
    raise ValueError(f"unknown metric mode {mode!r}; expected 'Y' or 'RGB'")


def psnr(ref, test, mode: str = "Y", crop: int = 0, max_val: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``inf``."""
    r, t = _prepare(ref, test, mode, crop)
    mse = np.mean((r - t) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(max_val**2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray, c1: float, c2: float) -> float:
    def filt(a):
        return signal.correlate2d(a, win, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(ref, test, mode: str = "Y", crop: int = 0, data_range: float = 255.0,
         win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over valid positions
    (and over channels in RGB mode)."""
    r, t = _prepare(ref, test, mode, crop)
    if r.shape[0] < win_size or r.shape[1] < win_size:
        raise ValueError(f"ssim: image {r.shape[:2]} smaller than the {win_size}x{win_size} window")
    win = gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    return float(np.mean([_ssim_channel(r[..., i], t[..., i], win, c1, c2) for i in range(r.shape[-1])]))


def evaluate_pair(ref, test, mode: str = "Y", crop: int = 0) -> MetricResult:
    return MetricResult(psnr(ref, test, mode, crop), ssim(ref, test, mode, crop), mode, crop)
