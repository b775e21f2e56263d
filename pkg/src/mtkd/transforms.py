"""Orthonormal blockwise 2-D DCT and multi-level Haar DWT.

Both transforms are linear, so their backward passes are the adjoint maps
(the inverse transforms, by orthonormality).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import DimensionError, Tensor, _make, getitem

BANDS = ("LL", "LH", "HL", "HH")


@lru_cache(maxsize=None)
def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``B`` (rows are frequencies), float64."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    b = np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    b[0] *= np.sqrt(1.0 / n)
    b[1:] *= np.sqrt(2.0 / n)
    return b


@dataclass(frozen=True)
class DctPlan:
    window: int
    basis: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"DCT window must be positive, got {self.window}")
        if self.basis is None:
            object.__setattr__(self, "basis", dct_basis(self.window))


def _apply_sep(x: np.ndarray, left: np.ndarray) -> np.ndarray:
    # y[n,k,l,c] = sum_ij left[k,i] left[l,j] x[n,i,j,c], done as one GEMM with kron(left, left)
    n, w, _, c = x.shape
    k = np.kron(left, left)
    y = k @ x.reshape(n, w * w, c).transpose(1, 0, 2).reshape(w * w, n * c)
    return np.ascontiguousarray(y.reshape(w * w, n, c).transpose(1, 0, 2)).reshape(n, w, w, c)


def _check_windows(x: Tensor, plan: DctPlan, what: str) -> None:
    w = plan.window
    if x.ndim != 4 or x.shape[1] != w or x.shape[2] != w:
        raise DimensionError(f"{what}: expected windows [n, {w}, {w}, C], got {x.shape}")


def dct2d(windows: Tensor, plan: DctPlan) -> Tensor:
    """Per-channel separable orthonormal 2-D DCT-II of ``[n, Ws, Ws, C]`` windows."""
    _check_windows(windows, plan, "dct2d")
    b = plan.basis.astype(windows.data.dtype)

    def bw(g):
        return (_apply_sep(g, b.T),)

    return _make(_apply_sep(windows.data, b), (windows,), bw, "dct2d")


def idct2d(coeffs: Tensor, plan: DctPlan) -> Tensor:
    _check_windows(coeffs, plan, "idct2d")
    b = plan.basis.astype(coeffs.data.dtype)

    def bw(g):
        return (_apply_sep(g, b),)

    return _make(_apply_sep(coeffs.data, b.T), (coeffs,), bw, "idct2d")


# ---------------------------------------------------------------------------
# Haar wavelet


def _haar_fwd(x: np.ndarray) -> np.ndarray:
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    s_ab, d_ab = a + b, a - b
    s_cd, d_cd = c + d, c - d
    return 0.5 * np.stack([s_ab + s_cd, s_ab - s_cd, d_ab + d_cd, d_ab - d_cd])


def _haar_inv(bands: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = bands
    n, h, w, c = ll.shape
    out = np.empty((n, 2 * h, 2 * w, c), dtype=ll.dtype)
    out[:, 0::2, 0::2] = 0.5 * (ll + lh + hl + hh)
    out[:, 0::2, 1::2] = 0.5 * (ll + lh - hl - hh)
    out[:, 1::2, 0::2] = 0.5 * (ll - lh + hl - hh)
    out[:, 1::2, 1::2] = 0.5 * (ll - lh - hl + hh)
    return out


def haar_analysis(x: Tensor) -> Tensor:
    """One Haar level: NHWC image -> ``[4, N, H/2, W/2, C]`` stacked (LL, LH, HL, HH).

    For a 2x2 block ``[[a, b], [c, d]]``: LL=(a+b+c+d)/2, LH=(a+b-c-d)/2,
    HL=(a-b+c-d)/2, HH=(a-b-c+d)/2.
    """
    if x.ndim != 4 or x.shape[1] % 2 or x.shape[2] % 2:
        raise DimensionError(f"haar_analysis: NHWC input with even H, W required, got {x.shape}")

    def bw(g):
        return (_haar_inv(g),)

    return _make(_haar_fwd(x.data), (x,), bw, "haar_analysis")


def haar_synthesis(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> Tensor:
    shapes = {t.shape for t in (ll, lh, hl, hh)}
    if len(shapes) != 1:
        raise DimensionError(f"haar_synthesis: band shapes differ: {sorted(shapes)}")

    def bw(g):
        return tuple(_haar_fwd(g))

    data = _haar_inv(np.stack([ll.data, lh.data, hl.data, hh.data]))
    return _make(data, (ll, lh, hl, hh), bw, "haar_synthesis")


@dataclass
class SubbandPyramid:
    """Bands keyed by ``(level, name)``; LL only at the deepest level."""

    level: int
    bands: dict[tuple[int, str], Tensor]

    def __len__(self) -> int:
        return len(self.bands)

    def keys(self):
        return self.bands.keys()

    def __getitem__(self, key: tuple[int, str]) -> Tensor:
        return self.bands[key]

    def detail_keys(self):
        return [k for k in self.bands if k[1] != "LL"]


def dwt2d(image: Tensor, level: int = 1) -> SubbandPyramid:
    """Multi-level orthonormal Haar analysis; emits ``3*level + 1`` bands."""
    if level < 1:
        raise ValueError(f"dwt2d: level must be >= 1, got {level}")
    if image.ndim != 4:
        raise DimensionError(f"dwt2d: expected NHWC image, got shape {image.shape}")
    f = 2**level
    _, h, w, _ = image.shape
    if h % f or w % f:
        raise DimensionError(
            f"dwt2d: H={h} and W={w} must be divisible by 2^K={f} for K={level}"
        )
    bands: dict[tuple[int, str], Tensor] = {}
    cur = image
    for k in range(1, level + 1):
        stacked = haar_analysis(cur)
        for i, name in enumerate(BANDS[1:], start=1):
            bands[(k, name)] = getitem(stacked, i)
        cur = getitem(stacked, 0)
    bands[(level, "LL")] = cur
    return SubbandPyramid(level, bands)


def idwt2d(pyramid: SubbandPyramid) -> Tensor:
    """Exact synthesis inverse of :func:`dwt2d`."""
    K = pyramid.level
    expected = [(K, "LL")] + [(k, b) for k in range(1, K + 1) for b in BANDS[1:]]
    missing = [key for key in expected if key not in pyramid.bands]
    if missing:
        raise KeyError(f"idwt2d: pyramid is missing bands {missing}")
    cur = pyramid.bands[(K, "LL")]
    for k in range(K, 0, -1):
        b = pyramid.bands
        cur = haar_synthesis(cur, b[(k, "LH")], b[(k, "HL")], b[(k, "HH")])
    return cur
