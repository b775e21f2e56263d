"""Window partitioning, shifted-window attention and DCTSwin layers/blocks."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .nn import LayerNorm, Linear, Module, _trunc_normal
from .tensor import DimensionError, Tensor
from .transforms import DctPlan, dct2d, idct2d

MASK_VALUE = -1e4


@dataclass(frozen=True)
class WindowLayout:
    window: int
    shift: int
    height: int
    width: int

    def __post_init__(self):
        ws = self.window
        if self.height % ws or self.width % ws:
            raise DimensionError(
                f"window layout: H={self.height}, W={self.width} must be divisible by window {ws}"
            )
        if self.shift not in (0, ws // 2):
            raise ValueError(f"window layout: shift must be 0 or {ws // 2}, got {self.shift}")

    @property
    def window_count(self) -> int:
        return (self.height // self.window) * (self.width // self.window)

    @property
    def tokens(self) -> int:
        return self.window * self.window


def window_partition(x: Tensor, layout: WindowLayout) -> Tensor:
    """NHWC -> ``[N*nW, Ws, Ws, C]``; cyclically shifts by ``-shift`` first."""
    n, h, w, c = x.shape
    if (h, w) != (layout.height, layout.width):
        raise DimensionError(f"window_partition: input {h}x{w} does not match layout {layout.height}x{layout.width}")
    ws = layout.window
    if layout.shift:
        x = T.roll(x, (-layout.shift, -layout.shift), (1, 2))
    y = T.reshape(x, (n, h // ws, ws, w // ws, ws, c))
    y = T.permute(y, (0, 1, 3, 2, 4, 5))
    return T.reshape(y, (n * layout.window_count, ws, ws, c))


def window_reverse(windows: Tensor, layout: WindowLayout) -> Tensor:
    """Inverse of :func:`window_partition`, including the un-shift."""
    ws, h, w = layout.window, layout.height, layout.width
    nw = layout.window_count
    if windows.ndim != 4 or windows.shape[1:3] != (ws, ws) or windows.shape[0] % nw:
        raise DimensionError(
            f"window_reverse: {windows.shape} is not a whole number of [{nw}, {ws}, {ws}, C] window sets"
        )
    n = windows.shape[0] // nw
    c = windows.shape[-1]
    y = T.reshape(windows, (n, h // ws, w // ws, ws, ws, c))
    y = T.permute(y, (0, 1, 3, 2, 4, 5))
    y = T.reshape(y, (n, h, w, c))
    if layout.shift:
        y = T.roll(y, (layout.shift, layout.shift), (1, 2))
    return y


@lru_cache(maxsize=64)
def _mask_array(window: int, shift: int, height: int, width: int) -> np.ndarray:
    ws = window
    nw = (height // ws) * (width // ws)
    if shift == 0:
        return np.zeros((nw, ws * ws, ws * ws))
    label = np.zeros((height, width))
    cnt = 0
    for hs in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
        for wsl in (slice(0, -ws), slice(-ws, -shift), slice(-shift, None)):
            label[hs, wsl] = cnt
            cnt += 1
    lw = label.reshape(height // ws, ws, width // ws, ws).transpose(0, 2, 1, 3).reshape(nw, ws * ws)
    diff = lw[:, None, :] - lw[:, :, None]
    return np.where(diff != 0, MASK_VALUE, 0.0)


def attention_mask(layout: WindowLayout) -> np.ndarray:
    """Additive ``[nW, Ws^2, Ws^2]`` mask: 0 where attention is allowed."""
    return _mask_array(layout.window, layout.shift, layout.height, layout.width)


@lru_cache(maxsize=16)
def relative_position_index(window: int) -> np.ndarray:
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return rel[0] * (2 * window - 1) + rel[1]


class WindowAttention(Module):
    """Multi-head self-attention inside windows with a relative-position bias table."""

    def __init__(self, dim: int, heads: int, window: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise DimensionError(f"attention: embedding dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.rel_bias = T.parameter(_trunc_normal(rng, ((2 * window - 1) ** 2, heads)))

    def position_bias(self) -> Tensor:
        t = self.window * self.window
        idx = relative_position_index(self.window).reshape(-1)
        b = T.getitem(self.rel_bias, (idx,))
        return T.permute(T.reshape(b, (t, t, self.heads)), (2, 0, 1))

    def forward(self, tokens: Tensor, mask: np.ndarray | None = None, return_attn: bool = False):
        bn, t, c = tokens.shape
        if c != self.dim:
            raise DimensionError(f"attention: token dim {c} != configured dim {self.dim}")
        h = self.heads
        d = c // h
        qkv = T.permute(T.reshape(self.qkv(tokens), (bn, t, 3, h, d)), (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = T.matmul(q * (d**-0.5), T.permute(k, (0, 1, 3, 2)))
        attn = attn + self.position_bias()
        if mask is not None and np.any(mask):
            nw = mask.shape[0]
            if bn % nw:
                raise DimensionError(f"attention: {bn} windows not a multiple of mask windows {nw}")
            m = mask.astype(attn.dtype)[None, :, None]
            attn = T.reshape(T.reshape(attn, (bn // nw, nw, h, t, t)) + m, (bn, h, t, t))
        attn = T.softmax(attn)
        out = T.matmul(attn, v)
        out = T.reshape(T.permute(out, (0, 2, 1, 3)), (bn, t, c))
        out = self.proj(out)
        return (out, attn) if return_attn else out


def w_msa(tokens: Tensor, attn: WindowAttention, mask: np.ndarray | None = None) -> Tensor:
    return attn(tokens, mask)


class DCTSTL(Module):
    """LN -> window partition -> DCT -> (S)W-MSA -> IDCT -> reverse, with residual.

    ``use_dct=False`` gives a plain Swin layer; ``use_mlp`` adds the usual
    LN -> MLP(GELU) residual sublayer afterwards.
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        window: int,
        shift: int,
        rng: np.random.Generator,
        mlp_ratio: float = 2.0,
        use_dct: bool = True,
        use_mlp: bool = True,
    ):
        super().__init__()
        self.window, self.shift = window, shift
        self.use_dct, self.use_mlp = use_dct, use_mlp
        self.plan = DctPlan(window)
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng)
        if use_mlp:
            hidden = int(dim * mlp_ratio)
            self.norm2 = LayerNorm(dim)
            self.fc1 = Linear(dim, hidden, rng)
            self.fc2 = Linear(hidden, dim, rng)

    def layout(self, x: Tensor) -> WindowLayout:
        return WindowLayout(self.window, self.shift, x.shape[1], x.shape[2])

    def forward(self, x: Tensor) -> Tensor:
        layout = self.layout(x)
        n, h, w, c = x.shape
        ws = self.window
        y = self.norm1(x)
        win = window_partition(y, layout)
        if self.use_dct:
            win = dct2d(win, self.plan)
        tok = T.reshape(win, (win.shape[0], ws * ws, c))
        tok = self.attn(tok, attention_mask(layout))
        win = T.reshape(tok, (tok.shape[0], ws, ws, c))
        if self.use_dct:
            win = idct2d(win, self.plan)
        x = x + window_reverse(win, layout)
        if self.use_mlp:
            x = x + self.fc2(T.gelu(self.fc1(self.norm2(x))))
        return x


def dctstl_forward(x: Tensor, layer: DCTSTL) -> Tensor:
    return layer(x)


class DCTSwinBlock(Module):
    """``L`` DCTSTLs; the 1st, 3rd, ... are unshifted, the 2nd, 4th, ... shifted by Ws/2."""

    def __init__(self, dim: int, heads: int, window: int, depth: int, rng: np.random.Generator, **kw):
        super().__init__()
        if depth < 1:
            raise ValueError(f"DCTSwin block needs at least one layer, got {depth}")
        self.layers = [
            DCTSTL(dim, heads, window, 0 if i % 2 == 0 else window // 2, rng, **kw) for i in range(depth)
        ]

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def dctswin_block_forward(x: Tensor, block: DCTSwinBlock) -> Tensor:
    return block(x)
