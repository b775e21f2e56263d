"""Quick invariant suite behind ``mtkd selftest``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .dctswin import DCTSTL, DCTSwinBlock, WindowAttention, WindowLayout, attention_mask
from .gradcheck import check_gradients, readout
from .losses import loss_dis
from .tensor import Tensor
from .transforms import DctPlan, dct2d, dwt2d, idct2d, idwt2d


def _dct_roundtrip(rng):
    plan = DctPlan(8)
    with T.precision("f64"):
        x = Tensor(rng.standard_normal((200, 8, 8, 3)))
        err = np.abs(idct2d(dct2d(x, plan), plan).data - x.data).max()
    return err < 1e-12, f"max err {err:.2e}"


def _dwt_roundtrip(rng):
    worst = 0.0
    with T.precision("f64"):
        for k in (1, 2, 3):
            x = Tensor(rng.standard_normal((2, 16, 16, 3)))
            p = dwt2d(x, k)
            worst = max(worst, np.abs(idwt2d(p).data - x.data).max())
            energy = sum(float((b.data**2).sum()) for b in p.bands.values())
            worst = max(worst, abs(energy - float((x.data**2).sum())))
    return worst < 1e-6, f"max err {worst:.2e}"


def _shuffle_inverse(rng):
    ok = True
    for s in (1, 2, 3, 4):
        x = Tensor(rng.standard_normal((2, 4 * s, 4 * s, 3)))
        ok &= np.array_equal(T.pixel_shuffle(T.pixel_unshuffle(x, s), s).data, x.data)
    return ok, "s in 1..4"


def _attention_rows(rng):
    att = WindowAttention(6, 2, 2, rng)
    layout = WindowLayout(2, 1, 4, 4)
    tok = Tensor(rng.standard_normal((4, 4, 6)))
    _, a = att(tok, attention_mask(layout), return_attn=True)
    err = np.abs(a.data.sum(-1) - 1).max()
    return err < 1e-6, f"max row error {err:.2e}"


def _zero_identity(rng):
    blk = DCTSwinBlock(6, 2, 2, 2, rng)
    blk.zero_weights()
    x = Tensor(rng.standard_normal((1, 4, 4, 6)))
    return np.array_equal(blk(x).data, x.data), "block with zero weights"


def _grad_dctstl(rng):
    with T.precision("f64"):
        layer = DCTSTL(2, 1, 2, 1, rng)
        x = Tensor(rng.standard_normal((1, 4, 4, 2)))
        err = check_gradients(lambda: readout(layer(x)), [x] + layer.parameters())
    return err < 1e-4, f"rel err {err:.2e}"


def _grad_loss_dis(rng):
    with T.precision("f64"):
        a = Tensor(rng.standard_normal((1, 4, 4, 3)))
        b = Tensor(rng.standard_normal((1, 4, 4, 3)))
        err = check_gradients(lambda: loss_dis(a, b, 2)[0], [a])
    return err < 1e-4, f"rel err {err:.2e}"


CHECKS: dict[str, Callable] = {
    "dct-roundtrip": _dct_roundtrip,
    "dwt-roundtrip-parseval": _dwt_roundtrip,
    "pixel-shuffle-inverse": _shuffle_inverse,
    "attention-rows-sum-to-one": _attention_rows,
    "zero-weight-identity": _zero_identity,
    "gradcheck-dctstl": _grad_dctstl,
    "gradcheck-loss-dis": _grad_loss_dis,
}


def run(seed: int = 0, echo=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS.items():
        ok, detail = fn(rng)
        all_ok &= bool(ok)
        echo(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
    return all_ok
