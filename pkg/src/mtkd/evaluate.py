"""Full-image evaluation and the versioned results CSV."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data import PairedDataset, to_uint8
from .metrics import psnr, ssim

SCHEMA = "mtkd-eval/1"
COLUMNS = ["method", "dataset", "scale", "image", "psnr", "ssim", "mode", "crop"]


class SchemaError(ValueError):
    pass


@dataclass
class EvalRow:
    method: str
    dataset: str
    scale: int
    image: str
    psnr: float
    ssim: float
    mode: str
    crop: int


def evaluate(
    predict: Callable[[np.ndarray], np.ndarray] | None,
    ds: PairedDataset,
    mode: str = "Y",
    crop: int | None = None,
    method: str = "model",
    dataset: str = "data",
    threads: int = 1,
) -> list[EvalRow]:
    """Score ``predict(lr_uint8) -> hr float (0..1)`` on every pair.

    ``predict=None`` scores ground truth against itself. Outputs are quantized
    to 8 bits before scoring. Rows come back in dataset order regardless of
    ``threads``.
    """
    crop = ds.scale if crop is None else crop

    def one(i: int) -> EvalRow:
        hr = ds.hr[i]
        out = hr if predict is None else to_uint8(predict(ds.lr[i]))
        if out.shape != hr.shape:
            raise ValueError(f"{ds.names[i]}: prediction {out.shape} vs ground truth {hr.shape} (scale mismatch?)")
        ref, test = hr.astype(np.float64), out.astype(np.float64)
        return EvalRow(method, dataset, ds.scale, ds.names[i], psnr(ref, test, mode, crop),
                       ssim(ref, test, mode, crop), mode, crop)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, range(len(ds))))
    return [one(i) for i in range(len(ds))]


def mean_row(rows: list[EvalRow]) -> EvalRow:
    r0 = rows[0]
    return EvalRow(r0.method, r0.dataset, r0.scale, "MEAN", float(np.mean([r.psnr for r in rows])),
                   float(np.mean([r.ssim for r in rows])), r0.mode, r0.crop)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def write_csv(path, rows: list[EvalRow], with_mean: bool = True) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema={SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows + ([mean_row(rows)] if with_mean and rows else []):
            w.writerow([r.method, r.dataset, r.scale, r.image, _fmt(r.psnr), _fmt(r.ssim), r.mode, r.crop])
    return path


def read_csv(path) -> list[EvalRow]:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema={SCHEMA}":
            raise SchemaError(f"{path}: expected schema line '# schema={SCHEMA}', found {first!r}")
        reader = csv.reader(fh)
        header = next(reader)
        if header != COLUMNS:
            raise SchemaError(f"{path}: column header {header} != {COLUMNS}")
        return [EvalRow(m, d, int(s), im, float(p), float(ss), mo, int(c)) for m, d, s, im, p, ss, mo, c in reader]


def report(paths) -> str:
    """Method x (dataset, scale) table of mean ``PSNR/SSIM`` cells."""
    rows = [r for p in paths for r in read_csv(p) if r.image != "MEAN"]
    if not rows:
        return ""
    methods = list(dict.fromkeys(r.method for r in rows))
    cols = sorted({(r.dataset, r.scale) for r in rows})
    cells: dict[tuple, list[EvalRow]] = {}
    for r in rows:
        cells.setdefault((r.method, r.dataset, r.scale), []).append(r)
    head = ["Method"] + [f"{d} x{s}" for d, s in cols]
    lines = [head]
    for m in methods:
        line = [m]
        for d, s in cols:
            got = cells.get((m, d, s))
            if got:
                mr = mean_row(got)
                p = "inf" if math.isinf(mr.psnr) else f"{mr.psnr:.2f}"
                line.append(f"{p}/{mr.ssim:.4f}")
            else:
                line.append("-")
        lines.append(line)
    widths = [max(len(l[i]) for l in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(l, widths)).rstrip() for l in lines) + "\n"
