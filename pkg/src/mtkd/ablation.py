"""Ablation variants: teacher subsets, aggregator without DCT, and
alternative distillation losses."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import PairedDataset
from .evaluate import evaluate, mean_row
from .losses import loss_dis_highfreq, loss_ka, loss_total
from .networks import SrModel
from .train import predict_aggregate, predict_sr, teacher_outputs, train_stage1, train_stage2

ALL_TEACHERS = ("teacher-windowed", "teacher-cnn-a", "teacher-cnn-b")

VARIANTS = {
    "full": {"teachers": ALL_TEACHERS, "use_dct": True, "loss": "wavelet",
             "about": "all teachers, DCTSwin aggregator, wavelet distillation"},
    "v1": {"teachers": ("teacher-windowed", "teacher-cnn-a"), "use_dct": True, "loss": "wavelet",
           "about": "two teachers (windowed + plain CNN)"},
    "v2": {"teachers": ("teacher-windowed",), "use_dct": True, "loss": "wavelet",
           "about": "single windowed-attention teacher"},
    "v3": None,
    "v4": {"teachers": ALL_TEACHERS, "use_dct": False, "loss": "wavelet",
           "about": "aggregator without DCT/IDCT (plain Swin layers)"},
    "v5": {"teachers": ALL_TEACHERS, "use_dct": True, "loss": "l1",
           "about": "distillation loss replaced by plain L1"},
    "v6": {"teachers": ALL_TEACHERS, "use_dct": True, "loss": "dct",
           "about": "distillation loss in the blockwise DCT domain"},
    "v7": {"teachers": ALL_TEACHERS, "use_dct": True, "loss": "wavelet-hf",
           "about": "detail-subband-only wavelet loss"},
}


def variant_settings(variant: str) -> dict:
    if variant not in VARIANTS:
        raise ValueError(f"unknown ablation variant {variant!r}; expected one of {sorted(VARIANTS)}")
    v = VARIANTS[variant]
    if v is None:
        raise NotImplementedError(
            "ablation v3 (Mixer-Layer aggregator substitute) is not implemented"
        )
    return v


def _probe(variant: str, settings: dict, student: SrModel, mt: np.ndarray, ds: PairedDataset, cfg) -> dict:
    """Loss-level checks recorded in the report."""
    with T.no_grad():
        stu = T.Tensor(predict_sr(student, ds.lr[0])[None])
        mt_t = T.Tensor(mt[None])
        gt = T.Tensor(ds.hr[0][None].astype(np.float32) / 255.0)
        h, w = stu.shape[1] - stu.shape[1] % 8, stu.shape[2] - stu.shape[2] % 8
        stu, mt_t, gt = stu[:, :h, :w], mt_t[:, :h, :w], gt[:, :h, :w]
        out = {}
        rep = loss_total(stu, gt, mt_t, alpha=0.0, level=cfg.level, distill=settings["loss"])
        out["distill_total_alpha0"] = rep.value()
        if settings["loss"] == "l1":
            out["loss_ka_student_vs_mt"] = loss_ka(stu, mt_t).item()
        if settings["loss"] == "wavelet-hf":
            out["offset_loss"] = loss_dis_highfreq(mt_t + 0.25, mt_t, cfg.level)[0].item()
        return out


def run_ablation(
    variant: str,
    base: TrainConfig,
    teachers: dict[str, SrModel],
    train_ds: PairedDataset,
    val_ds: PairedDataset,
    out_dir=None,
) -> dict:
    """Run Stage 1 and Stage 2 under one variant and report what changed."""
    settings = variant_settings(variant)
    missing = [k for k in settings["teachers"] if k not in teachers]
    if missing:
        raise ValueError(f"ablation {variant}: base teachers {missing} not provided")
    chosen = [teachers[k] for k in settings["teachers"]]
    agg_cfg = replace(base.aggregator, teachers=len(chosen), use_dct=settings["use_dct"], scale=base.scale)
    cfg = base.replace(teachers=tuple(settings["teachers"]), aggregator=agg_cfg, distill_loss=settings["loss"])
    out = Path(out_dir) if out_dir is not None else None
    s1 = train_stage1(cfg, chosen, train_ds, None if out is None else out / "stage1")
    agg = s1.model
    s2 = train_stage2(cfg.replace(stage="distill"), agg, chosen, train_ds, None if out is None else out / "stage2")

    def agg_predict(lr):
        return predict_aggregate(agg, teacher_outputs(chosen, lr))

    agg_rows = evaluate(agg_predict, val_ds, method=f"{variant}-aggregator")
    stu_rows = evaluate(lambda lr: predict_sr(s2.model, lr), val_ds, method=f"{variant}-student")
    mt0 = agg_predict(val_ds.lr[0])
    report = {
        "variant": variant,
        "about": settings["about"],
        "teachers": list(settings["teachers"]),
        "aggregator_in_channels": agg.in_channels,
        "use_dct": settings["use_dct"],
        "distill_loss": settings["loss"],
        "stage1_final_loss": float(s1.losses()[-1]),
        "stage2_final_loss": float(s2.losses()[-1]),
        "aggregator_psnr": mean_row(agg_rows).psnr,
        "student_psnr": mean_row(stu_rows).psnr,
        "student_ssim": mean_row(stu_rows).ssim,
        "probe": _probe(variant, settings, s2.model, mt0, val_ds, cfg),
    }
    return report
