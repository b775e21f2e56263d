"""End-to-end desk-scale run: teachers -> Stage 1 -> Stage 2 vs. a no-KD student."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .config import TrainConfig
from .data import PairedDataset, ingest_dataset, make_synthetic_dataset
from .evaluate import evaluate, mean_row, write_csv
from .train import (
    descent,
    predict_aggregate,
    predict_sr,
    teacher_outputs,
    train_stage1,
    train_stage2,
    train_teacher,
)

log = logging.getLogger(__name__)

TEACHER_ORDER = ("teacher-windowed", "teacher-cnn-a", "teacher-cnn-b")


@dataclass
class ExperimentPlan:
    """Iteration budgets and sizes for one end-to-end run."""

    images: int = 50
    held_out: int = 10
    image_size: int = 96
    data_seed: int = 2024
    teacher_iters: int = 300
    teacher_lr: float = 1e-3
    teacher_patch: int = 32
    teacher_batch: int = 16
    stage_iters: int = 2000
    stage_lr: float = 1e-3
    stage_patch: int = 16
    batch_size: int = 8
    base: TrainConfig = field(default_factory=lambda: TrainConfig(scale=2))


def split(ds: PairedDataset, held_out: int) -> tuple[PairedDataset, PairedDataset]:
    n = len(ds)
    return ds.subset(range(n - held_out)), ds.subset(range(n - held_out, n))


def run_experiment(plan: ExperimentPlan, work_dir, data_dir=None) -> dict:
    """Train everything on a fixed synthetic (or given) dataset and score on held-out images."""
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    base = plan.base
    if data_dir is None:
        data_dir = work / "hr"
        if not data_dir.exists():
            make_synthetic_dataset(data_dir, plan.images, plan.image_size, plan.data_seed)
    ds = ingest_dataset(data_dir, base.scale, cache_dir=work / "lr_cache")
    train_ds, val_ds = split(ds, plan.held_out)
    tcfg = base.replace(iterations=plan.teacher_iters, lr=plan.teacher_lr, patch_size=plan.teacher_patch,
                        batch_size=plan.teacher_batch, lr_decay_every=0)
    teachers, results = [], {}
    for i, kind in enumerate(TEACHER_ORDER):
        res = train_teacher(tcfg.replace(teacher_kind=kind, seed=base.seed + i), train_ds, work / kind)
        teachers.append(res.model.freeze())
        results[kind] = res
    scfg = base.replace(iterations=plan.stage_iters, lr=plan.stage_lr, patch_size=plan.stage_patch,
                        batch_size=plan.batch_size, lr_decay_every=plan.stage_iters // 2)
    s1 = train_stage1(scfg, teachers, train_ds, work / "stage1")
    agg = s1.model.freeze()
    s2 = train_stage2(scfg.replace(stage="distill"), agg, teachers, train_ds, work / "stage2")
    nokd = train_stage2(scfg.replace(stage="no-kd-baseline"), None, [], train_ds, work / "no_kd")

    scores, rows_all = {}, []
    for kind, t in zip(TEACHER_ORDER, teachers):
        rows = evaluate(lambda lr, t=t: predict_sr(t, lr), val_ds, method=kind, dataset="heldout")
        scores[kind] = mean_row(rows).psnr
        rows_all += rows
    rows = evaluate(lambda lr: predict_aggregate(agg, teacher_outputs(teachers, lr)), val_ds,
                    method="aggregator", dataset="heldout")
    scores["aggregator"] = mean_row(rows).psnr
    rows_all += rows
    for name, res in (("mtkd-student", s2), ("no-kd-student", nokd)):
        rows = evaluate(lambda lr, m=res.model: predict_sr(m, lr), val_ds, method=name, dataset="heldout")
        scores[name] = mean_row(rows).psnr
        rows_all += rows
    write_csv(work / "heldout_eval.csv", rows_all, with_mean=False)

    summary = {
        "psnr": scores,
        "descent": {
            "stage1": descent(s1.losses()),
            "stage2": descent(s2.losses()),
            "no_kd": descent(nokd.losses()),
        },
        "checkpoint_sha1": {
            **{k: r.checkpoint.sha1() for k, r in results.items()},
            "aggregator": s1.checkpoint.sha1(),
            "mtkd-student": s2.checkpoint.sha1(),
            "no-kd-student": nokd.checkpoint.sha1(),
        },
        "loss_log_sha1": {
            name: _log_digest(r.log)
            for name, r in [*results.items(), ("stage1", s1), ("stage2", s2), ("no_kd", nokd)]
        },
    }
    (work / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def _log_digest(rows: list[dict]) -> str:
    """Digest of every logged loss value (wall-clock column excluded)."""
    h = hashlib.sha1()
    for r in rows:
        h.update(repr({k: v for k, v in r.items() if k != "wall_time"}).encode())
    return h.hexdigest()
