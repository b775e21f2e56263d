"""Training procedures: desk-scale teachers, Stage 1 (aggregation) and Stage 2
(distillation), with resumable checkpoints and CSV loss logs."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, TrainConfig
from .data import PairedDataset, PatchSampler
from .losses import loss_ka, loss_stu, loss_total
from .networks import Aggregator, ModelSpec, SrModel, build_model
from .optim import Adam, step_lr
from .tensor import Tensor

log = logging.getLogger(__name__)

LATEST = "latest.ckpt"
FINAL = "final.ckpt"
LOG_NAME = "loss_log.csv"


class NumericError(RuntimeError):
    """Loss became NaN/inf during training."""


@dataclass
class TrainResult:
    model: SrModel
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.log])


def params_digest(model: SrModel) -> str:
    h = hashlib.sha1()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def descent(losses, window: int = 50) -> tuple[float, float]:
    """Mean loss over the first and the last ``window`` iterations."""
    losses = np.asarray(losses, dtype=np.float64)
    w = min(window, len(losses) // 2) or 1
    return float(losses[:w].mean()), float(losses[-w:].mean())


# ---------------------------------------------------------------------------
# full-image inference


def _to_tensor(img: np.ndarray) -> Tensor:
    a = img.astype(np.float32) / 255.0 if img.dtype == np.uint8 else img
    return Tensor(a[None] if a.ndim == 3 else a)


def predict_sr(model: SrModel, lr: np.ndarray) -> np.ndarray:
    """Full-image inference for an LR->HR network; returns float HxWx3 in ~0..1."""
    with T.no_grad():
        return model(_to_tensor(lr)).data[0]


def teacher_outputs(teachers: list[SrModel], lr: np.ndarray) -> list[np.ndarray]:
    return [predict_sr(t, lr) for t in teachers]


def predict_aggregate(aggregator: Aggregator, outputs: list[np.ndarray]) -> np.ndarray:
    with T.no_grad():
        return aggregator([_to_tensor(o) for o in outputs]).data[0]


def precompute_teacher_outputs(teachers: list[SrModel], ds: PairedDataset) -> list[list[np.ndarray]]:
    """Per teacher, the list of full-image outputs on every training LR image."""
    per_image = [teacher_outputs(teachers, lr) for lr in ds.lr]
    return [[img[k].astype(np.float32) for img in per_image] for k in range(len(teachers))]


def precompute_aggregate(aggregator: Aggregator, teachers: list[SrModel], ds: PairedDataset) -> list[np.ndarray]:
    return [predict_aggregate(aggregator, teacher_outputs(teachers, lr)).astype(np.float32) for lr in ds.lr]


# ---------------------------------------------------------------------------
# loss log


def _read_log(path: Path, upto: int) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if int(r["iteration"]) <= upto]
    return [{k: (int(v) if k == "iteration" else float(v)) for k, v in r.items()} for r in rows]


def _write_log(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _append_log(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    if not path.exists():
        _write_log(path, rows)
        return
    with path.open("a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------------------
# generic loop


def _fit(
    model: SrModel,
    spec: ModelSpec,
    cfg: TrainConfig,
    sampler: PatchSampler,
    step: Callable[[list[np.ndarray]], tuple[Tensor, dict]],
    out_dir: Path | None,
    extra: dict,
    frozen: list[SrModel] = (),
) -> TrainResult:
    params = model.trainable()
    opt = Adam(params, lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    frozen_before = [params_digest(m) for m in frozen]
    rows: list[dict] = []
    start = 0
    cfg_dict = cfg.to_dict()
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        latest = out_dir / LATEST
        if latest.exists():
            ck = Checkpoint.load(latest)
            if ck.config != cfg_dict or ck.spec != spec:
                raise ConfigError([f"{latest} was written by a different configuration; use a fresh --out"])
            model.load_state(ck.params)
            st = ck.optimizer
            st.m = {k: v.astype(params[k].data.dtype) for k, v in st.m.items()}
            st.v = {k: v.astype(params[k].data.dtype) for k, v in st.v.items()}
            opt.state = st
            sampler.set_state(ck.rng_state)
            start = ck.iteration
            rows = _read_log(out_dir / LOG_NAME, start)
            _write_log(out_dir / LOG_NAME, rows)
            log.info("resuming %s from iteration %d", spec.kind, start)
    pending: list[dict] = []
    t0 = time.perf_counter()

    def snapshot(it: int) -> Checkpoint:
        return Checkpoint.from_model(model, spec, config=cfg_dict, iteration=it,
                                     rng_state=sampler.get_state(), optimizer=opt.state, extra=extra)

    for it in range(start, cfg.iterations):
        opt.lr = step_lr(cfg.lr, it, cfg.lr_decay_every, cfg.lr_decay_factor)
        batch = sampler.sample(cfg.batch_size)
        opt.zero_grad()
        total, comps = step(batch)
        value = total.item()
        if not math.isfinite(value):
            raise NumericError(f"{spec.kind}: non-finite loss {value} at iteration {it + 1}")
        total.backward()
        opt.step()
        row = {"iteration": it + 1, "loss": value, **comps, "lr": opt.lr,
               "wall_time": time.perf_counter() - t0}
        rows.append(row)
        pending.append(row)
        if out_dir is not None and ((it + 1) % cfg.ckpt_every == 0 or it + 1 == cfg.iterations):
            _append_log(out_dir / LOG_NAME, pending)
            pending = []
            snapshot(it + 1).save(out_dir / LATEST)
    for m, before in zip(frozen, frozen_before):
        if params_digest(m) != before:
            raise RuntimeError(f"frozen {m.kind} parameters changed during training")
    final = snapshot(cfg.iterations)
    if out_dir is not None:
        final.save(out_dir / FINAL)
    return TrainResult(model, final, rows)


def _sampler(cfg: TrainConfig, ds: PairedDataset, extras=None) -> PatchSampler:
    return PatchSampler(ds, cfg.patch_size, seed=[cfg.seed, 1], augment=cfg.augment, extras=extras)


def _check_scale(cfg: TrainConfig, ds: PairedDataset, models: list[SrModel]) -> None:
    bad = [m.kind for m in models if m.scale != cfg.scale]
    if ds.scale != cfg.scale or bad:
        raise ConfigError([f"scale mismatch: config x{cfg.scale}, dataset x{ds.scale}, models {bad}"])


# ---------------------------------------------------------------------------
# stages


def train_teacher(cfg: TrainConfig, ds: PairedDataset, out_dir=None) -> TrainResult:
    """Train one desk-scale teacher with plain L1 to ground truth."""
    cfg = cfg.replace(stage="teacher").check()
    _check_scale(cfg, ds, [])
    spec = ModelSpec(cfg.teacher_kind, cfg.scale, {}, cfg.seed)
    model = build_model(spec)

    def step(batch):
        lr, hr = batch
        loss = T.l1_loss(model(Tensor(lr)), Tensor(hr))
        return loss, {}

    return _fit(model, spec, cfg, _sampler(cfg, ds), step, _path(out_dir), {"stage": "teacher"})


def train_stage1(cfg: TrainConfig, teachers: list[SrModel], ds: PairedDataset, out_dir=None) -> TrainResult:
    """Train the aggregation network on frozen teacher outputs (loss_ka)."""
    if not teachers:
        raise ConfigError(["stage 1 needs at least one teacher"])
    cfg = cfg.replace(stage="aggregate", teachers=cfg.teachers or tuple(t.kind for t in teachers))
    cfg = cfg.replace(aggregator=_agg_cfg(cfg, len(teachers))).check()
    _check_scale(cfg, ds, teachers)
    for t in teachers:
        t.freeze()
    spec = ModelSpec("aggregator", cfg.scale, _agg_arch(cfg), cfg.seed)
    agg = build_model(spec)
    extras = precompute_teacher_outputs(teachers, ds)

    def step(batch):
        _, hr, *outs = batch
        loss = loss_ka(agg([Tensor(o) for o in outs]), Tensor(hr))
        return loss, {"L_KA": loss.item()}

    extra = {"stage": "aggregate", "teacher_order": list(cfg.teachers)}
    return _fit(agg, spec, cfg, _sampler(cfg, ds, extras), step, _path(out_dir), extra, frozen=teachers)


def train_stage2(cfg: TrainConfig, aggregator: Aggregator | None, teachers: list[SrModel], ds: PairedDataset,
                 out_dir=None) -> TrainResult:
    """Train the student from scratch.

    ``distill``: alpha*L_stu + L_dis against the frozen aggregator output.
    ``l1-distill-baseline``: distillation term replaced by plain L1.
    ``no-kd-baseline``: L_stu only; aggregator and teachers unused.
    """
    if cfg.stage not in ("distill", "no-kd-baseline", "l1-distill-baseline"):
        cfg = cfg.replace(stage="distill")
    if cfg.stage == "l1-distill-baseline":
        cfg = cfg.replace(distill_loss="l1")
    needs_kd = cfg.stage != "no-kd-baseline"
    if needs_kd:
        if aggregator is None:
            raise ConfigError([f"stage {cfg.stage} needs a trained aggregator"])
        cfg = cfg.replace(teachers=cfg.teachers or tuple(t.kind for t in teachers),
                          aggregator_ckpt=cfg.aggregator_ckpt or "<in-memory>",
                          aggregator=_agg_cfg(cfg, len(teachers), aggregator.cfg))
    cfg.check()
    frozen = [aggregator, *teachers] if needs_kd else []
    _check_scale(cfg, ds, frozen)
    for m in frozen:
        m.freeze()
    spec = ModelSpec("student", cfg.scale, {"feats": cfg.student_feats, "blocks": cfg.student_blocks}, cfg.seed)
    student = build_model(spec)
    extras = [precompute_aggregate(aggregator, teachers, ds)] if needs_kd else None

    if needs_kd:
        def step(batch):
            lr, hr, mt = batch
            out = student(Tensor(lr))
            rep = loss_total(out, Tensor(hr), Tensor(mt), cfg.alpha, cfg.level, cfg.distill_loss)
            return rep.total, rep.components
    else:
        def step(batch):
            lr, hr = batch
            loss = loss_stu(student(Tensor(lr)), Tensor(hr))
            return loss, {"L_stu": loss.item()}

    extra = {"stage": cfg.stage}
    if needs_kd:
        extra["aggregator_sha1"] = params_digest(aggregator)
    return _fit(student, spec, cfg, _sampler(cfg, ds, extras), step, _path(out_dir), extra, frozen=frozen)


def _agg_cfg(cfg: TrainConfig, n: int, base=None):
    return replace(base or cfg.aggregator, teachers=n, scale=cfg.scale)


def _agg_arch(cfg: TrainConfig) -> dict:
    a = asdict(cfg.aggregator)
    a.pop("scale")
    return a


def _path(p) -> Path | None:
    return None if p is None else Path(p)


def load_teachers(paths) -> list[SrModel]:
    models = []
    for p in paths:
        try:
            models.append(Checkpoint.load(p).build(frozen=True))
        except (OSError, CheckpointError) as exc:
            raise ConfigError([f"cannot load teacher checkpoint {p}: {exc}"]) from None
    return models
