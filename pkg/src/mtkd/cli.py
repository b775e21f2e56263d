"""Command-line entry point: ``mtkd <subcommand> [options]``.

Exit codes: 0 ok, 1 config, 2 data, 3 numeric, 4 internal. Failures print a
single ``error: <category>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import selftest
from . import tensor as T
from .ablation import run_ablation, variant_settings
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, TrainConfig, apply_overrides, dump_config, parse_config_text
from .data import DataError, PairedDataset, ingest_dataset
from .evaluate import SchemaError, evaluate, mean_row, report, write_csv
from .train import (
    NumericError,
    load_teachers,
    predict_aggregate,
    predict_sr,
    teacher_outputs,
    train_stage1,
    train_stage2,
    train_teacher,
)

DATA_ROOT_ENV = "MTKD_DATA_ROOT"
EXIT = {"config": 1, "data": 2, "numeric": 3, "internal": 4}
SUBCOMMANDS = ("train-teacher", "train-aggregator", "distill", "evaluate", "ablate", "selftest", "report")

log = logging.getLogger("mtkd")


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file (train.* / aggregator.* keys)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--precision", choices=("f32", "f64"))
    common.add_argument("--threads", type=int, default=1, help="evaluation fan-out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mtkd", description="Multi-teacher distillation for super-resolution")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train-teacher", parents=[common], help="train one desk-scale teacher")
    sub.add_parser("train-aggregator", parents=[common], help="Stage 1: train the aggregation network")
    sub.add_parser("distill", parents=[common], help="Stage 2: train the student (or a baseline)")
    ev = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM of a checkpoint on a dataset")
    ev.add_argument("--ckpt", help="student/teacher/aggregator checkpoint")
    ev.add_argument("--data", help="directory of HR PNGs (default: train.val_dir)")
    ev.add_argument("--against-self", action="store_true", help="score ground truth against itself")
    ev.add_argument("--mode", choices=("Y", "RGB"), default="Y")
    ev.add_argument("--crop", type=int, help="border crop (default: scale)")
    ev.add_argument("--name", help="method name in the CSV")
    ab = sub.add_parser("ablate", parents=[common], help="run one ablation variant")
    ab.add_argument("--variant", required=True, help="v1 v2 v3 v4 v5 v6 v7")
    sub.add_parser("selftest", parents=[common], help="transform/gradient invariant checks")
    rp = sub.add_parser("report", parents=[common], help="tabulate evaluation CSVs")
    rp.add_argument("csv", nargs="+")
    return p


def load_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc.strerror}"]) from None
        cfg = parse_config_text(text)
    cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.precision:
        cfg = cfg.replace(precision=args.precision)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not cfg.data_dir:
        cfg = cfg.replace(data_dir=root)
    return cfg


def _require_out(args) -> Path:
    if not args.out:
        raise ConfigError(["--out is required for this command"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: TrainConfig, inputs: list[Path]) -> None:
    lines = [f"command = {command}", "", dump_config(cfg).rstrip(), "", "[inputs]"]
    combined = hashlib.sha1()
    for p in inputs:
        p = Path(p)
        if p.is_dir():
            files = sorted(f for f in p.rglob("*") if f.is_file())
        elif p.is_file():
            files = [p]
        else:
            continue
        for f in files:
            h = git_blob_hash(f.read_bytes())
            combined.update(h.encode())
            lines.append(f"{h}  {f}")
    lines.append(f"inputs_hash = {combined.hexdigest()}")
    (out / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _dataset(path: str, scale: int, out: Path | None) -> PairedDataset:
    if not path:
        raise ConfigError(["train.data_dir is not set (use --set train.data_dir=... or $" + DATA_ROOT_ENV + ")"])
    return ingest_dataset(path, scale, cache_dir=None if out is None else out / "lr_cache")


def cmd_train_teacher(args, cfg):
    cfg = cfg.replace(stage="teacher").check()
    out = _require_out(args)
    write_manifest(out, "train-teacher", cfg, [Path(cfg.data_dir)])
    ds = _dataset(cfg.data_dir, cfg.scale, out)
    res = train_teacher(cfg, ds, out)
    print(f"teacher {cfg.teacher_kind}: final loss {res.log[-1]['loss']:.6f} -> {out / 'final.ckpt'}")


def cmd_train_aggregator(args, cfg):
    agg = dataclasses.replace(cfg.aggregator, teachers=len(cfg.teachers) or 1, scale=cfg.scale)
    cfg = cfg.replace(stage="aggregate", aggregator=agg).check()
    out = _require_out(args)
    write_manifest(out, "train-aggregator", cfg, [Path(cfg.data_dir), *map(Path, cfg.teachers)])
    teachers = load_teachers(cfg.teachers)
    ds = _dataset(cfg.data_dir, cfg.scale, out)
    res = train_stage1(cfg, teachers, ds, out)
    print(f"aggregator: final L_KA {res.log[-1]['loss']:.6f} -> {out / 'final.ckpt'}")


def cmd_distill(args, cfg):
    if cfg.stage not in ("distill", "no-kd-baseline", "l1-distill-baseline"):
        cfg = cfg.replace(stage="distill")
    needs_kd = cfg.stage != "no-kd-baseline"
    agg = None
    if needs_kd:
        if cfg.aggregator_ckpt:
            try:
                ck = Checkpoint.load(cfg.aggregator_ckpt)
            except (OSError, CheckpointError) as exc:
                raise ConfigError([f"cannot load aggregator checkpoint {cfg.aggregator_ckpt}: {exc}"]) from None
            agg = ck.build(frozen=True)
            cfg = cfg.replace(aggregator=agg.cfg)
    cfg.check()
    out = _require_out(args)
    inputs = [Path(cfg.data_dir)] + ([Path(cfg.aggregator_ckpt), *map(Path, cfg.teachers)] if needs_kd else [])
    write_manifest(out, "distill", cfg, inputs)
    teachers = load_teachers(cfg.teachers) if needs_kd else []
    ds = _dataset(cfg.data_dir, cfg.scale, out)
    res = train_stage2(cfg, agg, teachers, ds, out)
    print(f"{cfg.stage}: final loss {res.log[-1]['loss']:.6f} -> {out / 'final.ckpt'}")


def cmd_evaluate(args, cfg):
    data = args.data or cfg.val_dir or cfg.data_dir
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if args.against_self:
        ds = _dataset(data, cfg.scale, None)
        predict, name = None, args.name or "ground-truth"
    else:
        if not args.ckpt:
            raise ConfigError(["evaluate needs --ckpt or --against-self"])
        try:
            ck = Checkpoint.load(args.ckpt)
            model = ck.build(frozen=True)
        except (OSError, CheckpointError) as exc:
            raise ConfigError([f"cannot load checkpoint {args.ckpt}: {exc}"]) from None
        ds = _dataset(data, model.scale, None)
        if model.kind == "aggregator":
            teachers = load_teachers(ck.config.get("teachers", []))

            def predict(lr):
                return predict_aggregate(model, teacher_outputs(teachers, lr))
        else:
            def predict(lr):
                return predict_sr(model, lr)
        name = args.name or model.kind
    rows = evaluate(predict, ds, mode=args.mode, crop=args.crop, method=name,
                    dataset=Path(data).name, threads=max(1, args.threads))
    for r in rows + [mean_row(rows)]:
        print(f"{r.image}\tPSNR {r.psnr:.4f}\tSSIM {r.ssim:.6f}")
    if out:
        write_manifest(out, "evaluate", cfg, [Path(data)] + ([Path(args.ckpt)] if args.ckpt else []))
        write_csv(out / "eval.csv", rows)


def cmd_ablate(args, cfg):
    try:
        variant_settings(args.variant)  # reject unknown / unimplemented variants before any work
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None
    out = _require_out(args)
    if not cfg.teachers:
        raise ConfigError(["ablate needs train.teachers (three teacher checkpoints)"])
    write_manifest(out, f"ablate {args.variant}", cfg, [Path(cfg.data_dir), *map(Path, cfg.teachers)])
    teachers = {t.kind: t for t in load_teachers(cfg.teachers)}
    ds = _dataset(cfg.data_dir, cfg.scale, out)
    val = _dataset(cfg.val_dir, cfg.scale, None) if cfg.val_dir else ds
    rep = run_ablation(args.variant, cfg, teachers, ds, val, out / args.variant)
    (out / f"ablation_{args.variant}.json").write_text(json.dumps(rep, indent=1, sort_keys=True))
    print(json.dumps(rep, sort_keys=True))


def cmd_selftest(args, cfg):
    ok = selftest.run(seed=cfg.seed)
    if not ok:
        raise NumericError("selftest failed")


def cmd_report(args, cfg):
    table = report(args.csv)
    print(table, end="")
    if args.out:
        out = _require_out(args)
        (out / "report.txt").write_text(table)


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "train-aggregator": cmd_train_aggregator,
    "distill": cmd_distill,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "selftest": cmd_selftest,
    "report": cmd_report,
}


def _category(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (DataError, SchemaError, CheckpointError)):
        return "data"
    if isinstance(exc, NumericError):
        return "numeric"
    return "internal"


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        T.set_precision(cfg.precision)
        COMMANDS[args.command](args, cfg)
    except NotImplementedError as exc:
        print(f"error: config: unimplemented: {exc}", file=sys.stderr)
        return EXIT["config"]
    except Exception as exc:  # every failure maps onto one exit category
        cat = _category(exc)
        msg = " ".join(str(exc).split())
        print(f"error: {cat}: {msg}", file=sys.stderr)
        if cat == "internal":
            log.debug("internal error", exc_info=True)
        return EXIT[cat]
    finally:
        T.set_precision("f32")
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
