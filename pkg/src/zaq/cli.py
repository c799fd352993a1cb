"""Command-line pipeline: dataset generation, teacher training, raw
quantization, the adversarial run, the fine-tuning reference, evaluation,
bit sweeps, and the gradient-check suite.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 training divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .checkpoint import load_state, load_tensors, read_meta, save_model
from .config import RunConfig, load_config, write_resolved
from .data import gen_dataset, load_dataset, save_dataset
from .errors import ConfigError, DivergenceError, FormatError, ZaqError
from .models import ModelGraph, build_teacher
from .quantize import QuantSpec, quantize_model
from .train import calibrate_uniform, evaluate, run, train_supervised

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4


def _load_cfg(path: str | None, out_dir: str | None = None) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    if out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=str(out_dir))
    return cfg


def _prepare_out(out: str) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _teacher_meta(cfg: RunConfig) -> dict[str, float]:
    return {"num_classes": float(cfg.data.num_classes),
            "channels": float(cfg.data.channels),
            "height": float(cfg.data.height),
            "width": float(cfg.data.width),
            "weight_bits": 0.0,
            "activation_bits": 0.0}


def load_classifier(path) -> tuple[ModelGraph, dict[str, float]]:
    """Rebuild a classifier (plain or quantized) from a checkpoint's meta
    entries and restore its exact state."""
    entries = load_tensors(path)
    meta = read_meta(entries)
    for key in ("num_classes", "channels", "height", "width"):
        if key not in meta:
            raise FormatError(f"{path}: checkpoint lacks meta.{key}")
    shape = (int(meta["channels"]), int(meta["height"]), int(meta["width"]))
    model = build_teacher(int(meta["num_classes"]), np.random.default_rng(0), in_shape=shape)
    wbits = int(meta.get("weight_bits", 0))
    abits = int(meta.get("activation_bits", 0))
    if wbits or abits:
        model = quantize_model(model, QuantSpec(wbits, abits))
    load_state(model, entries)
    model.eval()
    return model, meta


def _dataset_from_cfg(cfg: RunConfig):
    return gen_dataset(cfg.data)


def _load_split(data_arg: str):
    path = Path(data_arg)
    if path.is_dir():
        path = path / "test.bin"
    return load_dataset(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args.config, args.out)
    out_dir = _prepare_out(args.out)
    train, test = _dataset_from_cfg(cfg)
    save_dataset(out_dir / "train.bin", train)
    save_dataset(out_dir / "test.bin", test)
    write_resolved(cfg, out_dir)
    print(f"wrote {len(train)} train and {len(test)} test samples to {out_dir}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    cfg = _load_cfg(args.config, args.out)
    out_dir = _prepare_out(args.out)
    write_resolved(cfg, out_dir)
    train, test = _dataset_from_cfg(cfg)
    teacher = build_teacher(cfg.data.num_classes,
                            np.random.default_rng([cfg.train.seed, 5]),
                            in_shape=cfg.data.image_shape)
    acc, epoch = train_supervised(
        teacher, train, test, cfg.data.num_classes,
        epochs=cfg.teacher_epochs, lr=cfg.teacher_lr,
        batch_size=cfg.train.batch_size, seed=cfg.train.seed,
        log=lambda s: print(f"[teacher] {s}"))
    save_model(out_dir / "teacher.bin", teacher, meta=_teacher_meta(cfg))
    print(f"teacher accuracy: {acc:.4f} (best at epoch {epoch})")
    print(f"checkpoint: {out_dir / 'teacher.bin'}")
    return EXIT_OK


def _quantized_meta(cfg: RunConfig, wbits: int, abits: int) -> dict[str, float]:
    meta = _teacher_meta(cfg)
    meta["weight_bits"] = float(wbits)
    meta["activation_bits"] = float(abits)
    return meta


def _raw_quantize(teacher: ModelGraph, cfg: RunConfig, wbits: int, abits: int, test):
    q = quantize_model(teacher, QuantSpec(wbits, abits))
    calib_rng = np.random.default_rng([cfg.train.seed, 2])
    calibrate_uniform(q, cfg.data.image_shape, calib_rng)
    return q, evaluate(q, test)


def cmd_quantize(args) -> int:
    cfg = _load_cfg(args.config, args.out)
    cfg = dataclasses.replace(cfg, weight_bits=args.wbits, activation_bits=args.abits)
    out_dir = _prepare_out(args.out)
    write_resolved(cfg, out_dir)
    teacher, _ = load_classifier(args.teacher)
    _, test = _dataset_from_cfg(cfg)
    q, acc = _raw_quantize(teacher, cfg, args.wbits, args.abits, test)
    save_model(out_dir / "q_rq.bin", q, meta=_quantized_meta(cfg, args.wbits, args.abits))
    teacher_acc = evaluate(teacher, test)
    print(f"teacher accuracy: {teacher_acc:.4f}")
    print(f"raw-quantized W{args.wbits}A{args.abits} accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_zaq(args) -> int:
    cfg = _load_cfg(args.config, args.out)
    out_dir = _prepare_out(args.out)
    write_resolved(cfg, out_dir)
    teacher, _ = load_classifier(args.teacher)
    _, test = _dataset_from_cfg(cfg)
    result = run(teacher, cfg, test, out_dir=out_dir,
                 log=lambda s: print(f"[zaq] {s}"))
    print(f"best accuracy: {result.best_accuracy:.4f} (epoch {result.best_epoch})")
    print(f"checkpoint: {out_dir / 'q_best.bin'}")
    return EXIT_OK


def cmd_ft(args) -> int:
    cfg = _load_cfg(args.config, args.out)
    out_dir = _prepare_out(args.out)
    write_resolved(cfg, out_dir)
    teacher, _ = load_classifier(args.teacher)
    train, test = _dataset_from_cfg(cfg)
    q = quantize_model(teacher, QuantSpec(cfg.weight_bits, cfg.activation_bits))
    calibrate_uniform(q, cfg.data.image_shape, np.random.default_rng([cfg.train.seed, 2]))
    acc, epoch = train_supervised(
        q, train, test, cfg.data.num_classes,
        epochs=cfg.ft_epochs, lr=cfg.train.lr_q,
        batch_size=cfg.train.batch_size, seed=cfg.train.seed,
        momentum=cfg.train.momentum, weight_decay=cfg.train.weight_decay,
        decay_epochs=cfg.train.decay_epochs, lr_decay=cfg.train.lr_decay,
        log=lambda s: print(f"[ft] {s}"))
    save_model(out_dir / "q_ft.bin", q,
               meta=_quantized_meta(cfg, cfg.weight_bits, cfg.activation_bits))
    print(f"fine-tuned accuracy: {acc:.4f} (best at epoch {epoch})")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_classifier(args.model)
    dataset = _load_split(args.data)
    acc = evaluate(model, dataset)
    print(f"accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        bits = [int(b) for b in args.bits.split(",") if b.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --bits list {args.bits!r}: {exc}") from exc
    if not bits:
        raise ConfigError("--bits list is empty")
    cfg = _load_cfg(args.config, args.out)
    out_dir = _prepare_out(args.out)
    write_resolved(cfg, out_dir)
    teacher, _ = load_classifier(args.teacher)
    _, test = _dataset_from_cfg(cfg)
    teacher_acc = evaluate(teacher, test)
    rows = []
    for b in bits:
        sub_cfg = dataclasses.replace(cfg, weight_bits=b, activation_bits=b)
        sub_dir = _prepare_out(out_dir / f"w{b}a{b}")
        write_resolved(sub_cfg, sub_dir)
        _, rq_acc = _raw_quantize(teacher, sub_cfg, b, b, test)
        result = run(teacher, sub_cfg, test, out_dir=sub_dir)
        rows.append((b, rq_acc, result.best_accuracy))
        print(f"[sweep] W{b}A{b}: rq {rq_acc:.4f}  adversarial {result.best_accuracy:.4f}")
    table_path = out_dir / "sweep.csv"
    with open(table_path, "w") as fh:
        fh.write("bits,rq_accuracy,zaq_accuracy,teacher_accuracy\n")
        for b, rq_acc, zaq_acc in rows:
            fh.write(f"{b},{rq_acc!r},{zaq_acc!r},{teacher_acc!r}\n")
    print(f"\n{'bits':>5} {'RQ':>8} {'ZAQ':>8} {'teacher':>8}")
    for b, rq_acc, zaq_acc in rows:
        print(f"{b:>5} {rq_acc:>8.4f} {zaq_acc:>8.4f} {teacher_acc:>8.4f}")
    print(f"table: {table_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failures = 0
    for dtype, label in ((np.float32, "float32"), (np.float64, "float64")):
        results = gc.run_suite(dtype)
        for r in results:
            status = "ok  " if r.passed else "FAIL"
            print(f"{status} [{label}] {r.name:40s} rel_err={r.rel_err:.3e} tol={r.tol:g}")
            failures += 0 if r.passed else 1
    if failures:
        print(f"{failures} gradient checks failed")
        return EXIT_FAILURE
    print("all gradient checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zaq",
        description="Data-free low-bit quantization via an adversarial generator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="train the full-precision reference model")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_teacher)

    p = sub.add_parser("quantize", help="raw quantization baseline (no fine-tuning)")
    p.add_argument("--teacher", required=True)
    p.add_argument("--wbits", type=int, required=True)
    p.add_argument("--abits", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("zaq", help="adversarial data-free quantization run")
    p.add_argument("--config", default=None)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_zaq)

    p = sub.add_parser("ft", help="fine-tune the quantized model on real data (reference)")
    p.add_argument("--config", default=None)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ft)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="raw + adversarial quantization per bit width")
    p.add_argument("--bits", required=True, help="comma-separated, e.g. 2,3,4,8")
    p.add_argument("--config", default=None)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ZaqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
