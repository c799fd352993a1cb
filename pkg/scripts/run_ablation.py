#!/usr/bin/env python3
"""Component ablation over seeds: output discrepancy alone, plus the
relation-map term, plus the activation regularizer. Reports mean final
accuracy per variant."""

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import zaq  # noqa: E402
from zaq.config import RunConfig, load_config  # noqa: E402
from zaq.models import set_requires_grad  # noqa: E402
from zaq.train import run, train_supervised  # noqa: E402

VARIANTS = {
    "d_o only": {"disable_df": True, "disable_la": True},
    "d_o + d_f": {"disable_la": True},
    "full": {},
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=None)
    parser.add_argument("--seeds", default="0,1,2")
    parser.add_argument("--epochs", type=int, default=None,
                        help="override schedule length for quicker comparisons")
    args = parser.parse_args()
    base = load_config(args.config) if args.config else RunConfig()
    if args.epochs is not None:
        base = dataclasses.replace(base, train=dataclasses.replace(base.train,
                                                                   epochs=args.epochs))
    seeds = [int(s) for s in args.seeds.split(",")]

    train_data, test_data = zaq.gen_dataset(base.data)
    teacher = zaq.build_teacher(base.data.num_classes,
                                np.random.default_rng([base.train.seed, 5]))
    train_supervised(teacher, train_data, test_data, base.data.num_classes,
                     epochs=base.teacher_epochs, lr=base.teacher_lr,
                     batch_size=base.train.batch_size, seed=base.train.seed)
    teacher.eval()
    set_requires_grad(teacher, False)

    results = {}
    for name, switches in VARIANTS.items():
        accs = []
        for seed in seeds:
            cfg = dataclasses.replace(
                base, **switches,
                train=dataclasses.replace(base.train, seed=seed))
            out = run(teacher, cfg, test_data)
            accs.append(out.best_accuracy)
            print(f"{name:10s} seed {seed}: {out.best_accuracy:.4f}", flush=True)
        results[name] = float(np.mean(accs))

    print("\nmean best accuracy per variant:")
    for name, mean_acc in results.items():
        print(f"  {name:10s} {mean_acc:.4f}")


if __name__ == "__main__":
    main()
