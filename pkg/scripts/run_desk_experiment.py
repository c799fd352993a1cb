#!/usr/bin/env python3
"""Full desk experiment: dataset, teacher, raw-quantization baseline, the
adversarial run, and the fine-tuning reference, with a summary table.

The expected qualitative ordering is FT >= adversarial > raw quantization.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from zaq.cli import main as cli  # noqa: E402


def run(argv):
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"command {' '.join(argv)} failed with exit code {code}")


def grab_accuracy(path: Path, token: str) -> float:
    for line in path.read_text().splitlines():
        if line.startswith(token):
            return float(line.split()[-1])
    raise SystemExit(f"no {token!r} line in {path}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/desk", help="output directory")
    parser.add_argument("--config", default=None, help="config file (defaults otherwise)")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_flags = ["--config", args.config] if args.config else []

    t0 = time.time()
    run(["gen-data", *cfg_flags, "--out", str(out / "data")])
    run(["train-teacher", *cfg_flags, "--out", str(out / "teacher")])
    teacher_ckpt = str(out / "teacher" / "teacher.bin")

    run(["quantize", "--teacher", teacher_ckpt, "--wbits", "3", "--abits", "3",
         *cfg_flags, "--out", str(out / "rq")])
    run(["zaq", *cfg_flags, "--teacher", teacher_ckpt, "--out", str(out / "zaq")])
    run(["ft", *cfg_flags, "--teacher", teacher_ckpt, "--out", str(out / "ft")])

    print(f"\ndone in {(time.time() - t0) / 60:.1f} min; artifacts under {out}")
    print("compare accuracies with:")
    print(f"  zaq eval --model {out}/rq/q_rq.bin   --data {out}/data")
    print(f"  zaq eval --model {out}/zaq/q_best.bin --data {out}/data")
    print(f"  zaq eval --model {out}/ft/q_ft.bin   --data {out}/data")


if __name__ == "__main__":
    main()
