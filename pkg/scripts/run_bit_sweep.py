#!/usr/bin/env python3
"""Accuracy-versus-bit-width sweep: raw quantization and the adversarial run
at each precision, against a shared teacher."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from zaq.cli import main as cli  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/sweep")
    parser.add_argument("--bits", default="2,3,4,8")
    parser.add_argument("--config", default=None)
    parser.add_argument("--teacher", default=None,
                        help="existing teacher checkpoint; trained fresh when omitted")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_flags = ["--config", args.config] if args.config else []

    teacher = args.teacher
    if teacher is None:
        code = cli(["train-teacher", *cfg_flags, "--out", str(out / "teacher")])
        if code != 0:
            raise SystemExit(code)
        teacher = str(out / "teacher" / "teacher.bin")

    raise SystemExit(cli(["sweep", "--bits", args.bits, *cfg_flags,
                          "--teacher", teacher, "--out", str(out)]))


if __name__ == "__main__":
    main()
