#!/usr/bin/env python3
"""Full study at paper-replica scale: the teacher/student/student+KD grid,
the temperature sweep, and the big-vs-small compression run, each over three
seeds.  Expect roughly 30-60 minutes on one CPU core.

    python3 scripts/run_study.py --out runs/study
"""

import argparse
import os
import sys

from distilqa.cli import main as cli


def run(argv):
    print("+ distilqa " + " ".join(argv), flush=True)
    code = cli(argv)
    if code != 0:
        sys.exit(code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/study")
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--dev", type=int, default=500)
    ap.add_argument("--target-wer", type=float, default=0.2277)
    ap.add_argument("--epochs", type=int, default=16)
    ap.add_argument("--teacher-epochs", type=int, default=16)
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()

    out = args.out
    corpus = os.path.join(out, "corpus")
    noisy = os.path.join(out, "noisy")
    teacher = os.path.join(out, "teacher")

    run(["gen", "--train", str(args.train), "--dev", str(args.dev),
         "--seed", "0", "--out", corpus])
    run(["noise", "--in", corpus, "--target-wer", str(args.target_wer),
         "--mode", "full", "--seed", "0", "--out", noisy])

    common = ["--epochs", str(args.epochs), "--seeds", args.seeds,
              "--teacher-epochs", str(args.teacher_epochs)]
    run(["grid", "--clean", corpus, "--noisy", noisy,
         "--out", os.path.join(out, "grid")] + common)
    run(["compress", "--clean", corpus, "--noisy", noisy,
         "--out", os.path.join(out, "compress")] + common)

    run(["train-teacher", "--data", corpus,
         "--epochs", str(args.teacher_epochs), "--seed", "0",
         "--out", teacher])
    run(["sweep", "--noisy", noisy,
         "--teacher", os.path.join(teacher, "checkpoint.json"),
         "--eval", os.path.join(noisy, "dev.jsonl"),
         "--epochs", str(args.epochs), "--seeds", args.seeds,
         "--out", os.path.join(out, "sweep")])

    print(f"done; reports under {out}/")
