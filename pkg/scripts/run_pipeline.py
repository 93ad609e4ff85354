#!/usr/bin/env python3
"""End-to-end demo at reduced scale: generate a corpus, corrupt it to a
target WER, train a teacher on clean text, distill a student on noisy text,
and score both on the noisy dev set.

Run from the repository root:

    python3 scripts/run_pipeline.py --out runs/demo
"""

import argparse
import json
import os
import sys

from distilqa.cli import main as cli


def run(argv):
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def show(path, label):
    with open(path) as fh:
        body = json.load(fh)
    print(f"{label}: EM {body['em']:.3f}  F1 {body['f1']:.3f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--train", type=int, default=500)
    ap.add_argument("--dev", type=int, default=150)
    ap.add_argument("--target-wer", type=float, default=0.2277)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = args.out
    corpus = os.path.join(out, "corpus")
    noisy = os.path.join(out, "noisy")
    teacher = os.path.join(out, "teacher")
    student = os.path.join(out, "student")

    run(["gen", "--train", str(args.train), "--dev", str(args.dev),
         "--seed", str(args.seed), "--out", corpus])
    run(["noise", "--in", corpus, "--target-wer", str(args.target_wer),
         "--mode", "full", "--seed", str(args.seed), "--out", noisy])
    run(["train-teacher", "--data", corpus, "--epochs", str(args.epochs),
         "--seed", str(args.seed), "--out", teacher])
    run(["distill", "--noisy", noisy,
         "--teacher", os.path.join(teacher, "checkpoint.json"),
         "--epochs", str(args.epochs), "--seed", str(args.seed),
         "--out", student])

    run(["eval", "--ckpt", os.path.join(teacher, "checkpoint.json"),
         "--data", os.path.join(noisy, "dev.jsonl"),
         "--out", os.path.join(out, "teacher_noisy.json")])
    run(["eval", "--ckpt", os.path.join(student, "checkpoint.json"),
         "--data", os.path.join(noisy, "dev.jsonl"),
         "--out", os.path.join(out, "student_noisy.json")])

    show(os.path.join(out, "teacher_noisy.json"), "teacher on noisy dev")
    show(os.path.join(out, "student_noisy.json"), "student on noisy dev")
