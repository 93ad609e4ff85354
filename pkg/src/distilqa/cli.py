"""Command-line pipeline: corpus generation/import, noising, teacher
training, distillation, evaluation, and the experiment harnesses.

Every command takes explicit flags (plus an optional JSON config file whose
entries fill in unset flags), writes only under --out, and records a
manifest.json in each artifact directory before any training starts.
Exit codes: 0 success, 2 usage error, 1 data/config error with a one-line
``error: ...`` message on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

from . import __version__
from .corpus import (
    Dataset,
    Vocabulary,
    build_vocab,
    generate_toy_corpus,
    import_squad,
    load_jsonl,
    save_jsonl,
)
from .distill import DistillConfig, distill_student, train_supervised
from .evaluation import evaluate
from .harness import run_compression_study, run_kd_grid, run_tau_sweep
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .noise import (
    MODE_FULL,
    MODE_SUB_ONLY,
    NoiseChannelConfig,
    build_confusion_sets,
    calibrate_channel,
    corrupt,
    corpus_wer,
    load_noised,
    save_noised,
)

CORPUS_FILES = ("train.jsonl", "dev.jsonl", "data.jsonl")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


class Manifest:
    """One per artifact directory; first written before work begins."""

    def __init__(self, out_dir: str, command: str, config: dict,
                 inputs: dict, outputs: list[str]):
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, "manifest.json")
        self.body = {
            "command": command,
            "tool_version": __version__,
            "config": config,
            "inputs": inputs,
            "outputs": outputs,
            "started_at": _now(),
            "finished_at": None,
        }
        _write_json(self.path, self.body)

    def finish(self, **extra) -> None:
        self.body.update(extra)
        self.body["finished_at"] = _now()
        _write_json(self.path, self.body)


def _resolve_config_file(args: argparse.Namespace, keys: list[str],
                         defaults: dict) -> dict:
    """Merge an optional JSON config file under explicit flags.

    Flags parsed as None fall back to the file, then to `defaults`; the
    resolved mapping is returned for the manifest.
    """
    file_cfg = {}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = sorted(set(file_cfg) - set(keys))
        if unknown:
            raise ValueError(
                f"config file {config_path}: unknown key {unknown[0]!r}")
    resolved = {}
    for key in keys:
        flag_val = getattr(args, key)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = defaults[key]
    return resolved


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip() != ""]


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip() != ""]


def _corpus_files(dir_path: str) -> list[str]:
    if not os.path.isdir(dir_path):
        raise ValueError(f"corpus directory not found: {dir_path}")
    found = [name for name in CORPUS_FILES
             if os.path.isfile(os.path.join(dir_path, name))]
    if not found:
        raise ValueError(f"no corpus files ({', '.join(CORPUS_FILES)}) "
                         f"in {dir_path}")
    return found


def _load_eval_dataset(path: str) -> Dataset:
    if path.endswith(".jsonl"):
        return load_jsonl(path)
    for name in ("dev.jsonl", "data.jsonl", "train.jsonl"):
        candidate = os.path.join(path, name)
        if os.path.isfile(candidate):
            return load_jsonl(candidate, split_name=name[:-len(".jsonl")])
    raise ValueError(f"no evaluable corpus at {path}")


def _load_teacher(ckpt_path: str):
    params, cfg = load_checkpoint(ckpt_path)
    vocab_path = os.path.join(os.path.dirname(ckpt_path) or ".", "vocab.json")
    if not os.path.isfile(vocab_path):
        raise ValueError(f"vocabulary file not found next to checkpoint: "
                         f"{vocab_path}")
    return params, cfg, Vocabulary.load(vocab_path)


# ---------------------------------------------------------------------------
# model/training flag plumbing

MODEL_KEYS = ["embed_dim", "hidden_dim", "attention_heads", "encoder_layers",
              "max_answer_len", "dropout_rate"]
TRAIN_KEYS = ["lr", "epochs", "batch_size", "seed"]

MODEL_DEFAULTS = {"embed_dim": 64, "hidden_dim": 64, "attention_heads": 2,
                  "encoder_layers": 1, "max_answer_len": 8,
                  "dropout_rate": 0.1}
TRAIN_DEFAULTS = {"lr": 1e-3, "epochs": 5, "batch_size": 16, "seed": 0}


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embed-dim", dest="embed_dim", type=int)
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    parser.add_argument("--heads", dest="attention_heads", type=int)
    parser.add_argument("--layers", dest="encoder_layers", type=int)
    parser.add_argument("--max-answer-len", dest="max_answer_len", type=int)
    parser.add_argument("--dropout", dest="dropout_rate", type=float)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--seed", type=int)


def _model_config(resolved: dict, vocab_size: int, seed: int) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, seed=seed,
                       **{k: resolved[k] for k in MODEL_KEYS})


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    train, dev = generate_toy_corpus(args.train, args.dev, args.seed)
    manifest = Manifest(args.out, "gen",
                        {"train": args.train, "dev": args.dev,
                         "seed": args.seed},
                        inputs={}, outputs=["train.jsonl", "dev.jsonl"])
    save_jsonl(os.path.join(args.out, "train.jsonl"), train)
    save_jsonl(os.path.join(args.out, "dev.jsonl"), dev)
    manifest.finish(n_train=len(train), n_dev=len(dev))
    return 0


def cmd_import(args) -> int:
    dataset, skipped = import_squad(args.squad, split_name="data")
    manifest = Manifest(args.out, "import", {"squad": args.squad},
                        inputs={"squad": args.squad}, outputs=["data.jsonl"])
    save_jsonl(os.path.join(args.out, "data.jsonl"), dataset)
    manifest.finish(n_examples=len(dataset), skipped=skipped)
    return 0


def cmd_noise(args) -> int:
    mode = {"full": MODE_FULL, "sub": MODE_SUB_ONLY,
            "substitution_only": MODE_SUB_ONLY}[args.mode]
    files = _corpus_files(getattr(args, "in"))
    datasets = {name: load_jsonl(os.path.join(getattr(args, "in"), name),
                                 split_name=name[:-len(".jsonl")])
                for name in files}
    union = [ex for name in files for ex in datasets[name]]
    vocab = build_vocab([Dataset(union, split_name="union")])
    confusion = build_confusion_sets(vocab, args.pool_size)

    if args.target_wer == 0.0:
        cfg = NoiseChannelConfig(mode=mode, confusion_pool_size=args.pool_size,
                                 seed=args.seed)
    else:
        cfg = calibrate_channel(args.target_wer, mode, union, args.seed,
                                confusion=confusion, pool_size=args.pool_size)

    outputs = []
    for name in files:
        outputs.append(name)
        outputs.append(name[:-len(".jsonl")] + ".provenance.jsonl")
    manifest = Manifest(args.out, "noise",
                        {"target_wer": args.target_wer, "mode": mode,
                         "seed": args.seed, "pool_size": args.pool_size},
                        inputs={"corpus": getattr(args, "in")},
                        outputs=outputs)

    per_file = {}
    all_noised = []
    for name in files:
        noised = [corrupt(ex, cfg, confusion) for ex in datasets[name]]
        all_noised.extend(noised)
        save_noised(noised, os.path.join(args.out, name),
                    os.path.join(args.out,
                                 name[:-len(".jsonl")] + ".provenance.jsonl"))
        per_file[name] = corpus_wer(noised)
    manifest.finish(
        measured_wer=corpus_wer(all_noised) if all_noised else 0.0,
        measured_wer_per_file=per_file,
        rates={"p_sub": cfg.p_sub, "p_del": cfg.p_del, "p_ins": cfg.p_ins})
    return 0


def cmd_train_teacher(args) -> int:
    resolved = _resolve_config_file(args, MODEL_KEYS + TRAIN_KEYS,
                                    {**MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    train_path = os.path.join(args.data, "train.jsonl")
    if not os.path.isfile(train_path):
        raise ValueError(f"training corpus not found: {train_path}")
    dataset = load_jsonl(train_path, split_name="train")
    vocab = build_vocab([dataset], min_count=args.min_count)
    model_cfg = _model_config(resolved, len(vocab), resolved["seed"])

    manifest = Manifest(args.out, "train-teacher",
                        {**resolved, "min_count": args.min_count},
                        inputs={"data": args.data},
                        outputs=["checkpoint.json", "vocab.json",
                                 "report.json"])
    params, report = train_supervised(
        dataset, vocab, model_cfg, lr=resolved["lr"],
        epochs=resolved["epochs"], batch_size=resolved["batch_size"],
        seed=resolved["seed"])
    save_checkpoint(os.path.join(args.out, "checkpoint.json"),
                    params, model_cfg)
    vocab.save(os.path.join(args.out, "vocab.json"))
    _write_json(os.path.join(args.out, "report.json"), report.to_dict())
    manifest.finish(param_checksum=report.param_checksum,
                    final_loss=report.epoch_losses[-1])
    return 0


def cmd_distill(args) -> int:
    teacher_params, teacher_cfg, vocab = _load_teacher(args.teacher)
    # Student dims default to the teacher's architecture.
    resolved = _resolve_config_file(
        args, MODEL_KEYS + TRAIN_KEYS,
        {**{k: getattr(teacher_cfg, k) for k in MODEL_KEYS},
         **TRAIN_DEFAULTS})
    train_path = os.path.join(args.noisy, "train.jsonl")
    sidecar = os.path.join(args.noisy, "train.provenance.jsonl")
    if not os.path.isfile(train_path) or not os.path.isfile(sidecar):
        raise ValueError(
            f"noisy corpus needs train.jsonl and train.provenance.jsonl "
            f"under {args.noisy}")
    noisy = load_noised(train_path, sidecar)
    student_cfg = _model_config(resolved, len(vocab), resolved["seed"])
    dcfg = DistillConfig(
        alpha=args.alpha, tau=args.tau, kl_direction=args.kl_direction,
        teacher_input=args.teacher_input, lr=resolved["lr"],
        epochs=resolved["epochs"], batch_size=resolved["batch_size"],
        seed=resolved["seed"], drop_lost_spans=not args.keep_lost_spans)

    manifest = Manifest(args.out, "distill",
                        {**resolved, "alpha": args.alpha, "tau": args.tau,
                         "kl_direction": args.kl_direction,
                         "teacher_input": args.teacher_input,
                         "drop_lost_spans": dcfg.drop_lost_spans},
                        inputs={"noisy": args.noisy, "teacher": args.teacher},
                        outputs=["checkpoint.json", "vocab.json",
                                 "report.json"])
    params, report = distill_student(noisy, teacher_params, teacher_cfg,
                                     student_cfg, dcfg, vocab)
    save_checkpoint(os.path.join(args.out, "checkpoint.json"),
                    params, student_cfg)
    vocab.save(os.path.join(args.out, "vocab.json"))
    _write_json(os.path.join(args.out, "report.json"), report.to_dict())
    manifest.finish(param_checksum=report.param_checksum,
                    final_loss=report.epoch_losses[-1],
                    n_trained=report.n_examples)
    return 0


def cmd_eval(args) -> int:
    params, cfg, vocab = _load_teacher(args.ckpt)
    dataset = _load_eval_dataset(args.data)
    report = evaluate(params, cfg, vocab, dataset)
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    _write_json(args.out, report.to_dict())
    return 0


def cmd_sweep(args) -> int:
    resolved = _resolve_config_file(args, TRAIN_KEYS, dict(TRAIN_DEFAULTS))
    teacher_params, teacher_cfg, vocab = _load_teacher(args.teacher)
    train_path = os.path.join(args.noisy, "train.jsonl")
    sidecar = os.path.join(args.noisy, "train.provenance.jsonl")
    noisy = load_noised(train_path, sidecar)
    eval_dataset = _load_eval_dataset(args.eval or args.noisy)

    dcfg = DistillConfig(alpha=args.alpha, lr=resolved["lr"],
                         epochs=resolved["epochs"],
                         batch_size=resolved["batch_size"])
    manifest = Manifest(args.out, "sweep",
                        {**resolved, "alpha": args.alpha, "taus": args.taus,
                         "seeds": args.seeds},
                        inputs={"noisy": args.noisy, "teacher": args.teacher,
                                "eval": args.eval or args.noisy},
                        outputs=["sweep.json", "sweep.csv"])
    report = run_tau_sweep(noisy, eval_dataset, teacher_params, teacher_cfg,
                           teacher_cfg, dcfg, args.taus, args.seeds, vocab)
    _write_json(os.path.join(args.out, "sweep.json"), report.to_dict())
    with open(os.path.join(args.out, "sweep.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(report.to_csv())
    manifest.finish(n_runs=len(report.per_run))
    return 0


def cmd_grid(args) -> int:
    resolved = _resolve_config_file(args, MODEL_KEYS + TRAIN_KEYS,
                                    {**MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    clean_train = load_jsonl(os.path.join(args.clean, "train.jsonl"), "train")
    clean_dev = load_jsonl(os.path.join(args.clean, "dev.jsonl"), "dev")
    noisy_train = load_noised(
        os.path.join(args.noisy, "train.jsonl"),
        os.path.join(args.noisy, "train.provenance.jsonl"))
    noisy_dev = load_jsonl(os.path.join(args.noisy, "dev.jsonl"), "dev")
    vocab = build_vocab([clean_train], min_count=args.min_count)

    model_cfg = _model_config(resolved, len(vocab), resolved["seed"])
    dcfg = DistillConfig(alpha=args.alpha, tau=args.tau, lr=resolved["lr"],
                         epochs=resolved["epochs"],
                         batch_size=resolved["batch_size"])
    manifest = Manifest(args.out, "grid",
                        {**resolved, "alpha": args.alpha, "tau": args.tau,
                         "seeds": args.seeds,
                         "teacher_epochs": args.teacher_epochs},
                        inputs={"clean": args.clean, "noisy": args.noisy},
                        outputs=["grid.json"])
    report = run_kd_grid(clean_train, noisy_train, clean_dev, noisy_dev,
                         model_cfg, model_cfg, dcfg, args.seeds, vocab,
                         teacher_epochs=args.teacher_epochs)
    _write_json(os.path.join(args.out, "grid.json"), report)
    manifest.finish()
    return 0


def cmd_compress(args) -> int:
    resolved = _resolve_config_file(args, MODEL_KEYS + TRAIN_KEYS,
                                    {**MODEL_DEFAULTS, **TRAIN_DEFAULTS})
    clean_train = load_jsonl(os.path.join(args.clean, "train.jsonl"), "train")
    noisy_train = load_noised(
        os.path.join(args.noisy, "train.jsonl"),
        os.path.join(args.noisy, "train.provenance.jsonl"))
    noisy_dev = load_jsonl(os.path.join(args.noisy, "dev.jsonl"), "dev")
    vocab = build_vocab([clean_train], min_count=args.min_count)

    big_cfg = _model_config(resolved, len(vocab), resolved["seed"])
    small_embed = args.small_embed_dim or max(big_cfg.attention_heads,
                                              big_cfg.embed_dim // 2)
    small_hidden = args.small_hidden_dim or max(big_cfg.attention_heads,
                                                big_cfg.hidden_dim // 2)
    small_cfg = ModelConfig(
        vocab_size=len(vocab), embed_dim=small_embed,
        hidden_dim=small_hidden, attention_heads=big_cfg.attention_heads,
        encoder_layers=big_cfg.encoder_layers,
        max_answer_len=big_cfg.max_answer_len,
        dropout_rate=big_cfg.dropout_rate, seed=resolved["seed"])
    dcfg = DistillConfig(alpha=args.alpha, tau=args.tau, lr=resolved["lr"],
                         epochs=resolved["epochs"],
                         batch_size=resolved["batch_size"])
    manifest = Manifest(args.out, "compress",
                        {**resolved, "alpha": args.alpha, "tau": args.tau,
                         "seeds": args.seeds,
                         "small_embed_dim": small_embed,
                         "small_hidden_dim": small_hidden,
                         "teacher_epochs": args.teacher_epochs},
                        inputs={"clean": args.clean, "noisy": args.noisy},
                        outputs=["compress.json"])
    report = run_compression_study(clean_train, noisy_train, noisy_dev,
                                   big_cfg, small_cfg, dcfg, args.seeds,
                                   vocab, teacher_epochs=args.teacher_epochs)
    _write_json(os.path.join(args.out, "compress.json"), report)
    manifest.finish(param_counts=report["param_counts"])
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distilqa",
        description="Teacher-student distillation pipeline for extractive "
                    "QA over noisy transcripts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a toy QA corpus")
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--dev", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("import", help="convert SQuAD v1.1 JSON to JSONL")
    p.add_argument("--squad", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("noise", help="corrupt a corpus to a target WER")
    p.add_argument("--in", required=True)
    p.add_argument("--target-wer", dest="target_wer", type=float,
                   required=True)
    p.add_argument("--mode", choices=["full", "sub", "substitution_only"],
                   default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pool-size", dest="pool_size", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("train-teacher", help="supervised span training")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--min-count", dest="min_count", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="train a student against a teacher")
    p.add_argument("--noisy", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--kl-direction", dest="kl_direction",
                   choices=["teacher_to_student", "student_to_teacher"],
                   default="teacher_to_student")
    p.add_argument("--teacher-input", dest="teacher_input",
                   choices=["student_view", "clean_paired"],
                   default="student_view")
    p.add_argument("--keep-lost-spans", dest="keep_lost_spans",
                   action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="temperature sweep")
    p.add_argument("--noisy", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--eval", default=None)
    p.add_argument("--taus", type=_float_list, default=[1, 2, 4, 6, 8, 10])
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("grid", help="teacher / student / student+KD grid")
    p.add_argument("--clean", required=True)
    p.add_argument("--noisy", required=True)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--teacher-epochs", dest="teacher_epochs", type=int,
                   default=None)
    p.add_argument("--min-count", dest="min_count", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("compress", help="big-teacher / small-student study")
    p.add_argument("--clean", required=True)
    p.add_argument("--noisy", required=True)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--small-embed-dim", dest="small_embed_dim", type=int,
                   default=None)
    p.add_argument("--small-hidden-dim", dest="small_hidden_dim", type=int,
                   default=None)
    p.add_argument("--teacher-epochs", dest="teacher_epochs", type=int,
                   default=None)
    p.add_argument("--min-count", dest="min_count", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_compress)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
