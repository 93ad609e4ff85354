"""Experiment drivers: baseline-vs-KD grid, temperature sweep, and the
capacity-compression study.  Each returns a plain dict (or SweepReport)
that serializes to JSON, with per-seed results and medians."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, replace

from .corpus import Dataset, Vocabulary
from .distill import DistillConfig, distill_student, train_supervised
from .evaluation import evaluate
from .model import ModelConfig, init_params, parameter_count
from .noise import NoisedExample

GRID_MODELS = ("teacher", "student", "student_kd")
GRID_SPLITS = ("clean_dev", "noisy_dev")


def _median_cell(per_seed: dict, path: tuple[str, ...]) -> dict:
    values = {"em": [], "f1": []}
    for seed_result in per_seed.values():
        cell = seed_result
        for key in path:
            cell = cell[key]
        values["em"].append(cell["em"])
        values["f1"].append(cell["f1"])
    return {"em": statistics.median(values["em"]),
            "f1": statistics.median(values["f1"])}


def _score(params, cfg, vocab, dataset) -> dict:
    report = evaluate(params, cfg, vocab, dataset)
    return {"em": report.em, "f1": report.f1}


def run_kd_grid(clean_train: Dataset, noisy_train: list[NoisedExample],
                clean_dev: Dataset, noisy_dev: Dataset,
                teacher_cfg: ModelConfig, student_cfg: ModelConfig,
                distill_cfg: DistillConfig, seeds: list[int],
                vocab: Vocabulary,
                teacher_epochs: int | None = None) -> dict:
    """Per seed: teacher on clean text, student without KD on noisy text,
    student with KD on noisy text; all three scored on clean and noisy dev."""
    t_epochs = distill_cfg.epochs if teacher_epochs is None else teacher_epochs
    per_seed: dict[str, dict] = {}
    for seed in seeds:
        t_cfg = replace(teacher_cfg, seed=seed)
        s_cfg = replace(student_cfg, seed=seed)
        teacher, _ = train_supervised(
            clean_train, vocab, t_cfg, lr=distill_cfg.lr, epochs=t_epochs,
            batch_size=distill_cfg.batch_size, seed=seed)
        student, _ = distill_student(
            noisy_train, teacher, t_cfg, s_cfg,
            replace(distill_cfg, alpha=0.0, seed=seed), vocab)
        student_kd, _ = distill_student(
            noisy_train, teacher, t_cfg, s_cfg,
            replace(distill_cfg, seed=seed), vocab)
        runs = {"teacher": (teacher, t_cfg), "student": (student, s_cfg),
                "student_kd": (student_kd, s_cfg)}
        per_seed[str(seed)] = {
            model: {"clean_dev": _score(p, c, vocab, clean_dev),
                    "noisy_dev": _score(p, c, vocab, noisy_dev)}
            for model, (p, c) in runs.items()
        }
    return {
        "models": list(GRID_MODELS),
        "splits": list(GRID_SPLITS),
        "seeds": list(seeds),
        "per_seed": per_seed,
        "median": {model: {split: _median_cell(per_seed, (model, split))
                           for split in GRID_SPLITS}
                   for model in GRID_MODELS},
    }


@dataclass
class SweepReport:
    rows: list[dict]          # one per tau: {"tau", "em", "f1"} (medians)
    per_run: list[dict]       # one per (tau, seed): {"tau", "seed", "em", "f1"}
    seeds: list[int]
    config: dict

    def __post_init__(self):
        taus = [row["tau"] for row in self.rows]
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError("sweep taus must be strictly increasing")

    def to_dict(self) -> dict:
        return {"rows": self.rows, "per_run": self.per_run,
                "seeds": self.seeds, "config": self.config}

    def to_csv(self) -> str:
        lines = ["tau,seed,em,f1"]
        for run in self.per_run:
            lines.append(f"{run['tau']:g},{run['seed']},"
                         f"{run['em']:.6f},{run['f1']:.6f}")
        return "\n".join(lines) + "\n"


def run_tau_sweep(noisy_train: list[NoisedExample], eval_dataset: Dataset,
                  teacher_params, teacher_cfg: ModelConfig,
                  student_cfg: ModelConfig, distill_cfg: DistillConfig,
                  taus: list[float], seeds: list[int],
                  vocab: Vocabulary) -> SweepReport:
    """One KD run per (tau, seed) against a fixed teacher; everything else
    held at distill_cfg."""
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValueError("taus must be strictly increasing")
    per_run = []
    rows = []
    for tau in taus:
        ems, f1s = [], []
        for seed in seeds:
            cfg = replace(distill_cfg, tau=tau, seed=seed)
            student, _ = distill_student(
                noisy_train, teacher_params, teacher_cfg,
                replace(student_cfg, seed=seed), cfg, vocab)
            scores = _score(student, replace(student_cfg, seed=seed),
                            vocab, eval_dataset)
            per_run.append({"tau": tau, "seed": seed, **scores})
            ems.append(scores["em"])
            f1s.append(scores["f1"])
        rows.append({"tau": tau, "em": statistics.median(ems),
                     "f1": statistics.median(f1s)})
    config = {"alpha": distill_cfg.alpha,
              "kl_direction": distill_cfg.kl_direction,
              "teacher_input": distill_cfg.teacher_input,
              "lr": distill_cfg.lr, "epochs": distill_cfg.epochs,
              "batch_size": distill_cfg.batch_size}
    return SweepReport(rows=rows, per_run=per_run, seeds=list(seeds),
                       config=config)


def run_compression_study(clean_train: Dataset,
                          noisy_train: list[NoisedExample],
                          noisy_dev: Dataset, big_cfg: ModelConfig,
                          small_cfg: ModelConfig,
                          distill_cfg: DistillConfig, seeds: list[int],
                          vocab: Vocabulary,
                          teacher_epochs: int | None = None) -> dict:
    """Big teacher on clean text; small student alone vs small student
    distilled from the big teacher, both on noisy text."""
    big_count = parameter_count(init_params(big_cfg))
    small_count = parameter_count(init_params(small_cfg))
    if small_count >= big_count:
        raise ValueError(
            f"small model must have fewer parameters than big "
            f"({small_count} >= {big_count})")
    t_epochs = distill_cfg.epochs if teacher_epochs is None else teacher_epochs
    per_seed: dict[str, dict] = {}
    for seed in seeds:
        b_cfg = replace(big_cfg, seed=seed)
        s_cfg = replace(small_cfg, seed=seed)
        teacher, _ = train_supervised(
            clean_train, vocab, b_cfg, lr=distill_cfg.lr, epochs=t_epochs,
            batch_size=distill_cfg.batch_size, seed=seed)
        small_alone, _ = distill_student(
            noisy_train, teacher, b_cfg, s_cfg,
            replace(distill_cfg, alpha=0.0, seed=seed), vocab)
        small_kd, _ = distill_student(
            noisy_train, teacher, b_cfg, s_cfg,
            replace(distill_cfg, seed=seed), vocab)
        per_seed[str(seed)] = {
            "teacher_big": _score(teacher, b_cfg, vocab, noisy_dev),
            "small_alone": _score(small_alone, s_cfg, vocab, noisy_dev),
            "small_kd": _score(small_kd, s_cfg, vocab, noisy_dev),
        }
    return {
        "param_counts": {"big": big_count, "small": small_count},
        "seeds": list(seeds),
        "per_seed": per_seed,
        "median": {model: _median_cell(per_seed, (model,))
                   for model in ("teacher_big", "small_alone", "small_kd")},
    }
