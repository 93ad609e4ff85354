"""Teacher-student training for span prediction.

The combined objective per head (start, end) is

    alpha * tau^2 * KL(p_tau(teacher) || p_tau(student)) + (1 - alpha) * CE

averaged over the two heads, with the hard cross-entropy term always taken
on the student's temperature-1 logits against the gold span.  The KL
argument order can be swapped; the teacher side never receives gradients.
``train_supervised`` is the alpha = 0 special case packaged standalone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, QaExample, Vocabulary
from .model import (
    ModelConfig,
    ModelParams,
    SpanLogits,
    forward,
    init_params,
    params_checksum,
)
from .noise import MODE_SUB_ONLY, SPAN_LOST, NoisedExample
from .numerics import Adam, Tensor, add, cross_entropy, kl_div, mul, softmax_temp, zero_grad

KL_TEACHER_TO_STUDENT = "teacher_to_student"
KL_STUDENT_TO_TEACHER = "student_to_teacher"

INPUT_STUDENT_VIEW = "student_view"
INPUT_CLEAN_PAIRED = "clean_paired"


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 0.9
    tau: float = 2.0
    kl_direction: str = KL_TEACHER_TO_STUDENT
    teacher_input: str = INPUT_STUDENT_VIEW
    lr: float = 1e-3
    epochs: int = 1
    batch_size: int = 16
    seed: int = 0
    drop_lost_spans: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.kl_direction not in (KL_TEACHER_TO_STUDENT,
                                     KL_STUDENT_TO_TEACHER):
            raise ValueError(f"unknown kl_direction {self.kl_direction!r}")
        if self.teacher_input not in (INPUT_STUDENT_VIEW, INPUT_CLEAN_PAIRED):
            raise ValueError(f"unknown teacher_input {self.teacher_input!r}")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainReport:
    seed: int
    epochs: int
    n_examples: int
    epoch_losses: list[float]
    epoch_kl: list[float] | None
    epoch_ce: list[float] | None
    wall_clock_sec: float
    param_checksum: str

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "epochs": self.epochs,
            "n_examples": self.n_examples,
            "epoch_losses": self.epoch_losses,
            "epoch_kl": self.epoch_kl,
            "epoch_ce": self.epoch_ce,
            "wall_clock_sec": self.wall_clock_sec,
            "param_checksum": self.param_checksum,
        }


def _hard_loss(student: SpanLogits, gold: tuple[int, int]) -> Tensor:
    gs, ge = gold
    return mul(add(cross_entropy(student.start, gs),
                   cross_entropy(student.end, ge)), 0.5)


def kd_loss(student: SpanLogits, teacher: SpanLogits,
            gold: tuple[int, int], cfg: DistillConfig) -> Tensor:
    """Distillation objective for one example, mean over the two heads.

    The teacher logits are detached inside, so the result is differentiable
    with respect to the student logits only.
    """
    n = student.start.data.shape[0]
    for vec in (student.end, teacher.start, teacher.end):
        if vec.data.shape != (n,):
            raise ValueError(
                f"start/end logit lengths disagree: expected ({n},), "
                f"got {vec.data.shape}")
    gs, ge = gold
    if not (0 <= gs < n and 0 <= ge < n):
        raise ValueError(f"gold span ({gs}, {ge}) out of range for length {n}")

    if cfg.alpha == 0.0:
        return _hard_loss(student, gold)

    alpha, tau = cfg.alpha, cfg.tau
    heads = []
    for s_logits, t_logits, g in ((student.start, teacher.start, gs),
                                  (student.end, teacher.end, ge)):
        p_student = softmax_temp(s_logits, tau)
        p_teacher = softmax_temp(t_logits.detach(), tau)
        if cfg.kl_direction == KL_TEACHER_TO_STUDENT:
            soft = kl_div(p_teacher, p_student)
        else:
            soft = kl_div(p_student, p_teacher)
        soft = mul(soft, alpha * tau * tau)
        if alpha == 1.0:
            heads.append(soft)
        else:
            heads.append(add(soft, mul(cross_entropy(s_logits, g), 1.0 - alpha)))
    return mul(add(heads[0], heads[1]), 0.5)


# ---------------------------------------------------------------------------
# training loops


@dataclass
class _Encoded:
    example_id: str
    question: list[int]
    document: list[int]
    gold: tuple[int, int]
    teacher_logits: SpanLogits | None = None


def _encode(examples: list[QaExample], vocab: Vocabulary) -> list[_Encoded]:
    out = []
    for ex in examples:
        out.append(_Encoded(
            example_id=ex.id,
            question=vocab.encode(ex.question_tokens),
            document=vocab.encode(ex.document_tokens),
            gold=(ex.answer_start, ex.answer_end),
        ))
    return out


def _run_loop(encoded: list[_Encoded], params: ModelParams,
              model_cfg: ModelConfig, loss_fn, lr: float, epochs: int,
              batch_size: int, seed: int,
              track_components: bool) -> TrainReport:
    """Shared Adam loop.  The single run generator drives both the per-epoch
    shuffle and dropout, so two loops with identical configs and loss graphs
    stay bitwise in step."""
    start_time = time.perf_counter()
    rng = np.random.default_rng(seed)
    opt = Adam([params[name] for name in sorted(params)], lr=lr)
    n = len(encoded)

    epoch_losses: list[float] = []
    epoch_kl: list[float] = []
    epoch_ce: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        total_kl = 0.0
        total_ce = 0.0
        for lo in range(0, n, batch_size):
            batch = [encoded[int(i)] for i in order[lo:lo + batch_size]]
            zero_grad(params.values())
            batch_loss = None
            for enc in batch:
                logits = forward(params, model_cfg, enc.question,
                                 enc.document, train_mode=True, rng=rng)
                loss, kl_part, ce_part = loss_fn(logits, enc)
                total += loss.item()
                total_kl += kl_part
                total_ce += ce_part
                batch_loss = loss if batch_loss is None else add(batch_loss, loss)
            batch_loss = mul(batch_loss, 1.0 / len(batch))
            batch_loss.backward()
            opt.step()
        epoch_losses.append(total / n)
        epoch_kl.append(total_kl / n)
        epoch_ce.append(total_ce / n)

    return TrainReport(
        seed=seed,
        epochs=epochs,
        n_examples=n,
        epoch_losses=epoch_losses,
        epoch_kl=epoch_kl if track_components else None,
        epoch_ce=epoch_ce if track_components else None,
        wall_clock_sec=time.perf_counter() - start_time,
        param_checksum=params_checksum(params),
    )


def train_supervised(dataset: Dataset | list, vocab: Vocabulary,
                     model_cfg: ModelConfig, lr: float = 1e-3,
                     epochs: int = 1, batch_size: int = 16,
                     seed: int = 0) -> tuple[ModelParams, TrainReport]:
    """Adam on the mean start/end cross entropy; shuffled per epoch."""
    examples = list(dataset)
    if not examples:
        raise ValueError("training needs a non-empty dataset")
    if model_cfg.vocab_size != len(vocab):
        raise ValueError(
            f"model vocab_size {model_cfg.vocab_size} != vocabulary size "
            f"{len(vocab)}")
    encoded = _encode(examples, vocab)
    params = init_params(model_cfg)

    def loss_fn(logits: SpanLogits, enc: _Encoded):
        loss = _hard_loss(logits, enc.gold)
        return loss, 0.0, 0.0

    report = _run_loop(encoded, params, model_cfg, loss_fn, lr, epochs,
                       batch_size, seed, track_components=False)
    return params, report


def _copy_params(params: ModelParams) -> ModelParams:
    return {name: Tensor(p.data.copy(), requires_grad=True)
            for name, p in params.items()}


def distill_student(noisy: list[NoisedExample], teacher_params: ModelParams,
                    teacher_cfg: ModelConfig, student_cfg: ModelConfig,
                    cfg: DistillConfig, vocab: Vocabulary,
                    student_init: ModelParams | None = None,
                    ) -> tuple[ModelParams, TrainReport]:
    """Train a student on noisy documents against teacher soft labels.

    The teacher runs in inference mode (no dropout, no gradients) on either
    the student's noisy document or, in clean_paired mode, the aligned
    source document; clean_paired therefore demands length-preserving noise
    and is rejected up front otherwise.  Lost-span examples are dropped when
    cfg.drop_lost_spans.
    """
    if teacher_cfg.vocab_size != len(vocab) or student_cfg.vocab_size != len(vocab):
        raise ValueError("teacher/student vocab_size must match the vocabulary")

    if cfg.teacher_input == INPUT_CLEAN_PAIRED:
        for nx in noisy:
            ident = list(range(len(nx.source_document)))
            if nx.provenance != ident:
                raise ValueError(
                    f"clean_paired teacher input requires length-preserving "
                    f"({MODE_SUB_ONLY}) noise, but example "
                    f"{nx.example.id!r} has a non-identity alignment")

    kept = [nx for nx in noisy
            if not (cfg.drop_lost_spans and nx.span_status == SPAN_LOST)]
    if not kept:
        raise ValueError("no trainable examples remain after dropping lost spans")

    encoded = _encode([nx.example for nx in kept], vocab)
    if cfg.alpha > 0.0:
        for enc, nx in zip(encoded, kept):
            doc = (nx.source_document if cfg.teacher_input == INPUT_CLEAN_PAIRED
                   else nx.example.document_tokens)
            logits = forward(teacher_params, teacher_cfg, enc.question,
                             vocab.encode(doc), train_mode=False)
            enc.teacher_logits = SpanLogits(start=logits.start.detach(),
                                            end=logits.end.detach())

    params = _copy_params(student_init) if student_init is not None \
        else init_params(student_cfg)

    if cfg.alpha == 0.0:
        def loss_fn(logits: SpanLogits, enc: _Encoded):
            return _hard_loss(logits, enc.gold), 0.0, 0.0
        track = False
    else:
        def loss_fn(logits: SpanLogits, enc: _Encoded):
            loss = kd_loss(logits, enc.teacher_logits, enc.gold, cfg)
            # Component values for the report, off-graph.
            frozen = SpanLogits(logits.start.detach(), logits.end.detach())
            kl_part = 0.0
            for s_vec, t_vec in ((frozen.start, enc.teacher_logits.start),
                                 (frozen.end, enc.teacher_logits.end)):
                p_s = softmax_temp(s_vec, cfg.tau)
                p_t = softmax_temp(t_vec, cfg.tau)
                pair = (p_t, p_s) if cfg.kl_direction == KL_TEACHER_TO_STUDENT \
                    else (p_s, p_t)
                kl_part += 0.5 * kl_div(*pair).item()
            ce_part = _hard_loss(frozen, enc.gold).item() if cfg.alpha < 1.0 else 0.0
            return loss, kl_part, ce_part
        track = True

    report = _run_loop(encoded, params, student_cfg, loss_fn, cfg.lr,
                       cfg.epochs, cfg.batch_size, cfg.seed,
                       track_components=track)
    return params, report
