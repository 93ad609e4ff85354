"""Answer scoring (exact match and token-overlap F1) and dataset evaluation.

Normalization and metrics follow the standard SQuAD v1.1 convention:
lowercase, strip punctuation, drop the articles a/an/the, collapse
whitespace; F1 counts multiset token overlap between prediction and gold.
"""

from __future__ import annotations

import hashlib
import json
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass

from .corpus import Dataset, Vocabulary, UNK_ID
from .model import ModelConfig, ModelParams, extract_span, forward, params_checksum

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def f1_score(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


@dataclass
class EvalReport:
    em: float
    f1: float
    n_examples: int
    per_example: list[dict]
    config_fingerprint: str
    warnings: list[str]

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "f1": self.f1,
            "n_examples": self.n_examples,
            "per_example": self.per_example,
            "config_fingerprint": self.config_fingerprint,
            "warnings": self.warnings,
        }


def evaluate(params: ModelParams, config: ModelConfig, vocab: Vocabulary,
             dataset: Dataset | list,
             max_answer_len: int | None = None) -> EvalReport:
    """Inference-mode forward over every example, span extraction, and
    text-level scoring against answer_text.

    A near-total vocabulary mismatch (more than 99% of tokens unknown) is
    reported as a warning, not an error.
    """
    examples = list(dataset)
    if not examples:
        raise ValueError("evaluation needs a non-empty dataset")
    if config.vocab_size != len(vocab):
        raise ValueError(
            f"model vocab_size {config.vocab_size} != vocabulary size "
            f"{len(vocab)}")
    limit = config.max_answer_len if max_answer_len is None else max_answer_len

    n_tokens = 0
    n_unk = 0
    per_example = []
    em_total = 0.0
    f1_total = 0.0
    for ex in examples:
        q_ids = vocab.encode(ex.question_tokens)
        d_ids = vocab.encode(ex.document_tokens)
        n_tokens += len(q_ids) + len(d_ids)
        n_unk += sum(1 for t in q_ids + d_ids if t == UNK_ID)
        logits = forward(params, config, q_ids, d_ids, train_mode=False)
        s, e = extract_span(logits, limit)
        pred = " ".join(ex.document_tokens[s:e + 1])
        em = exact_match(pred, ex.answer_text)
        f1 = f1_score(pred, ex.answer_text)
        em_total += em
        f1_total += f1
        per_example.append({
            "id": ex.id,
            "predicted_text": pred,
            "gold_text": ex.answer_text,
            "em": em,
            "f1": f1,
        })

    warnings = []
    if n_tokens and n_unk / n_tokens > 0.99:
        warnings.append(
            f"vocabulary mismatch: {n_unk}/{n_tokens} tokens are unknown")

    fingerprint = hashlib.sha256(json.dumps({
        "config": asdict(config),
        "params": params_checksum(params),
        "max_answer_len": limit,
        "vocab_size": len(vocab),
    }, sort_keys=True).encode()).hexdigest()

    return EvalReport(
        em=em_total / len(examples),
        f1=f1_total / len(examples),
        n_examples=len(examples),
        per_example=per_example,
        config_fingerprint=fingerprint,
        warnings=warnings,
    )
