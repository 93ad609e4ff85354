"""Parametric word-level corruption channel with WER calibration.

Simulates recognition errors on document tokens: per-token substitution or
deletion events plus post-token insertions, with substitutions drawn from
character-edit-distance confusion sets.  A bisection loop tunes the rates so
the measured corpus word error rate hits a requested target.  Answer spans
are tracked through the corruption (exact / relocated / lost).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, QaExample, Vocabulary

MODE_FULL = "full"
MODE_SUB_ONLY = "substitution_only"

SPAN_EXACT = "exact"
SPAN_RELOCATED = "relocated"
SPAN_LOST = "lost"

INSERTION_MARK = -1


@dataclass(frozen=True)
class NoiseChannelConfig:
    p_sub: float = 0.0
    p_del: float = 0.0
    p_ins: float = 0.0
    mode: str = MODE_FULL
    confusion_pool_size: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("p_sub", "p_del", "p_ins"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.p_sub + self.p_del + self.p_ins > 1.0 + 1e-12:
            raise ValueError("p_sub + p_del + p_ins must not exceed 1")
        if self.mode not in (MODE_FULL, MODE_SUB_ONLY):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_SUB_ONLY and (self.p_del or self.p_ins):
            raise ValueError("substitution_only mode requires p_del = p_ins = 0")
        if self.confusion_pool_size < 1:
            raise ValueError("confusion_pool_size must be >= 1")


@dataclass
class NoisedExample:
    """A corrupted example plus its alignment back to the source document.

    provenance[i] is the source token index that produced output token i, or
    INSERTION_MARK for inserted tokens.  source_document keeps the clean
    token sequence so paired-input training can recover it.
    """

    example: QaExample
    provenance: list[int]
    span_status: str
    source_document: list[str]

    def __post_init__(self):
        if len(self.provenance) != len(self.example.document_tokens):
            raise ValueError(
                f"example {self.example.id}: provenance length "
                f"{len(self.provenance)} != document length "
                f"{len(self.example.document_tokens)}")
        if self.span_status not in (SPAN_EXACT, SPAN_RELOCATED, SPAN_LOST):
            raise ValueError(f"unknown span_status {self.span_status!r}")


def levenshtein(a: str, b: str) -> int:
    """Character-level edit distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def build_confusion_sets(vocab: Vocabulary, pool_size: int,
                         seed: int = 0) -> dict[str, list[str]]:
    """For every real (non-reserved) token, its pool_size nearest other
    tokens by character edit distance, ties broken alphabetically.

    Deterministic; the seed parameter is accepted for interface symmetry
    with the rest of the channel but never consulted.
    """
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    words = vocab.id_to_token[2:]  # skip PAD, UNK
    confusion: dict[str, list[str]] = {}
    for w in words:
        ranked = sorted(((levenshtein(w, other), other)
                         for other in words if other != w))
        confusion[w] = [tok for _, tok in ranked[:pool_size]]
    return confusion


def _example_rng(seed: int, example_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}\x00{example_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def corrupt(example: QaExample, cfg: NoiseChannelConfig,
            confusion: dict[str, list[str]]) -> NoisedExample:
    """Apply the channel to one example's document; questions pass through.

    Per source token one event is drawn (substitute / delete / keep); after
    every emitted token an insertion fires with probability p_ins.  The
    random stream depends only on (cfg.seed, example.id), and a fixed four
    draws are consumed per source token so raising a rate never reshuffles
    the outcomes of unrelated tokens.
    """
    doc = example.document_tokens
    n = len(doc)
    rng = _example_rng(cfg.seed, example.id)
    u = rng.random((4, n))  # event, sub choice, insert?, insert choice
    insert_pool = sorted(confusion.keys())

    out: list[str] = []
    prov: list[int] = []
    for i, tok in enumerate(doc):
        if u[0, i] < cfg.p_sub:
            pool = confusion.get(tok, [])
            out.append(pool[int(u[1, i] * len(pool))] if pool else tok)
            prov.append(i)
        elif u[0, i] < cfg.p_sub + cfg.p_del:
            continue  # deleted: nothing emitted, no insertion slot
        else:
            out.append(tok)
            prov.append(i)
        if insert_pool and u[2, i] < cfg.p_ins:
            out.append(insert_pool[int(u[3, i] * len(insert_pool))])
            prov.append(INSERTION_MARK)

    if not out:
        # The channel never empties a document: resurrect the last token so
        # the corrupted example stays well-formed.
        out.append(doc[-1])
        prov.append(n - 1)

    # Where did each surviving source token land, unchanged?
    landing = {src: pos for pos, src in enumerate(prov)
               if src != INSERTION_MARK and out[pos] == doc[src]}
    s, e = example.answer_start, example.answer_end
    span_positions = [landing.get(j) for j in range(s, e + 1)]
    if (None not in span_positions
            and span_positions == list(range(span_positions[0],
                                             span_positions[0]
                                             + len(span_positions)))):
        status = SPAN_EXACT
        new_s, new_e = span_positions[0], span_positions[-1]
    else:
        answer_tokens = example.answer_text.split()
        hit = _find_subsequence(out, answer_tokens)
        if hit is not None:
            status = SPAN_RELOCATED
            new_s, new_e = hit, hit + len(answer_tokens) - 1
        else:
            status = SPAN_LOST
            new_s, new_e = 0, 0

    corrupted = QaExample(
        id=example.id,
        question_tokens=list(example.question_tokens),
        document_tokens=out,
        answer_start=new_s,
        answer_end=new_e,
        answer_text=example.answer_text,
    )
    return NoisedExample(example=corrupted, provenance=prov,
                         span_status=status, source_document=list(doc))


def _find_subsequence(haystack: list[str], needle: list[str]) -> int | None:
    if not needle or len(needle) > len(haystack):
        return None
    first = needle[0]
    for i in range(len(haystack) - len(needle) + 1):
        if haystack[i] == first and haystack[i:i + len(needle)] == needle:
            return i
    return None


# ---------------------------------------------------------------------------
# word error rate


def _edit_distance(ref: list[str], hyp: list[str]) -> int:
    """Word-level Levenshtein distance (S + D + I at unit cost)."""
    if len(ref) < len(hyp):
        short, long_ = ref, hyp
    else:
        short, long_ = hyp, ref
    prev = list(range(len(short) + 1))
    for i, a in enumerate(long_, start=1):
        cur = [i]
        for j, b in enumerate(short, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (a != b)))
        prev = cur
    return prev[-1]


def word_error_rate(ref: list[str], hyp: list[str]) -> float:
    """(substitutions + deletions + insertions) / len(ref); can exceed 1."""
    if not ref:
        raise ValueError("word_error_rate needs a non-empty reference")
    return _edit_distance(ref, hyp) / len(ref)


def corpus_wer(noised: list[NoisedExample]) -> float:
    """Aggregate WER: total edit operations over total reference words."""
    total_ops = 0
    total_ref = 0
    for nx in noised:
        total_ops += _edit_distance(nx.source_document,
                                    nx.example.document_tokens)
        total_ref += len(nx.source_document)
    if total_ref == 0:
        raise ValueError("corpus_wer needs at least one reference word")
    return total_ops / total_ref


# ---------------------------------------------------------------------------
# calibration


class CalibrationError(RuntimeError):
    """Bisection failed to land inside the tolerance band."""

    def __init__(self, target: float, best_wer: float, rounds: int):
        super().__init__(
            f"calibration missed target {target:.4f}: best achieved WER "
            f"{best_wer:.4f} after {rounds} rounds")
        self.target = target
        self.best_wer = best_wer


def _measure(sample: list[QaExample], cfg: NoiseChannelConfig,
             confusion: dict[str, list[str]]) -> float:
    return corpus_wer([corrupt(ex, cfg, confusion) for ex in sample])


def calibrate_channel(target_wer: float, mode: str, sample: Dataset | list,
                      seed: int, confusion: dict[str, list[str]] | None = None,
                      pool_size: int = 8, tolerance: float = 0.01,
                      max_rounds: int = 50) -> NoiseChannelConfig:
    """Find channel rates whose measured WER on `sample` is within
    `tolerance` of target_wer.

    substitution_only scales a single p_sub, seeded at target divided by the
    substitutable-token fraction; full mode scales a 70/15/15
    substitution/deletion/insertion split of the target.  Both then bisect
    on the scale factor, reusing the same per-example random draws so the
    measured WER responds monotonically.
    """
    examples = list(sample)
    if not examples:
        raise ValueError("calibration needs a non-empty sample")
    if not 0.0 <= target_wer < 1.0:
        raise ValueError(f"target WER must be in [0, 1), got {target_wer}")

    if confusion is None:
        from .corpus import build_vocab
        confusion = build_confusion_sets(
            build_vocab([Dataset(examples, split_name="calibration")]),
            pool_size)

    if mode == MODE_SUB_ONLY:
        def cfg_at(scale: float) -> NoiseChannelConfig:
            return NoiseChannelConfig(p_sub=min(scale, 1.0), mode=mode,
                                      confusion_pool_size=pool_size, seed=seed)
        n_tokens = sum(len(ex.document_tokens) for ex in examples)
        n_sub = sum(1 for ex in examples for t in ex.document_tokens
                    if confusion.get(t))
        frac = n_sub / n_tokens if n_tokens else 0.0
        start = target_wer / frac if frac > 0 else target_wer
    elif mode == MODE_FULL:
        def cfg_at(scale: float) -> NoiseChannelConfig:
            s = min(scale, 1.0)
            return NoiseChannelConfig(p_sub=0.70 * s, p_del=0.15 * s,
                                      p_ins=0.15 * s, mode=mode,
                                      confusion_pool_size=pool_size, seed=seed)
        start = target_wer
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if target_wer == 0.0:
        return cfg_at(0.0)

    lo, hi = 0.0, 1.0
    best_cfg = cfg_at(min(max(start, 0.0), 1.0))
    best_wer = _measure(examples, best_cfg, confusion)
    if abs(best_wer - target_wer) <= tolerance:
        return best_cfg
    # Establish the bracket around the seed guess, then bisect.
    if best_wer < target_wer:
        lo = min(max(start, 0.0), 1.0)
    else:
        hi = min(max(start, 0.0), 1.0)
    for round_no in range(max_rounds):
        mid = 0.5 * (lo + hi)
        cfg = cfg_at(mid)
        wer = _measure(examples, cfg, confusion)
        if abs(wer - target_wer) < abs(best_wer - target_wer):
            best_cfg, best_wer = cfg, wer
        if abs(wer - target_wer) <= tolerance:
            return cfg
        if wer < target_wer:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(target_wer, best_wer, max_rounds)


# ---------------------------------------------------------------------------
# persistence (noisy corpus + provenance sidecar)


def save_noised(noised: list[NoisedExample], corpus_path: str,
                sidecar_path: str) -> None:
    from .corpus import save_jsonl
    save_jsonl(corpus_path,
               Dataset([nx.example for nx in noised], split_name="noised"))
    with open(sidecar_path, "w", encoding="utf-8", newline="\n") as fh:
        for nx in noised:
            fh.write(json.dumps({
                "id": nx.example.id,
                "span_status": nx.span_status,
                "provenance": nx.provenance,
                "source_document": nx.source_document,
            }, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_noised(corpus_path: str, sidecar_path: str) -> list[NoisedExample]:
    from .corpus import load_jsonl
    dataset = load_jsonl(corpus_path)
    meta: dict[str, dict] = {}
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(
                    f"{sidecar_path}: malformed JSON on line {lineno}: "
                    f"{exc.msg}") from exc
            meta[rec["id"]] = rec
    noised = []
    for ex in dataset:
        if ex.id not in meta:
            raise ValueError(f"sidecar {sidecar_path} missing example {ex.id!r}")
        rec = meta[ex.id]
        noised.append(NoisedExample(
            example=ex,
            provenance=[int(p) for p in rec["provenance"]],
            span_status=rec["span_status"],
            source_document=list(rec["source_document"]),
        ))
    return noised
