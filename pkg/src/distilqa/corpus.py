"""Question-answering examples, tokenization, vocabulary, and corpus I/O.

An example stores the question and document as token lists plus an inclusive
answer span over the document.  Corpora live on disk as JSONL (one object
per line, UTF-8, LF) with fields id, question, document, answer_start,
answer_end, answer_text.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, strip flanking ASCII
    punctuation (interior punctuation survives), drop empties."""
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and raw[start] in _PUNCT:
            start += 1
        while end > start and raw[end - 1] in _PUNCT:
            end -= 1
        if start < end:
            tokens.append(raw[start:end])
    return tokens


@dataclass
class QaExample:
    """One QA pair; answer_start/answer_end index document inclusively.

    answer_text is fixed at creation from the document tokens.  Corruption
    may later rewrite the document, so the two can legitimately diverge.
    """

    id: str
    question_tokens: list[str]
    document_tokens: list[str]
    answer_start: int
    answer_end: int
    answer_text: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("example id must be non-empty")
        if not self.document_tokens:
            raise ValueError(f"example {self.id}: document must be non-empty")
        if not (0 <= self.answer_start <= self.answer_end
                < len(self.document_tokens)):
            raise ValueError(
                f"example {self.id}: span ({self.answer_start}, "
                f"{self.answer_end}) out of range for document of length "
                f"{len(self.document_tokens)}")
        if not self.answer_text:
            self.answer_text = self.span_text()

    def span_text(self) -> str:
        return " ".join(
            self.document_tokens[self.answer_start:self.answer_end + 1])


@dataclass
class Dataset:
    examples: list[QaExample]
    split_name: str = ""

    def __post_init__(self):
        seen: set[str] = set()
        for ex in self.examples:
            if ex.id in seen:
                raise ValueError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


class Vocabulary:
    """Token <-> id map with fixed PAD=0 and UNK=1 entries."""

    def __init__(self, tokens: list[str] | None = None):
        self.id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens or []:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = len(self.id_to_token)
        self.id_to_token.append(token)
        self.token_to_id[token] = idx
        return idx

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({"tokens": self.id_to_token}, fh, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        tokens = payload["tokens"]
        if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary file must start with PAD and UNK")
        vocab = cls()
        for tok in tokens[2:]:
            vocab.add(tok)
        if len(vocab) != len(tokens):
            raise ValueError("vocabulary file contains duplicate tokens")
        return vocab


def build_vocab(datasets: list[Dataset], min_count: int = 1) -> Vocabulary:
    """Count tokens over questions and documents; keep those with frequency
    >= min_count, ordered most-frequent first, ties alphabetical."""
    counts: dict[str, int] = {}
    for ds in datasets:
        for ex in ds:
            for tok in ex.question_tokens:
                counts[tok] = counts.get(tok, 0) + 1
            for tok in ex.document_tokens:
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# synthetic corpus

_ATTRIBUTES = ["color", "size", "shape", "weight", "sound",
               "taste", "speed", "smell"]

_VALUES = {
    "color": ["crimson", "amber", "teal", "ivory", "violet", "maroon",
              "indigo", "olive", "coral", "slate", "bronze", "pearl"],
    "size": ["tiny", "small", "narrow", "broad", "large", "huge",
             "giant", "compact", "slim", "bulky", "petite", "vast"],
    "shape": ["round", "square", "oval", "flat", "curved", "jagged",
              "spiral", "hollow", "pointed", "twisted", "ridged", "smooth"],
    "weight": ["light", "heavy", "feathery", "dense", "hefty", "airy",
               "solid", "massive", "slight", "weighty", "buoyant", "leaden"],
    "sound": ["quiet", "loud", "shrill", "deep", "humming", "rasping",
              "melodic", "droning", "crackling", "booming", "whistling",
              "muffled"],
    "taste": ["sweet", "bitter", "salty", "sour", "tangy", "mild",
              "spicy", "smoky", "savory", "bland", "zesty", "sharp"],
    "speed": ["slow", "swift", "rapid", "sluggish", "brisk", "hasty",
              "gradual", "quick", "darting", "crawling", "fleet", "steady"],
    "smell": ["musty", "fresh", "pungent", "faint", "earthy", "floral",
              "acrid", "minty", "smokey", "woody", "sooty", "crisp"],
}

_MODIFIERS = ["quite", "rather", "notably", "fairly", "truly",
              "somewhat", "very", "distinctly", "plainly", "oddly"]

_ENTITY_STEMS = ["bram", "clov", "dorn", "fenn", "gryl", "harp", "jasp",
                 "kelt", "lorn", "mave", "nork", "ospr", "pryl", "quin",
                 "rask", "sorn", "tarn", "umbr", "vask", "wrel", "yarrow",
                 "zelk", "ambrel", "borin"]
_ENTITY_SUFFIXES = ["et", "ock"]

ENTITY_POOL = [stem + suf for stem in _ENTITY_STEMS for suf in _ENTITY_SUFFIXES]


def _make_example(rng: np.random.Generator, ex_id: str,
                  entities: list[str]) -> QaExample:
    """One multi-sentence document plus a question about one of its facts.

    Each sentence states a distinct (entity, attribute) fact.  The asked-for
    value appears exactly once in the document: value words are drawn without
    replacement across the whole document, and a one-word answer avoids
    colliding with any modifier.
    """
    n_sent = int(rng.integers(3, 6))
    choices = [(e, a) for e in entities for a in _ATTRIBUTES]
    picks = rng.choice(len(choices), size=n_sent, replace=False)
    facts = [choices[int(i)] for i in picks]

    available = {attr: list(vals) for attr, vals in _VALUES.items()}
    target = int(rng.integers(n_sent))
    doc: list[str] = []
    spans: list[tuple[int, int]] = []
    for ent, attr in facts:
        pool = available[attr]
        value = pool.pop(int(rng.integers(len(pool))))
        with_modifier = bool(rng.integers(2))
        answer_tokens = ([_MODIFIERS[int(rng.integers(len(_MODIFIERS)))], value]
                         if with_modifier else [value])
        sent = ["the", ent, attr, "is"] + answer_tokens
        spans.append((len(doc) + 4, len(doc) + 3 + len(answer_tokens)))
        doc.extend(sent)

    ent, attr = facts[target]
    start, end = spans[target]
    question = ["what", "is", "the", attr, "of", "the", ent]
    return QaExample(id=ex_id, question_tokens=question, document_tokens=doc,
                     answer_start=start, answer_end=end)


def generate_toy_corpus(n_train: int, n_dev: int,
                        seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic entity-attribute-value corpora.

    Train and dev share entity pools but never repeat a
    (question, document) pair across the union of both splits.
    """
    if n_train < 1 or n_dev < 1:
        raise ValueError("split sizes must be >= 1")
    rng = np.random.default_rng(seed)
    seen_pairs: set[str] = set()

    def make_split(name: str, count: int) -> Dataset:
        examples = []
        for i in range(count):
            ex_id = f"{name}-{i + 1:06d}"
            for _ in range(1000):
                ex = _make_example(rng, ex_id, ENTITY_POOL)
                sig = hashlib.sha256(
                    (" ".join(ex.question_tokens) + "\x00"
                     + " ".join(ex.document_tokens)).encode()).hexdigest()
                if sig not in seen_pairs:
                    seen_pairs.add(sig)
                    examples.append(ex)
                    break
            else:
                raise RuntimeError(
                    "could not generate a fresh (question, document) pair")
        return Dataset(examples, split_name=name)

    return make_split("train", n_train), make_split("dev", n_dev)


# ---------------------------------------------------------------------------
# JSONL persistence

_FIELDS = ("id", "question", "document", "answer_start", "answer_end",
           "answer_text")


def save_jsonl(path: str, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset:
            fh.write(json.dumps({
                "id": ex.id,
                "question": ex.question_tokens,
                "document": ex.document_tokens,
                "answer_start": ex.answer_start,
                "answer_end": ex.answer_end,
                "answer_text": ex.answer_text,
            }, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_jsonl(path: str, split_name: str = "") -> Dataset:
    """Parse a JSONL corpus; errors carry the 1-based line number, and
    invariant violations carry the offending example id."""
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(
                    f"{path}: malformed JSON on line {lineno}: {exc.msg}"
                ) from exc
            missing = [k for k in _FIELDS if k not in obj]
            if missing:
                raise ValueError(
                    f"{path}: line {lineno} missing field {missing[0]!r}")
            try:
                examples.append(QaExample(
                    id=obj["id"],
                    question_tokens=list(obj["question"]),
                    document_tokens=list(obj["document"]),
                    answer_start=int(obj["answer_start"]),
                    answer_end=int(obj["answer_end"]),
                    answer_text=obj["answer_text"],
                ))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
    return Dataset(examples, split_name=split_name)


# ---------------------------------------------------------------------------
# SQuAD v1.1 import


def _char_to_token_spans(context: str) -> list[tuple[int, int, str]]:
    """(char_start, char_end_exclusive, token) for each token of context,
    mirroring what tokenize() produces for the same text."""
    spans = []
    pos = 0
    for raw in context.split():
        start = context.index(raw, pos)
        pos = start + len(raw)
        lowered = raw.lower()
        s, e = 0, len(lowered)
        while s < e and lowered[s] in _PUNCT:
            s += 1
        while e > s and lowered[e - 1] in _PUNCT:
            e -= 1
        if s < e:
            spans.append((start + s, start + e, lowered[s:e]))
    return spans


def import_squad(path: str, split_name: str = "") -> tuple[Dataset, int]:
    """Convert SQuAD v1.1 JSON into token-span examples.

    Character offsets become token spans; questions whose first answer does
    not align onto token boundaries are dropped and tallied.  Returns
    (dataset, skipped_count).
    """
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    examples = []
    skipped = 0
    for article in payload["data"]:
        for para in article["paragraphs"]:
            context = para["context"]
            spans = _char_to_token_spans(context)
            doc_tokens = [t for _, _, t in spans]
            if not doc_tokens:
                skipped += len(para["qas"])
                continue
            for qa in para["qas"]:
                answer = qa["answers"][0]
                a_start = answer["answer_start"]
                a_end = a_start + len(answer["text"])
                covered = [i for i, (cs, ce, _) in enumerate(spans)
                           if cs < a_end and ce > a_start]
                if not covered:
                    skipped += 1
                    continue
                tok_s, tok_e = covered[0], covered[-1]
                joined = " ".join(doc_tokens[tok_s:tok_e + 1])
                expected = " ".join(tokenize(answer["text"]))
                if not expected or joined != expected:
                    skipped += 1
                    continue
                examples.append(QaExample(
                    id=qa["id"],
                    question_tokens=tokenize(qa["question"]),
                    document_tokens=list(doc_tokens),
                    answer_start=tok_s,
                    answer_end=tok_e,
                ))
    return Dataset(examples, split_name=split_name), skipped
