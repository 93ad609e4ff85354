"""Span-prediction reader: embeddings, a small self-attention encoder over
the document, question mean-pooling, question-to-document bilinear attention,
and two scoring heads that produce per-token start and end logits.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, asdict
from typing import NamedTuple

import numpy as np

from .numerics import (
    Tensor,
    add,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    mul,
    softmax_temp,
    transpose,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    hidden_dim: int = 64
    attention_heads: int = 2
    encoder_layers: int = 1
    max_answer_len: int = 8
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must cover at least PAD and UNK")
        for name in ("embed_dim", "hidden_dim", "attention_heads",
                     "encoder_layers", "max_answer_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_dim % self.attention_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by "
                f"attention_heads {self.attention_heads}")
        if self.hidden_dim % self.attention_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"attention_heads {self.attention_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


class SpanLogits(NamedTuple):
    """Per-document-token scores; both vectors have length len(document)."""
    start: Tensor
    end: Tensor


ModelParams = dict[str, Tensor]


def _uniform(rng: np.random.Generator, shape: tuple[int, ...],
             fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig) -> ModelParams:
    """Fresh trainable parameters, deterministic in config.seed.

    Weights are uniform in +-1/sqrt(fan_in); biases and the PAD embedding
    row start at zero; layer-norm gains start at one.
    """
    rng = np.random.default_rng(config.seed)
    E, H = config.embed_dim, config.hidden_dim
    dh = H // config.attention_heads

    params: ModelParams = {}

    def w(name: str, shape: tuple[int, ...], fan_in: int) -> None:
        params[name] = Tensor(_uniform(rng, shape, fan_in), requires_grad=True)

    def zeros(name: str, shape: tuple[int, ...]) -> None:
        params[name] = Tensor(np.zeros(shape), requires_grad=True)

    def ones(name: str, shape: tuple[int, ...]) -> None:
        params[name] = Tensor(np.ones(shape), requires_grad=True)

    w("embed", (config.vocab_size, E), E)
    params["embed"].data[0, :] = 0.0  # PAD row

    w("q_proj", (E, H), E)
    w("d_proj", (E, H), E)

    for layer in range(config.encoder_layers):
        prefix = f"enc{layer}."
        for head in range(config.attention_heads):
            hp = f"{prefix}h{head}."
            w(hp + "wq", (H, dh), H)
            w(hp + "wk", (H, dh), H)
            w(hp + "wv", (H, dh), H)
            w(hp + "wo", (dh, H), dh)
        ones(prefix + "ln1.gain", (H,))
        zeros(prefix + "ln1.bias", (H,))
        w(prefix + "ffn.w1", (H, 2 * H), H)
        zeros(prefix + "ffn.b1", (2 * H,))
        w(prefix + "ffn.w2", (2 * H, H), 2 * H)
        zeros(prefix + "ffn.b2", (H,))
        ones(prefix + "ln2.gain", (H,))
        zeros(prefix + "ln2.bias", (H,))

    w("att_bilinear", (H, H), H)
    w("fuse.doc", (H, H), H)
    w("fuse.q", (H, H), H)
    w("fuse.inter", (H, H), H)
    w("fuse.ctx", (H, H), H)
    zeros("fuse.bias", (H,))
    w("w_start", (H,), H)
    w("w_end", (H,), H)
    return params


def parameter_count(params: ModelParams) -> int:
    return sum(p.data.size for p in params.values())


def params_checksum(params: ModelParams) -> str:
    """SHA-256 over names, shapes and raw float64 bytes, in name order."""
    h = hashlib.sha256()
    for name in sorted(params):
        p = params[name]
        h.update(name.encode())
        h.update(str(p.data.shape).encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def _positional_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal position features, interleaved sin/cos pairs."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    half = np.arange(dim // 2, dtype=np.float64)
    freq = np.exp(-math.log(10000.0) * 2.0 * half / dim)
    angles = pos * freq
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim - dim // 2])
    return pe


def _encoder_block(x: Tensor, params: ModelParams, prefix: str,
                   heads: int, train_mode: bool, rate: float,
                   rng: np.random.Generator | None) -> Tensor:
    n, H = x.data.shape
    dh = H // heads
    scale = 1.0 / math.sqrt(dh)

    attn_out = None
    for head in range(heads):
        hp = f"{prefix}h{head}."
        q = matmul(x, params[hp + "wq"])
        k = matmul(x, params[hp + "wk"])
        v = matmul(x, params[hp + "wv"])
        scores = mul(matmul(q, transpose(k)), scale)
        weights = softmax_temp(scores, 1.0)
        mixed = matmul(weights, v)
        proj = matmul(mixed, params[hp + "wo"])
        attn_out = proj if attn_out is None else add(attn_out, proj)
    if train_mode and rate > 0:
        attn_out = dropout(attn_out, rate, rng)
    x = layer_norm(add(x, attn_out), params[prefix + "ln1.gain"],
                   params[prefix + "ln1.bias"])

    h = gelu(add(matmul(x, params[prefix + "ffn.w1"]), params[prefix + "ffn.b1"]))
    h = add(matmul(h, params[prefix + "ffn.w2"]), params[prefix + "ffn.b2"])
    if train_mode and rate > 0:
        h = dropout(h, rate, rng)
    return layer_norm(add(x, h), params[prefix + "ln2.gain"],
                      params[prefix + "ln2.bias"])


def forward(params: ModelParams, config: ModelConfig,
            question_ids: list[int], document_ids: list[int],
            train_mode: bool = False,
            rng: np.random.Generator | None = None) -> SpanLogits:
    """Score every document position as answer start and answer end.

    Dropout fires only when train_mode is true (an rng is then required if
    dropout_rate > 0); inference is deterministic.
    """
    if not document_ids:
        raise ValueError("document must contain at least one token")
    if not question_ids:
        raise ValueError("question must contain at least one token")
    for tok in question_ids + document_ids:
        if not 0 <= tok < config.vocab_size:
            raise ValueError(f"token id {tok} out of range [0, {config.vocab_size})")
    rate = config.dropout_rate
    if train_mode and rate > 0 and rng is None:
        raise ValueError("train_mode with dropout needs a random generator")

    # Embeddings are initialized at +-1/sqrt(E); scale lookups back up by
    # sqrt(E) so token content is not drowned out by the unit-amplitude
    # position features.
    emb_scale = math.sqrt(config.embed_dim)

    # Question: embed, project, mean-pool to a single vector.
    q_emb = mul(embedding(params["embed"], question_ids), emb_scale)
    q_hidden = matmul(q_emb, params["q_proj"])
    pool = np.full(len(question_ids), 1.0 / len(question_ids))
    q_vec = matmul(Tensor(pool), q_hidden)

    # Document: embed + positions, project, run the encoder stack.
    d_emb = mul(embedding(params["embed"], document_ids), emb_scale)
    pe = _positional_encoding(len(document_ids), config.embed_dim)
    x = matmul(add(d_emb, Tensor(pe)), params["d_proj"])
    if train_mode and rate > 0:
        x = dropout(x, rate, rng)
    for layer in range(config.encoder_layers):
        x = _encoder_block(x, params, f"enc{layer}.", config.attention_heads,
                           train_mode, rate, rng)

    # Bilinear question-to-document attention, then fuse per position.
    att_scores = matmul(x, matmul(params["att_bilinear"], q_vec))
    att = softmax_temp(att_scores, 1.0)
    ctx = matmul(att, x)  # (n,) @ (n, H) -> (H,) attended doc summary
    # Per-position doc-question product: without it the question only shifts
    # all positions uniformly and span scores cannot condition on it.
    inter = mul(x, matmul(q_vec, params["fuse.q"]))
    mixed = add(add(matmul(x, params["fuse.doc"]),
                    matmul(inter, params["fuse.inter"])),
                matmul(ctx, params["fuse.ctx"]))  # rows + broadcast vec
    fused = gelu(add(mixed, params["fuse.bias"]))
    return SpanLogits(start=matmul(fused, params["w_start"]),
                      end=matmul(fused, params["w_end"]))


def extract_span(logits: SpanLogits, max_answer_len: int) -> tuple[int, int]:
    """Best (start, end) with start <= end <= start + max_answer_len - 1.

    Maximizes start[s] + end[e]; ties break toward the smallest start, then
    the smallest end.
    """
    s_arr = np.asarray(logits.start.data, dtype=np.float64)
    e_arr = np.asarray(logits.end.data, dtype=np.float64)
    n = s_arr.shape[0]
    if n == 0 or e_arr.shape[0] != n:
        raise ValueError("start/end logits must be equal-length and non-empty")
    if max_answer_len < 1:
        raise ValueError("max_answer_len must be >= 1")
    best = (-math.inf, 0, 0)
    for s in range(n):
        hi = min(n, s + max_answer_len)
        for e in range(s, hi):
            score = s_arr[s] + e_arr[e]
            if score > best[0]:
                best = (score, s, e)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, params: ModelParams, config: ModelConfig) -> None:
    """Serialize config + parameters as JSON; floats round-trip exactly."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "params": {
            name: {"shape": list(p.data.shape),
                   "values": [float(v) for v in p.data.ravel()]}
            for name, p in sorted(params.items())
        },
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig]:
    """Inverse of save_checkpoint; rejects version or shape mismatches."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint version mismatch: file has {version!r}, "
            f"expected {CHECKPOINT_VERSION}")
    config = ModelConfig(**payload["config"])
    expected = {name: tuple(p.data.shape)
                for name, p in init_params(config).items()}
    params: ModelParams = {}
    stored = payload["params"]
    missing = sorted(set(expected) - set(stored))
    if missing:
        raise ValueError(f"checkpoint missing parameter {missing[0]!r}")
    surplus = sorted(set(stored) - set(expected))
    if surplus:
        raise ValueError(f"checkpoint has unknown parameter {surplus[0]!r}")
    for name, entry in stored.items():
        shape = tuple(entry["shape"])
        if shape != expected[name]:
            raise ValueError(
                f"shape mismatch for parameter {name!r}: "
                f"file has {shape}, config implies {expected[name]}")
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"value count mismatch for parameter {name!r}")
        params[name] = Tensor(values.reshape(shape), requires_grad=True)
    return params, config
