"""Trainable text encoder and its frozen scoring twin.

A small transformer stands in for the usual pretrained encoder: token +
position embeddings, a couple of masked self-attention layers, and a sigmoid
prediction head over the first (CLS) hidden state. ``ScorerSnapshot`` deep-
copies the parameters before any fine-tuning and never updates, so concept
embeddings and relevance scores stay constant for the whole training run.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tt
from .tensor import Tensor

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")

PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
_RESERVED = ["[pad]", "[unk]", "[cls]", "[sep]"]


def split_text(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation, keeping punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token string <-> id table with reserved PAD/UNK/CLS/SEP slots."""

    def __init__(self, tokens=()):
        self._ids = {t: i for i, t in enumerate(_RESERVED)}
        for t in sorted(set(tokens) - set(_RESERVED)):
            self._ids[t] = len(self._ids)
        self._tokens = [None] * len(self._ids)
        for t, i in self._ids.items():
            self._tokens[i] = t

    @classmethod
    def from_texts(cls, texts):
        toks = set()
        for text in texts:
            toks.update(split_text(text))
        return cls(toks)

    def __len__(self):
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def encode(self, tokens) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def to_jsonable(self):
        return self._tokens[len(_RESERVED):]

    @classmethod
    def from_jsonable(cls, tokens):
        vocab = cls()
        for t in tokens:
            vocab._ids[t] = len(vocab._ids)
            vocab._tokens.append(t)
        return vocab


@dataclass
class TokenSequence:
    """Token ids plus an attention mask (1 on real tokens, 0 on PAD)."""

    ids: list[int]
    mask: list[int]

    def __post_init__(self):
        if len(self.ids) != len(self.mask):
            raise ValueError("ids and mask must have equal length")

    def __len__(self):
        return len(self.ids)

    def padded(self, length: int) -> "TokenSequence":
        extra = length - len(self.ids)
        if extra < 0:
            raise ValueError("cannot pad to a shorter length")
        return TokenSequence(self.ids + [PAD_ID] * extra, self.mask + [0] * extra)


def tokenize(vocab: Vocabulary, text: str) -> TokenSequence:
    ids = vocab.encode(split_text(text))
    return TokenSequence(ids, [1] * len(ids))


def trans_a(vocab: Vocabulary, sample, candidate_index: int, max_seq_len: int,
            extra_segments=()) -> TokenSequence:
    """Concatenate persona, context, and one candidate into a single sequence.

    Layout: [CLS] p1 [SEP] ... [SEP] u1 [SEP] ... [SEP] r [SEP], with any
    `extra_segments` appended after the candidate as further [SEP] segments.
    Overflow drops context tokens from the front (oldest first), then persona
    tokens; the CLS token and the candidate segment are never truncated.
    """
    if not 0 <= candidate_index < len(sample.candidates):
        raise IndexError(f"candidate index {candidate_index} out of range")
    persona_block: list[int] = []
    for p in sample.persona:
        persona_block.extend(vocab.encode(split_text(p)) + [SEP_ID])
    context_block: list[int] = []
    for u in sample.context:
        context_block.extend(vocab.encode(split_text(u)) + [SEP_ID])
    tail_block = vocab.encode(split_text(sample.candidates[candidate_index])) + [SEP_ID]
    for seg in extra_segments:
        tail_block.extend(vocab.encode(split_text(seg)) + [SEP_ID])

    overflow = 1 + len(persona_block) + len(context_block) + len(tail_block) - max_seq_len
    if overflow > 0:
        drop_ctx = min(overflow, len(context_block))
        context_block = context_block[drop_ctx:]
        overflow -= drop_ctx
        if overflow > 0:
            if overflow > len(persona_block):
                raise ValueError("candidate segment alone exceeds max_seq_len")
            persona_block = persona_block[overflow:]
        logger.debug("trans_a truncated %d tokens for candidate %d",
                     drop_ctx + max(overflow, 0), candidate_index)

    ids = [CLS_ID] + persona_block + context_block + tail_block
    return TokenSequence(ids, [1] * len(ids))


@dataclass
class EncoderConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 2
    max_seq_len: int = 512
    ff_mult: int = 4

    def __post_init__(self):
        if self.dim <= 0 or self.layers < 0 or self.heads <= 0 or self.max_seq_len <= 0:
            raise ValueError("encoder config values must be positive")
        if self.dim % self.heads:
            raise ValueError("head count must divide the model dimension")


def _init_params(config: EncoderConfig, vocab_size: int, rng) -> dict[str, np.ndarray]:
    d, ff = config.dim, config.dim * config.ff_mult
    params = {
        "tok_emb": rng.normal(0.0, 0.02, (vocab_size, d)),
        "pos_emb": rng.normal(0.0, 0.02, (config.max_seq_len, d)),
        "head_w": rng.normal(0.0, 0.02, d),
        "head_b": np.zeros(()),
    }
    for i in range(config.layers):
        params.update({
            f"l{i}.wq": rng.normal(0.0, 0.02, (d, d)),
            f"l{i}.wk": rng.normal(0.0, 0.02, (d, d)),
            f"l{i}.wv": rng.normal(0.0, 0.02, (d, d)),
            f"l{i}.bq": np.zeros(d),
            f"l{i}.bk": np.zeros(d),
            f"l{i}.bv": np.zeros(d),
            f"l{i}.wo": rng.normal(0.0, 0.02, (d, d)),
            f"l{i}.bo": np.zeros(d),
            f"l{i}.ln1_g": np.ones(d),
            f"l{i}.ln1_b": np.zeros(d),
            f"l{i}.w1": rng.normal(0.0, 0.02, (d, ff)),
            f"l{i}.b1": np.zeros(ff),
            f"l{i}.w2": rng.normal(0.0, 0.02, (ff, d)),
            f"l{i}.b2": np.zeros(d),
            f"l{i}.ln2_g": np.ones(d),
            f"l{i}.ln2_b": np.zeros(d),
        })
    return params


def _run_encoder(params, config: EncoderConfig, seq: TokenSequence) -> Tensor:
    n = len(seq)
    if n == 0:
        raise ValueError("cannot encode an empty sequence")
    if n > config.max_seq_len:
        raise ValueError(f"sequence length {n} exceeds max_seq_len {config.max_seq_len}")
    ids = np.asarray(seq.ids, dtype=np.int64)
    mask = np.asarray(seq.mask, dtype=np.float64)

    x = tt.add(tt.take_rows(params["tok_emb"], ids),
               tt.take_rows(params["pos_emb"], np.arange(n)))
    # additive attention bias: masked key columns get a large negative offset
    bias = Tensor(np.broadcast_to(np.where(mask > 0, 0.0, -1e9), (n, n)).copy())
    dh = config.dim // config.heads
    scale = 1.0 / math.sqrt(dh)
    for i in range(config.layers):
        p = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith(f"l{i}.")}
        q = tt.add(tt.matmul(x, p["wq"]), p["bq"])
        k = tt.add(tt.matmul(x, p["wk"]), p["bk"])
        v = tt.add(tt.matmul(x, p["wv"]), p["bv"])
        heads = []
        for h in range(config.heads):
            lo, hi = h * dh, (h + 1) * dh
            scores = tt.add(tt.mul(tt.matmul(tt.cols(q, lo, hi),
                                             tt.transpose(tt.cols(k, lo, hi))), scale), bias)
            heads.append(tt.matmul(tt.softmax_rows(scores), tt.cols(v, lo, hi)))
        att = heads[0] if len(heads) == 1 else tt.concat_cols(heads)
        o = tt.add(tt.matmul(att, p["wo"]), p["bo"])
        x = tt.add(tt.mul(tt.layernorm_rows(tt.add(x, o)), p["ln1_g"]), p["ln1_b"])
        f = tt.add(tt.matmul(tt.relu(tt.add(tt.matmul(x, p["w1"]), p["b1"])), p["w2"]), p["b2"])
        x = tt.add(tt.mul(tt.layernorm_rows(tt.add(x, f)), p["ln2_g"]), p["ln2_b"])
    return tt.row(x, 0)  # first hidden state (CLS position)


def _run_predict(params, config: EncoderConfig, h: Tensor) -> Tensor:
    if h.shape != (config.dim,):
        raise tt.ShapeError(f"hidden state must have length {config.dim}, got {h.shape}")
    return tt.sigmoid(tt.add(tt.dot(h, params["head_w"]), params["head_b"]))


class EncoderModel:
    """Trainable encoder: embeddings, attention stack, and prediction head."""

    def __init__(self, config: EncoderConfig, vocab: Vocabulary, rng=None, params=None):
        self.config = config
        self.vocab = vocab
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = _init_params(config, len(vocab), rng)
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def encode(self, seq: TokenSequence) -> Tensor:
        return _run_encoder(self.params, self.config, seq)

    def predict(self, h: Tensor) -> Tensor:
        return _run_predict(self.params, self.config, h)

    def snapshot(self) -> "ScorerSnapshot":
        return ScorerSnapshot(self.config, self.vocab,
                              {k: v.data.copy() for k, v in self.params.items()})

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    # -- checkpoint I/O ------------------------------------------------------

    def to_jsonable(self) -> dict:
        return {
            "format_version": 1,
            "config": asdict(self.config),
            "vocab": self.vocab.to_jsonable(),
            "params": {k: v.data.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_jsonable(cls, obj) -> "EncoderModel":
        if obj.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {obj.get('format_version')}")
        config = EncoderConfig(**obj["config"])
        vocab = Vocabulary.from_jsonable(obj["vocab"])
        params = {k: np.asarray(v, dtype=np.float64) for k, v in obj["params"].items()}
        return cls(config, vocab, params=params)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_jsonable(), fh)

    @classmethod
    def load(cls, path) -> "EncoderModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_jsonable(json.load(fh))


class ScorerSnapshot:
    """Frozen copy of encoder parameters for zero-shot relevance scoring.

    Concept embeddings are CLS-pooled and cached, so repeated scoring reads a
    precomputed table instead of re-running the encoder.
    """

    def __init__(self, config: EncoderConfig, vocab: Vocabulary, arrays: dict[str, np.ndarray]):
        self.config = config
        self.vocab = vocab
        self._params = {k: Tensor(v.copy()) for k, v in arrays.items()}  # requires_grad=False
        self._concept_cache: dict[str, np.ndarray] = {}

    def encode_sequence(self, seq: TokenSequence) -> np.ndarray:
        return _run_encoder(self._params, self.config, seq).data

    def encode_concept(self, phrase: str) -> np.ndarray:
        cached = self._concept_cache.get(phrase)
        if cached is None:
            ids = [CLS_ID] + self.vocab.encode(split_text(phrase)) + [SEP_ID]
            cached = self.encode_sequence(TokenSequence(ids, [1] * len(ids)))
            self._concept_cache[phrase] = cached
        return cached

    def concept_table(self, graph) -> dict[int, np.ndarray]:
        """Precompute embeddings for every concept in the graph."""
        return {i: self.encode_concept(graph.concepts.name_of(i))
                for i in range(graph.n_concepts)}
