"""Utterance encoder: [CLS]-prefixed transformer, column max-pooling, projection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numeric as nm
from .dataset import split_tokens
from .numeric import Tensor

logger = logging.getLogger(__name__)

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
RESERVED = (PAD, UNK, CLS)


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.stoi[UNK])

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    @property
    def cls_id(self) -> int:
        return self.stoi[CLS]

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for text in texts:
            for tok in split_tokens(text):
                vocab.add(tok)
        return vocab

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary list must start with the reserved tokens")
        return cls(tokens[len(RESERVED):])


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Token ids for ``text``; empty text becomes a single [UNK]."""
    ids = [vocab.id(tok) for tok in split_tokens(text)]
    return ids or [vocab.unk_id]


@dataclass
class EncoderConfig:
    d_m: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    activation: str = "relu"

    def __post_init__(self):
        if self.d_m % self.n_heads:
            raise ValueError(f"encoder heads ({self.n_heads}) must divide d_m ({self.d_m})")


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = 1.0 / np.power(10000.0, (2 * (np.arange(dim) // 2)) / dim)
    angle = pos * rate[None, :]
    return np.where(np.arange(dim) % 2 == 0, np.sin(angle), np.cos(angle))


def init_encoder_params(cfg: EncoderConfig, vocab_size: int, rng: np.random.Generator,
                        scheme: str = "glorot") -> dict[str, Tensor]:
    d, f = cfg.d_m, cfg.d_ff
    p = {"enc.tok_emb": nm.init_embedding(rng, vocab_size, d, scheme=scheme)}
    for layer in range(cfg.n_layers):
        pre = f"enc.layer{layer}."
        p[pre + "ln1.g"] = nm.parameter(np.ones(d))
        p[pre + "ln1.b"] = nm.parameter(np.zeros(d))
        for name in ("Wq", "Wk", "Wv", "Wo"):
            p[pre + name] = nm.init_matrix(rng, d, d, scheme=scheme)
            p[pre + "b" + name[1:]] = nm.parameter(np.zeros(d))
        p[pre + "ln2.g"] = nm.parameter(np.ones(d))
        p[pre + "ln2.b"] = nm.parameter(np.zeros(d))
        p[pre + "W1"] = nm.init_matrix(rng, d, f, scheme=scheme)
        p[pre + "b1"] = nm.parameter(np.zeros(f))
        p[pre + "W2"] = nm.init_matrix(rng, f, d, scheme=scheme)
        p[pre + "b2"] = nm.parameter(np.zeros(d))
    if cfg.n_layers:
        p["enc.ln_f.g"] = nm.parameter(np.ones(d))
        p["enc.ln_f.b"] = nm.parameter(np.zeros(d))
    return p


def pad_batch(id_lists: Sequence[Sequence[int]], vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Prepend [CLS], truncate to ``max_len`` tokens, pad. Returns (ids, mask)."""
    truncated = sum(1 for ids in id_lists if len(ids) > max_len)
    if truncated:
        logger.info("truncated %d utterances to %d tokens", truncated, max_len)
    seqs = [[vocab.cls_id] + list(ids[:max_len]) for ids in id_lists]
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for k, s in enumerate(seqs):
        ids[k, : len(s)] = s
        mask[k, : len(s)] = True
    return ids, mask


def _self_attention(x: Tensor, mask: np.ndarray, p: dict[str, Tensor], pre: str, n_heads: int) -> Tensor:
    U, L, d = x.shape
    dh = d // n_heads

    def heads(t: Tensor) -> Tensor:
        return nm.transpose(nm.reshape(t, (U, L, n_heads, dh)), (0, 2, 1, 3))

    q = heads(nm.linear_map(x, p[pre + "Wq"], p[pre + "bq"]))
    k = heads(nm.linear_map(x, p[pre + "Wk"], p[pre + "bk"]))
    v = heads(nm.linear_map(x, p[pre + "Wv"], p[pre + "bv"]))
    scores = nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = nm.masked_softmax(scores, mask[:, None, None, :])
    out = nm.reshape(nm.transpose(nm.matmul(attn, v), (0, 2, 1, 3)), (U, L, d))
    return nm.linear_map(out, p[pre + "Wo"], p[pre + "bo"])


def encode_batch(ids: np.ndarray, mask: np.ndarray, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Encode padded [U, L] id rows to utterance features [U, d_m]."""
    U, L = ids.shape
    x = nm.embedding(params["enc.tok_emb"], ids) * np.sqrt(cfg.d_m)
    x = x + sinusoidal_positions(L, cfg.d_m)
    for layer in range(cfg.n_layers):
        pre = f"enc.layer{layer}."
        h = nm.layer_norm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        x = x + _self_attention(h, mask, params, pre, cfg.n_heads)
        h = nm.layer_norm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        h = nm.activation(nm.linear_map(h, params[pre + "W1"], params[pre + "b1"]), cfg.activation)
        x = x + nm.linear_map(h, params[pre + "W2"], params[pre + "b2"])
    if cfg.n_layers:
        x = nm.layer_norm(x, params["enc.ln_f.g"], params["enc.ln_f.b"])
    return nm.max_pool_rows(x, mask)


def encode_utterance(ids: Sequence[int], params: dict[str, Tensor], cfg: EncoderConfig, vocab: Vocabulary) -> Tensor:
    """Feature vector [d_m] for a single tokenized utterance."""
    if len(ids) == 0:
        raise nm.PreconditionError("encode_utterance needs a non-empty id sequence")
    padded, mask = pad_batch([ids], vocab, cfg.max_len)
    return nm.reshape(encode_batch(padded, mask, params, cfg), (cfg.d_m,))


def project(c: Tensor, W_proj: Tensor, b: Tensor | None = None) -> Tensor:
    """Linear map of utterance features from d_m to d_h."""
    if c.ndim == 1:
        return nm.reshape(nm.linear_map(nm.reshape(c, (1, c.shape[0])), W_proj, b), (W_proj.shape[1],))
    return nm.linear_map(c, W_proj, b)
