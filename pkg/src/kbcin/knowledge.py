"""Per-utterance commonsense vectors for the six ATOMIC relations."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .dataset import Corpus, split_tokens


class Relation(str, Enum):
    IS_AFTER = "isAfter"
    IS_BEFORE = "isBefore"
    X_REACT = "xReact"
    O_REACT = "oReact"
    X_WANT = "xWant"
    O_WANT = "oWant"

    @property
    def short(self) -> str:
        return _SHORT[self]

    @property
    def event_centered(self) -> bool:
        return self in (Relation.IS_AFTER, Relation.IS_BEFORE)


_SHORT = {
    Relation.IS_AFTER: "af", Relation.IS_BEFORE: "bf", Relation.X_REACT: "xr",
    Relation.O_REACT: "or", Relation.X_WANT: "xw", Relation.O_WANT: "ow",
}
RELATIONS = tuple(Relation)
REL_INDEX = {r: k for k, r in enumerate(RELATIONS)}


class KnowledgeError(ValueError):
    """Incomplete or malformed knowledge file."""


def select_social_relation(speaker_i: str, speaker_t: str, kind: str) -> Relation:
    """xReact/xWant when candidate and target share a speaker, oReact/oWant otherwise."""
    same = speaker_i == speaker_t
    if kind == "react":
        return Relation.X_REACT if same else Relation.O_REACT
    if kind == "want":
        return Relation.X_WANT if same else Relation.O_WANT
    raise ValueError(f"kind must be 'react' or 'want', got {kind!r}")


@dataclass
class KnowledgeStore:
    dim: int
    vectors: dict[str, np.ndarray]  # dialogue id -> [n_utterances, 6, dim]

    def get(self, dialogue_id: str, index: int, relation: Relation | str) -> np.ndarray:
        return self.vectors[dialogue_id][index, REL_INDEX[Relation(relation)]]

    def dialogue(self, dialogue_id: str) -> np.ndarray:
        return self.vectors[dialogue_id]

    def to_records(self) -> list[dict]:
        recs = []
        for did, arr in self.vectors.items():
            for i in range(arr.shape[0]):
                for r in RELATIONS:
                    recs.append({"dialogue_id": did, "utterance_index": i, "relation": r.value,
                                 "vector": arr[i, REL_INDEX[r]].tolist()})
        return recs


def load_store(document: str, corpus: Corpus) -> KnowledgeStore:
    """Parse a line-oriented knowledge export and check it covers ``corpus``."""
    lines = [ln for ln in document.splitlines() if ln.strip()]
    if not lines:
        raise KnowledgeError("knowledge file is empty")
    header = json.loads(lines[0])
    if "dim" not in header:
        raise KnowledgeError("first line must be a header with 'dim'")
    dim = int(header["dim"])
    lengths = {d.id: len(d.utterances) for d in corpus.dialogues}
    vectors = {did: np.full((n, len(RELATIONS), dim), np.nan) for did, n in lengths.items()}
    for lineno, ln in enumerate(lines[1:], start=2):
        rec = json.loads(ln)
        did, idx, rel = str(rec["dialogue_id"]), int(rec["utterance_index"]), rec["relation"]
        try:
            r = Relation(rel)
        except ValueError:
            raise KnowledgeError(f"line {lineno}: unknown relation {rel!r}") from None
        if did not in lengths or not 0 <= idx < lengths[did]:
            raise KnowledgeError(f"line {lineno}: ({did}, {idx}) is not an utterance of the corpus")
        vec = np.asarray(rec["vector"], dtype=np.float64)
        if vec.shape != (dim,):
            raise KnowledgeError(f"line {lineno}: vector length {vec.size} does not match header dim {dim}")
        if not np.isfinite(vec).all():
            raise KnowledgeError(f"line {lineno}: non-finite vector for ({did}, {idx}, {rel})")
        vectors[did][idx, REL_INDEX[r]] = vec
    for d in corpus.dialogues:
        missing = np.isnan(vectors[d.id]).any(axis=-1)
        if missing.any():
            i, k = map(int, np.argwhere(missing)[0])
            raise KnowledgeError(f"missing knowledge vector for ({d.id}, {i}, {RELATIONS[k].value})")
    return KnowledgeStore(dim, vectors)


def read_store(path: str | Path, corpus: Corpus) -> KnowledgeStore:
    return load_store(Path(path).read_text(encoding="utf-8"), corpus)


def dump_store(store: KnowledgeStore) -> str:
    lines = [json.dumps({"dim": store.dim})]
    lines += [json.dumps(r) for r in store.to_records()]
    return "\n".join(lines) + "\n"


def _stable_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synthesize_store(corpus: Corpus, d_k: int, seed: int, bias: float = 3.0) -> KnowledgeStore:
    """Deterministic stand-in for COMET vectors.

    Each vector is keyed by (dialogue id, utterance index, relation, seed).
    If the corpus carries a trigger lexicon, utterances containing a trigger
    word get an extra push toward a fixed direction per (emotion, trigger
    word) before normalisation. The direction is shared by all six relations.
    """
    if d_k < 1:
        raise ValueError("d_k must be >= 1")
    lexicon = corpus.meta.get("trigger_lexicon") or {}
    trig_emotion = {tok: emo for emo, toks in lexicon.items() for tok in toks}
    vectors = {}
    for d in corpus.dialogues:
        arr = np.empty((len(d.utterances), len(RELATIONS), d_k))
        for u in d.utterances:
            hits = sorted(set(split_tokens(u.text)) & trig_emotion.keys())
            for r in RELATIONS:
                v = _unit(np.random.default_rng(_stable_seed(d.id, u.index, r.value, seed)), d_k)
                for tok in hits:
                    key = _stable_seed("direction", trig_emotion[tok], tok, seed)
                    v = v + bias * _unit(np.random.default_rng(key), d_k)
                arr[u.index, REL_INDEX[r]] = v / np.linalg.norm(v)
        vectors[d.id] = arr
    return KnowledgeStore(d_k, vectors)
