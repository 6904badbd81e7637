"""Conversation corpora, CEE sample construction and the synthetic generator."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

NEUTRAL = "neutral"
DEFAULT_EMOTIONS = ("neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise")
DEFAULT_P_MAX = 40

# Trigger words used by the synthetic corpus; each maps to exactly one emotion.
TRIGGER_LEXICON = {
    "anger": ("insult",),
    "disgust": ("rotten",),
    "fear": ("spider",),
    "happiness": ("promotion",),
    "sadness": ("funeral",),
    "surprise": ("lottery",),
}

FILLER_WORDS = (
    "the", "a", "we", "you", "i", "it", "they", "was", "is", "about", "at", "yesterday",
    "today", "really", "just", "there", "maybe", "so", "then", "office", "home", "party",
    "train", "coffee", "weekend", "meeting", "dinner", "phone", "car", "street", "book",
    "movie", "friend", "brother", "sister", "boss", "teacher", "dog", "morning", "evening",
    "saw", "told", "said", "heard", "think", "know", "went", "came", "got", "made", "with",
    "and", "but", "of", "to", "in", "on", "for", "not", "very", "again", "later", "soon",
    "music", "paper", "window", "garden", "market", "ticket", "letter", "bag", "shirt",
)


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_tokens(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


class CorpusError(ValueError):
    """Malformed corpus document."""


class ConfigError(ValueError):
    """Infeasible generator or training configuration."""


@dataclass
class Utterance:
    index: int
    speaker: str
    text: str
    emotion: str


@dataclass
class Dialogue:
    id: str
    utterances: list[Utterance]
    causal_pairs: list[tuple[int, int]] = field(default_factory=list)

    def causes_of(self, target: int) -> set[int]:
        return {c for t, c in self.causal_pairs if t == target}


@dataclass
class Corpus:
    dialogues: list[Dialogue]
    emotions: tuple[str, ...] = DEFAULT_EMOTIONS
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.dialogues)

    def by_id(self) -> dict[str, Dialogue]:
        return {d.id: d for d in self.dialogues}


@dataclass
class CEESample:
    dialogue_id: str
    target_index: int
    candidate_indices: list[int]
    labels: list[int]
    target_emotion: str
    emotions: list[str]
    speakers: list[str]
    distances: list[int]


@dataclass
class SampleStats:
    positives: int = 0
    negatives: int = 0
    skipped_neutral: int = 0
    skipped_no_cause: int = 0


# -- parsing ----------------------------------------------------------------------

def parse_corpus(document: str | dict, emotions: tuple[str, ...] = DEFAULT_EMOTIONS) -> Corpus:
    """Validate a corpus document (JSON text or an already-decoded mapping)."""
    doc = json.loads(document) if isinstance(document, str) else document
    if "dialogues" not in doc:
        raise CorpusError("corpus document has no 'dialogues' list")
    emotions = tuple(doc.get("emotions", emotions))
    vocab = set(emotions)
    if NEUTRAL not in vocab:
        raise CorpusError(f"emotion vocabulary must contain {NEUTRAL!r}")
    dialogues = []
    seen_ids = set()
    total_dups = 0
    for raw in doc["dialogues"]:
        did = str(raw.get("id", ""))
        if not did:
            raise CorpusError("dialogue without an id")
        if did in seen_ids:
            raise CorpusError(f"dialogue {did}: duplicate id")
        seen_ids.add(did)
        utts = []
        for pos, u in enumerate(raw.get("utterances", [])):
            idx = u.get("index", pos)
            if idx != pos:
                raise CorpusError(f"dialogue {did}: utterance indices not contiguous (got {idx} at position {pos})")
            if u["emotion"] not in vocab:
                raise CorpusError(f"dialogue {did}: unknown emotion label {u['emotion']!r} at utterance {pos}")
            utts.append(Utterance(pos, str(u["speaker"]), str(u.get("text", "")), u["emotion"]))
        if not utts:
            raise CorpusError(f"dialogue {did}: no utterances")
        speakers = {u.speaker for u in utts}
        if len(speakers) > 2:
            raise CorpusError(f"dialogue {did}: {len(speakers)} speakers, at most 2 supported")
        pairs: list[tuple[int, int]] = []
        seen_pairs = set()
        for p in raw.get("causal_pairs", []):
            t, c = int(p["target"]), int(p["cause"])
            if not (0 <= t < len(utts) and 0 <= c < len(utts)):
                raise CorpusError(f"dialogue {did}: pair ({t},{c}) out of range")
            if c > t:
                raise CorpusError(f"dialogue {did}: cause {c} comes after target {t}")
            if utts[t].emotion == NEUTRAL:
                raise CorpusError(f"dialogue {did}: pair ({t},{c}) targets a neutral utterance")
            if (t, c) in seen_pairs:
                total_dups += 1
                continue
            seen_pairs.add((t, c))
            pairs.append((t, c))
        dialogues.append(Dialogue(did, utts, pairs))
    if total_dups:
        logger.info("removed %d duplicate causal pairs", total_dups)
    corpus = Corpus(dialogues, emotions, dict(doc.get("meta", {})))
    corpus.meta["duplicates_removed"] = total_dups
    return corpus


def serialize_corpus(corpus: Corpus) -> dict:
    meta = {k: v for k, v in corpus.meta.items() if k != "duplicates_removed"}
    doc = {
        "emotions": list(corpus.emotions),
        "dialogues": [
            {
                "id": d.id,
                "utterances": [{"speaker": u.speaker, "text": u.text, "emotion": u.emotion} for u in d.utterances],
                "causal_pairs": [{"target": t, "cause": c} for t, c in d.causal_pairs],
            }
            for d in corpus.dialogues
        ],
    }
    if meta:
        doc["meta"] = meta
    return doc


def load_corpus(path: str | Path) -> Corpus:
    return parse_corpus(Path(path).read_text(encoding="utf-8"))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(json.dumps(serialize_corpus(corpus), indent=1, sort_keys=True) + "\n", encoding="utf-8")


SPLITS = ("train", "valid", "test")


def load_splits(directory: str | Path) -> dict[str, Corpus]:
    directory = Path(directory)
    return {s: load_corpus(directory / f"{s}.json") for s in SPLITS if (directory / f"{s}.json").exists()}


# -- RECCON-DD conversion ----------------------------------------------------------

RECCON_EMOTION_MAP = {
    "neutral": "neutral",
    "happy": "happiness", "happines": "happiness", "happiness": "happiness", "excited": "happiness",
    "angry": "anger", "anger": "anger",
    "sad": "sadness", "sadness": "sadness",
    "surprise": "surprise", "surprised": "surprise",
    "fear": "fear", "fearful": "fear",
    "disgust": "disgust", "disgusted": "disgust",
}


def convert_reccon(raw: dict) -> dict:
    """Convert the original RECCON-DD json (1-based turns) into the corpus format.

    Evidence entries that are not integers ("b") and causes after the target
    are dropped.
    """
    dialogues = []
    for did, convs in raw.items():
        turns = convs[0] if convs and isinstance(convs[0], list) else convs
        utts, pairs = [], []
        for pos, turn in enumerate(turns):
            emo = RECCON_EMOTION_MAP.get(str(turn["emotion"]).lower())
            if emo is None:
                raise CorpusError(f"dialogue {did}: unmapped emotion {turn['emotion']!r}")
            utts.append({"speaker": str(turn["speaker"]), "text": turn["utterance"], "emotion": emo})
            if emo == NEUTRAL:
                continue
            for ev in turn.get("expanded emotion cause evidence", []):
                if isinstance(ev, int) and 1 <= ev <= pos + 1:
                    pairs.append({"target": pos, "cause": ev - 1})
        dialogues.append({"id": str(did), "utterances": utts, "causal_pairs": pairs})
    return {"emotions": list(DEFAULT_EMOTIONS), "dialogues": dialogues}


# -- samples ----------------------------------------------------------------------

def relative_position(i: int, t: int, p_max: int = DEFAULT_P_MAX) -> int:
    if not 0 <= i <= t:
        raise ValueError(f"relative_position needs 0 <= i <= t, got i={i}, t={t}")
    return min(t - i, p_max - 1)


def build_samples(corpus: Corpus, p_max: int = DEFAULT_P_MAX, stats: SampleStats | None = None) -> list[CEESample]:
    """One sample per non-neutral utterance that has at least one annotated cause."""
    stats = stats if stats is not None else SampleStats()
    samples = []
    for d in corpus.dialogues:
        for u in d.utterances:
            t = u.index
            if u.emotion == NEUTRAL:
                stats.skipped_neutral += 1
                continue
            causes = d.causes_of(t)
            if not causes:
                stats.skipped_no_cause += 1
                continue
            cand = list(range(t + 1))
            labels = [int(i in causes) for i in cand]
            stats.positives += sum(labels)
            stats.negatives += len(labels) - sum(labels)
            samples.append(CEESample(
                dialogue_id=d.id,
                target_index=t,
                candidate_indices=cand,
                labels=labels,
                target_emotion=u.emotion,
                emotions=[d.utterances[i].emotion for i in cand],
                speakers=[d.utterances[i].speaker for i in cand],
                distances=[relative_position(i, t, p_max) for i in cand],
            ))
    if stats.skipped_no_cause:
        logger.debug("skipped %d non-neutral targets without annotated causes", stats.skipped_no_cause)
    return samples


# -- predicted-emotion overlay ------------------------------------------------------

def load_overlay(records: list[dict], emotions: tuple[str, ...] = DEFAULT_EMOTIONS) -> dict[tuple[str, int], str]:
    out = {}
    for r in records:
        if r["emotion"] not in emotions:
            raise CorpusError(f"overlay: unknown emotion {r['emotion']!r} for {r['dialogue_id']}:{r['utterance_index']}")
        out[(str(r["dialogue_id"]), int(r["utterance_index"]))] = r["emotion"]
    return out


def overlay_records(overlay: dict[tuple[str, int], str]) -> list[dict]:
    return [{"dialogue_id": d, "utterance_index": i, "emotion": e} for (d, i), e in sorted(overlay.items())]


# -- synthetic corpus ------------------------------------------------------------

@dataclass
class SynthConfig:
    n_dialogues: int = 96
    len_range: tuple[int, int] = (4, 10)
    vocab: int = len(FILLER_WORDS)
    seed: int = 0
    cause_rate: float = 0.25
    id_prefix: str = "syn"


def _trigger_emotion() -> dict[str, str]:
    return {tok: emo for emo, toks in TRIGGER_LEXICON.items() for tok in toks}


def generate_synthetic(cfg: SynthConfig) -> Corpus:
    """Dialogues with one planted non-neutral target each.

    A history utterance is a cause of the target iff it contains the target's
    trigger word. The target always contains it, so it is its own cause.
    Non-causes may carry other trigger words as distractors. Cause utterances
    mostly share the target's emotion, so gold emotions are informative too.
    """
    lo, hi = cfg.len_range
    if lo < 2 or hi < lo:
        raise ConfigError(f"len_range must satisfy 2 <= lo <= hi, got {cfg.len_range}")
    if cfg.n_dialogues < 1:
        raise ConfigError("n_dialogues must be >= 1")
    if not 1 <= cfg.vocab <= len(FILLER_WORDS):
        raise ConfigError(f"vocab must be in [1, {len(FILLER_WORDS)}]")
    rng = np.random.default_rng(cfg.seed)
    fillers = FILLER_WORDS[: cfg.vocab]
    non_neutral = tuple(e for e in DEFAULT_EMOTIONS if e != NEUTRAL)
    all_triggers = [tok for toks in TRIGGER_LEXICON.values() for tok in toks]

    def sentence(extra: list[str]) -> str:
        n = int(rng.integers(2, 6))
        words = [fillers[int(k)] for k in rng.integers(0, len(fillers), size=n)] + extra
        order = rng.permutation(len(words))
        return " ".join(words[k] for k in order) + (" !" if rng.random() < 0.3 else " .")

    dialogues = []
    for n in range(cfg.n_dialogues):
        length = int(rng.integers(lo, hi + 1))
        t = int(rng.integers(max(1, length // 2), length))
        emo = non_neutral[int(rng.integers(len(non_neutral)))]
        options = TRIGGER_LEXICON[emo]
        trig = options[int(rng.integers(len(options)))]
        others = [w for w in all_triggers if w != trig]
        first = int(rng.integers(2))
        speakers = ["A" if (k + first) % 2 == 0 else "B" for k in range(length)]
        is_cause = rng.random(t) < cfg.cause_rate
        utts = []
        for k in range(length):
            if k == t:
                text, e = sentence([trig]), emo
            elif k < t and is_cause[k]:
                text = sentence([trig])
                e = emo if rng.random() < 0.6 else NEUTRAL
            else:
                extra = [others[int(rng.integers(len(others)))]] if rng.random() < 0.4 else []
                text = sentence(extra)
                if rng.random() < 0.5:
                    e = NEUTRAL
                else:
                    pool = [x for x in non_neutral if x != emo]
                    e = pool[int(rng.integers(len(pool)))]
            utts.append(Utterance(k, speakers[k], text, e))
        pairs = [(t, k) for k in range(t) if is_cause[k]] + [(t, t)]
        pairs.sort(key=lambda p: p[1])
        dialogues.append(Dialogue(f"{cfg.id_prefix}-{n:04d}", utts, pairs))
    meta = {"generator": "synthetic", "seed": cfg.seed,
            "trigger_lexicon": {e: list(t) for e, t in TRIGGER_LEXICON.items()}}
    return Corpus(dialogues, DEFAULT_EMOTIONS, meta)


def split_corpus(corpus: Corpus, sizes: dict[str, int]) -> dict[str, Corpus]:
    out, start = {}, 0
    for name, n in sizes.items():
        out[name] = Corpus(corpus.dialogues[start:start + n], corpus.emotions, dict(corpus.meta))
        start += n
    return out


def trigger_oracle(dialogue: Dialogue, target: int, lexicon: dict[str, list[str]] | None = None) -> list[int]:
    """Rule-based labels: a candidate is a cause iff it shares a trigger word with the target."""
    lexicon = lexicon or {e: list(t) for e, t in TRIGGER_LEXICON.items()}
    triggers = {tok for toks in lexicon.values() for tok in toks}
    tgt = set(split_tokens(dialogue.utterances[target].text)) & triggers
    return [int(bool(set(split_tokens(dialogue.utterances[i].text)) & tgt)) for i in range(target + 1)]
