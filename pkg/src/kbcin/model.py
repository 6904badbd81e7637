"""Full network: encoder -> projection -> KBCI heads -> predictor."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import numeric as nm
from .dataset import DEFAULT_EMOTIONS, DEFAULT_P_MAX, CEESample, Corpus, CorpusError, Dialogue, build_samples
from .encoder import EncoderConfig, Vocabulary, encode_batch, init_encoder_params, pad_batch, project, tokenize
from .kbci import KBCIConfig, SampleInputs, Trace, init_kbci_params, multi_head_forward
from .knowledge import KnowledgeStore
from .prediction import PairPrediction, init_predictor_params, predict_scores
from .numeric import Tensor

EMOTION_MODES = ("gold", "predicted", "none")
EVAL_CHUNK = 16


@dataclass
class ModelConfig:
    d_m: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    d_h: int = 300
    heads: int = 2
    d_k: int = 64
    p_max: int = DEFAULT_P_MAX
    mlp_hidden: tuple[int, ...] = (300, 300, 300)
    dropout: float = 0.07
    leaky_slope: float = 0.01
    gat_activation: str = "elu"
    emotions: tuple[str, ...] = DEFAULT_EMOTIONS
    emotion_mode: str = "gold"
    s_bridge: bool = True
    e_bridge: bool = True
    a_bridge: bool = True
    init_scheme: str = "glorot"

    def __post_init__(self):
        self.mlp_hidden = tuple(self.mlp_hidden)
        self.emotions = tuple(self.emotions)
        if self.init_scheme not in nm.INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {nm.INIT_SCHEMES}, got {self.init_scheme!r}")
        if self.emotion_mode not in EMOTION_MODES:
            raise ValueError(f"emotion_mode must be one of {EMOTION_MODES}, got {self.emotion_mode!r}")
        if self.heads < 1:
            raise ValueError("need at least one KBCI head")

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.d_m, self.enc_layers, self.enc_heads, self.d_ff, self.max_len)

    @property
    def kbci(self) -> KBCIConfig:
        return KBCIConfig(self.d_h, self.heads, self.gat_activation, self.leaky_slope,
                          self.s_bridge, self.e_bridge, self.a_bridge)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        d["emotions"] = list(self.emotions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class KBCIN:
    cfg: ModelConfig
    vocab: Vocabulary
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: ModelConfig, vocab: Vocabulary, rng: np.random.Generator) -> "KBCIN":
        scheme = cfg.init_scheme
        params = init_encoder_params(cfg.encoder, len(vocab), rng, scheme)
        params["enc.W_proj"] = nm.init_matrix(rng, cfg.d_m, cfg.d_h, scheme=scheme)
        params.update(init_kbci_params(cfg.kbci, cfg.d_k, cfg.p_max, len(cfg.emotions), rng, scheme))
        params.update(init_predictor_params(cfg.heads * cfg.d_h, cfg.mlp_hidden, rng, scheme))
        for name, p in params.items():
            p.name = name
        return cls(cfg, vocab, params)

    # -- forward pieces ----------------------------------------------------------
    def encode_texts(self, texts: Sequence[str]) -> Tensor:
        """Projected features [U, d_h], one row per text.

        Texts are batched only with others of the same token length, so no
        padding is involved and each row depends on its own text alone.
        """
        seqs = [tokenize(t, self.vocab)[: self.cfg.max_len] for t in texts]
        groups: dict[int, list[int]] = {}
        for k, s in enumerate(seqs):
            groups.setdefault(len(s), []).append(k)
        parts, order = [], []
        for length in sorted(groups):
            members = groups[length]
            ids, mask = pad_batch([seqs[k] for k in members], self.vocab, self.cfg.max_len)
            parts.append(encode_batch(ids, mask, self.params, self.cfg.encoder))
            order.extend(members)
        c = parts[0] if len(parts) == 1 else nm.concat(parts, axis=0)
        if order != sorted(order):
            c = c[np.argsort(order)]
        return project(c, self.params["enc.W_proj"])

    def encode_dialogue(self, dialogue: Dialogue, upto: int | None = None) -> Tensor:
        """Projected features for utterances 0..upto (all by default)."""
        utts = dialogue.utterances if upto is None else dialogue.utterances[: upto + 1]
        return self.encode_texts([u.text for u in utts])

    def emotion_ids(self, sample: CEESample, overlay: dict | None, mode: str) -> np.ndarray | None:
        if mode == "none":
            return None
        index = {e: k for k, e in enumerate(self.cfg.emotions)}
        if mode == "gold":
            labels = sample.emotions
        else:
            if overlay is None:
                raise CorpusError("emotion_mode 'predicted' needs an overlay")
            labels = []
            for i in sample.candidate_indices:
                key = (sample.dialogue_id, i)
                if key not in overlay:
                    raise CorpusError(f"overlay has no emotion for utterance {i} of {sample.dialogue_id}")
                labels.append(overlay[key])
        try:
            return np.array([index[e] for e in labels], dtype=np.int64)
        except KeyError as exc:
            raise CorpusError(f"emotion {exc.args[0]!r} not in the model's vocabulary") from None

    def _check_store(self, store: KnowledgeStore) -> None:
        if store.dim != self.cfg.d_k:
            raise nm.DimensionError(f"knowledge dim {store.dim} != model d_k {self.cfg.d_k}")

    def sample_inputs(self, sample: CEESample, c_rows: Tensor, store: KnowledgeStore,
                      overlay: dict | None = None, mode: str | None = None) -> SampleInputs:
        """Inputs for one sample given its dialogue's encoded rows."""
        mode = mode or self.cfg.emotion_mode
        t = sample.target_index
        self._check_store(store)
        c = c_rows if c_rows.shape[0] == t + 1 else c_rows[: t + 1]
        return SampleInputs(
            c=c,
            positions=np.asarray(sample.distances, dtype=np.int64),
            emotions=self.emotion_ids(sample, overlay, mode),
            speakers=list(sample.speakers),
            knowledge=store.dialogue(sample.dialogue_id)[: t + 1],
        )

    def pack(self, samples: Sequence[CEESample], by_id: dict[str, Dialogue], store: KnowledgeStore,
             overlay: dict | None = None, mode: str | None = None) -> SampleInputs:
        """Row-pack several samples; every needed utterance is encoded once."""
        mode = mode or self.cfg.emotion_mode
        self._check_store(store)
        slot: dict[tuple[str, int], int] = {}
        texts, rows, segments = [], [], []
        positions, emotions, speakers, knowledge = [], [], [], []
        for s in samples:
            d = by_id[s.dialogue_id]
            start = len(rows)
            for i in s.candidate_indices:
                key = (s.dialogue_id, i)
                if key not in slot:
                    slot[key] = len(texts)
                    texts.append(d.utterances[i].text)
                rows.append(slot[key])
            segments.append((start, len(rows)))
            positions.extend(s.distances)
            speakers.extend(s.speakers)
            if mode != "none":
                emotions.append(self.emotion_ids(s, overlay, mode))
            knowledge.append(store.dialogue(s.dialogue_id)[: s.target_index + 1])
        c = self.encode_texts(texts)
        if rows != list(range(len(texts))):
            c = c[np.asarray(rows)]
        return SampleInputs(
            c=c,
            positions=np.asarray(positions, dtype=np.int64),
            emotions=None if mode == "none" else np.concatenate(emotions),
            speakers=speakers,
            knowledge=np.concatenate(knowledge, axis=0),
            segments=segments,
        )

    def features(self, inputs: SampleInputs, trace: Trace | None = None) -> Tensor:
        return multi_head_forward(inputs, self.params, self.cfg.kbci, trace)

    def scores(self, inputs: SampleInputs, rng: np.random.Generator | None = None,
               training: bool = False, trace: Trace | None = None) -> Tensor:
        return predict_scores(self.features(inputs, trace), self.params, dropout=self.cfg.dropout,
                              rng=rng, training=training, slope=self.cfg.leaky_slope)

    # -- corpus-level helpers ---------------------------------------------------
    def predict(self, corpus: Corpus, store: KnowledgeStore, overlay: dict | None = None,
                mode: str | None = None, traces: list | None = None,
                chunk: int = EVAL_CHUNK) -> list[PairPrediction]:
        """Scores for every (sample, candidate) pair, in corpus order.

        Samples are scored in consecutive packs of ``chunk``; a fixed chunk
        keeps repeated evaluations bit-identical.
        """
        by_id = corpus.by_id()
        samples = build_samples(corpus, self.cfg.p_max)
        out = []
        with nm.no_grad():
            for k in range(0, len(samples), chunk):
                part = samples[k:k + chunk]
                inputs = self.pack(part, by_id, store, overlay, mode)
                trace = Trace() if traces is not None else None
                sc = self.scores(inputs, trace=trace).data
                n = self.cfg.heads
                for j, (s, (a, _)) in enumerate(zip(part, inputs.segments)):
                    if traces is not None:
                        traces.append((s, Trace(trace.heads[j * n:(j + 1) * n])))
                    out.extend(PairPrediction(s.dialogue_id, s.target_index, i, float(sc[a + i]), s.labels[i])
                               for i in s.candidate_indices)
        return out

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))
