"""Causal interaction heads bridged by commonsense knowledge.

Each head runs three modules over the candidates 0..t of a sample:

* graph attention over the past-only conversational graph, with isAfter /
  isBefore knowledge added to the neighbour side of the attention score;
* emotional interaction between the target query and each candidate, keyed
  with xReact / oReact knowledge;
* actional interaction, the same shape with xWant / oWant knowledge.

The three results are summed per candidate and the heads are concatenated.

Several samples can be packed row-wise into one ``SampleInputs``: graph
attention then uses a block-diagonal causal mask and the interaction
softmaxes are restricted to each sample's own rows, so packed samples never
see each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .knowledge import REL_INDEX, Relation, select_social_relation
from .numeric import Tensor


@dataclass
class KBCIConfig:
    d_h: int = 300
    n_heads: int = 2
    gat_activation: str = "elu"
    leaky_slope: float = 0.01
    s_bridge: bool = True
    e_bridge: bool = True
    a_bridge: bool = True


@dataclass
class ConversationGraph:
    n: int
    edges: set[tuple[int, int]]

    def neighbors(self, i: int) -> list[int]:
        return sorted(j for j, k in self.edges if k == i)

    def mask(self) -> np.ndarray:
        """``mask[i, j]`` is true iff j -> i is an edge."""
        m = np.zeros((self.n, self.n), dtype=bool)
        for j, i in self.edges:
            m[i, j] = True
        return m


def build_graph(t: int) -> ConversationGraph:
    """Edges j -> i for every 0 <= j <= i <= t, self-loops included."""
    if t < 0:
        raise ValueError("target index must be >= 0")
    return ConversationGraph(t + 1, {(j, i) for i in range(t + 1) for j in range(i + 1)})


@dataclass
class SampleInputs:
    """Row-packed inputs for one or more samples.

    Rows ``segments[k][0]:segments[k][1]`` are the candidates 0..t of sample
    k, in order, so the last row of each segment is its target.
    """

    c: Tensor  # [M, d_h] projected utterance features
    positions: np.ndarray  # [M] clamped distance buckets
    emotions: np.ndarray | None  # [M] emotion ids; None when emotion information is off
    speakers: list[str]  # [M]
    knowledge: np.ndarray  # [M, 6, d_k]
    segments: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.segments:
            self.segments = [(0, len(self.speakers))]

    @property
    def t(self) -> int:
        if len(self.segments) != 1:
            raise ValueError("t is only defined for a single sample")
        return len(self.speakers) - 1

    @property
    def targets(self) -> np.ndarray:
        return np.array([b - 1 for _, b in self.segments], dtype=np.int64)

    def row_segment(self) -> np.ndarray:
        out = np.empty(len(self.speakers), dtype=np.int64)
        for k, (a, b) in enumerate(self.segments):
            out[a:b] = k
        return out

    def graph_mask(self) -> np.ndarray:
        m = np.zeros((len(self.speakers),) * 2, dtype=bool)
        for a, b in self.segments:
            m[a:b, a:b] = build_graph(b - a - 1).mask()
        return m

    def segment_mask(self) -> np.ndarray:
        m = np.zeros((len(self.segments), len(self.speakers)), dtype=bool)
        for k, (a, b) in enumerate(self.segments):
            m[k, a:b] = True
        return m

    def target_speakers(self) -> list[str]:
        return [self.speakers[b - 1] for _, b in self.segments]


@dataclass
class HeadTrace:
    alpha: np.ndarray
    s_emo: np.ndarray
    s_act: np.ndarray


@dataclass
class Trace:
    """Attention weights per head; for packed inputs, per sample then per head."""

    heads: list[HeadTrace] = field(default_factory=list)


def init_kbci_params(cfg: KBCIConfig, d_k: int, p_max: int, n_emotions: int,
                     rng: np.random.Generator, scheme: str = "glorot") -> dict[str, Tensor]:
    d = cfg.d_h
    p = {
        "kbci.pos_emb": nm.init_embedding(rng, p_max, d, scheme=scheme),
        "kbci.emo_emb": nm.init_embedding(rng, n_emotions, d, scheme=scheme),
        "kbci.W_init": nm.init_matrix(rng, 3 * d, d, scheme=scheme),
        "kbci.b_init": nm.parameter(np.zeros(d)),
        "kbci.W_know": nm.init_matrix(rng, d_k, d, scheme=scheme),
    }
    for n in range(cfg.n_heads):
        p.update(init_head_params(cfg, rng, f"kbci.head{n}.", scheme))
    return p


def init_head_params(cfg: KBCIConfig, rng: np.random.Generator, pre: str = "",
                     scheme: str = "glorot") -> dict[str, Tensor]:
    d = cfg.d_h
    p = {
        pre + "W_h": nm.init_matrix(rng, d, d, scheme=scheme),
        pre + "W_e": nm.init_matrix(rng, d, d, scheme=scheme),
        pre + "a": nm.init_matrix(rng, 2 * d, 1, scheme=scheme),
    }
    for module in ("emo", "act"):
        for f in ("q", "k", "v", "e"):
            p[f"{pre}{module}.f{f}.W"] = nm.init_matrix(rng, d, d, scheme=scheme)
            p[f"{pre}{module}.f{f}.b"] = nm.parameter(np.zeros(d))
    return p


def head_keys(params: dict[str, Tensor], n: int) -> dict[str, Tensor]:
    """Parameters of head ``n`` with the head prefix stripped."""
    pre = f"kbci.head{n}."
    return {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}


def init_nodes(c: Tensor, positions, emotions, pos_table: Tensor, emo_table: Tensor,
               W_init: Tensor, b_init: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Node states ``[c | pemb | eemb] @ W_init + b``; also returns the eemb rows.

    With ``emotions`` None the emotion embedding is a zero block.
    """
    n = c.shape[0]
    if len(positions) != n or (emotions is not None and len(emotions) != n):
        raise nm.DimensionError(f"init_nodes: {n} feature rows but {len(positions)} positions")
    pemb = nm.embedding(pos_table, positions)
    if emotions is None:
        eemb = nm.Tensor(np.zeros((n, emo_table.shape[1])))
    else:
        eemb = nm.embedding(emo_table, emotions)
    h = nm.linear_map(nm.concat([c, pemb, eemb], axis=1), W_init, b_init)
    return h, eemb


def _affine(x: Tensor, hp: dict[str, Tensor], name: str) -> Tensor:
    return nm.linear_map(x, hp[name + ".W"], hp[name + ".b"])


def csk_graph_attention(h: Tensor, k_af: Tensor, k_bf: Tensor, graph: ConversationGraph | np.ndarray,
                        hp: dict[str, Tensor], cfg: KBCIConfig) -> tuple[Tensor, Tensor]:
    """Returns (updated node states, attention matrix alpha[i, j])."""
    mask = graph.mask() if isinstance(graph, ConversationGraph) else graph
    d = cfg.d_h
    wh = nm.matmul(h, hp["W_h"])
    neighbour = wh
    if cfg.s_bridge:
        neighbour = wh + nm.matmul(k_af, hp["W_e"]) + nm.matmul(k_bf, hp["W_e"])
    a = hp["a"]
    src = nm.matmul(wh, a[:d])  # [M, 1], the a^T W_h h_i half
    dst = nm.matmul(neighbour, a[d:])  # [M, 1], the neighbour half
    e = nm.leaky_relu(src + nm.transpose(dst), cfg.leaky_slope)
    alpha = nm.masked_softmax(e, mask)
    return nm.activation(nm.matmul(alpha, wh), cfg.gat_activation), alpha


def _interaction(query_in: Tensor, hhat: Tensor, k_social: Tensor, hp: dict[str, Tensor], module: str,
                 use_bridge: bool, d_h: int, seg_mask: np.ndarray | None = None,
                 row_seg: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    q = _affine(query_in, hp, f"{module}.fq")  # [S, d]
    key = _affine(hhat, hp, f"{module}.fk")  # [M, d]
    val = _affine(hhat, hp, f"{module}.fv")
    if use_bridge:
        fe = _affine(k_social, hp, f"{module}.fe")
        key = key + fe
        val = val + fe
    scores = nm.matmul(q, nm.transpose(key)) * (1.0 / np.sqrt(d_h))  # [S, M]
    s = nm.masked_softmax(scores, seg_mask)
    if seg_mask is None or seg_mask.shape[0] == 1:
        w = nm.transpose(s)  # [M, 1]
        q_rows = q
    else:
        # each column is non-zero in exactly one row, so the column sum is exact
        w = nm.transpose(nm.tensor_sum(s, axis=0, keepdims=True))
        q_rows = q[row_seg]
    return w * val + w * q_rows, s


def social_knowledge(k_all: Tensor, speakers: list[str], kind: str,
                     target_speaker: list[str] | str | None = None) -> Tensor:
    """Row i is K^r_i, r picked by whether row i's speaker matches its target's speaker.

    ``target_speaker`` defaults to the last speaker (single sample); for
    packed inputs pass one target speaker per row.
    """
    if target_speaker is None:
        target_speaker = speakers[-1]
    if isinstance(target_speaker, str):
        target_speaker = [target_speaker] * len(speakers)
    rels = [REL_INDEX[select_social_relation(s, ts, kind)] for s, ts in zip(speakers, target_speaker)]
    return k_all[np.arange(len(speakers)), rels]


def emotional_interaction(hhat: Tensor, h_t: Tensor, eemb_t: Tensor, k_react: Tensor,
                          hp: dict[str, Tensor], cfg: KBCIConfig, seg_mask: np.ndarray | None = None,
                          row_seg: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """(h_emo [M, d_h], scores [S, M]); query from target state plus target emotion."""
    return _interaction(h_t + eemb_t, hhat, k_react, hp, "emo", cfg.e_bridge, cfg.d_h, seg_mask, row_seg)


def actional_interaction(hhat: Tensor, h_t: Tensor, k_want: Tensor, hp: dict[str, Tensor], cfg: KBCIConfig,
                         seg_mask: np.ndarray | None = None,
                         row_seg: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """(h_act [M, d_h], scores [S, M]); query from the target state alone."""
    return _interaction(h_t, hhat, k_want, hp, "act", cfg.a_bridge, cfg.d_h, seg_mask, row_seg)


@dataclass
class _Packed:
    graph_mask: np.ndarray
    seg_mask: np.ndarray
    row_seg: np.ndarray
    targets: np.ndarray
    k_react_rows: np.ndarray
    k_want_rows: np.ndarray


def _pack_static(inputs: SampleInputs) -> _Packed:
    row_seg = inputs.row_segment()
    tspk = inputs.target_speakers()
    per_row = [tspk[k] for k in row_seg]
    react = [REL_INDEX[select_social_relation(s, ts, "react")] for s, ts in zip(inputs.speakers, per_row)]
    want = [REL_INDEX[select_social_relation(s, ts, "want")] for s, ts in zip(inputs.speakers, per_row)]
    return _Packed(inputs.graph_mask(), inputs.segment_mask(), row_seg, inputs.targets,
                   np.array(react), np.array(want))


def head_forward(h: Tensor, eemb: Tensor, k_all: Tensor, inputs: SampleInputs, hp: dict[str, Tensor],
                 cfg: KBCIConfig, trace: Trace | None = None, packed: _Packed | None = None) -> Tensor:
    """One head: graph attention, then both interactions, summed per candidate."""
    pk = packed or _pack_static(inputs)
    rows = np.arange(k_all.shape[0])
    k_af = k_all[:, REL_INDEX[Relation.IS_AFTER]]
    k_bf = k_all[:, REL_INDEX[Relation.IS_BEFORE]]
    hhat, alpha = csk_graph_attention(h, k_af, k_bf, pk.graph_mask, hp, cfg)
    h_t = h[pk.targets]
    h_emo, s_emo = emotional_interaction(hhat, h_t, eemb[pk.targets], k_all[rows, pk.k_react_rows], hp, cfg,
                                         pk.seg_mask, pk.row_seg)
    h_act, s_act = actional_interaction(hhat, h_t, k_all[rows, pk.k_want_rows], hp, cfg, pk.seg_mask, pk.row_seg)
    if trace is not None:
        for k, (a, b) in enumerate(inputs.segments):
            trace.heads.append(HeadTrace(alpha.data[a:b, a:b].copy(), s_emo.data[k, a:b].copy(),
                                         s_act.data[k, a:b].copy()))
    return hhat + h_emo + h_act


def knowledge_to_hidden(knowledge: np.ndarray, W_know: Tensor) -> Tensor:
    """[M, 6, d_k] raw vectors to [M, 6, d_h] through the shared input map."""
    return nm.matmul(nm.Tensor(knowledge), W_know)


def multi_head_forward(inputs: SampleInputs, params: dict[str, Tensor], cfg: KBCIConfig,
                       trace: Trace | None = None, head_params: list[dict[str, Tensor]] | None = None) -> Tensor:
    """Concatenated head outputs, [M, n_heads * d_h], heads in index order."""
    h, eemb = init_nodes(inputs.c, inputs.positions, inputs.emotions, params["kbci.pos_emb"],
                         params["kbci.emo_emb"], params["kbci.W_init"], params["kbci.b_init"])
    k_all = knowledge_to_hidden(inputs.knowledge, params["kbci.W_know"])
    pk = _pack_static(inputs)
    heads = head_params or [head_keys(params, n) for n in range(cfg.n_heads)]
    traces = [Trace() for _ in heads] if trace is not None else [None] * len(heads)
    outs = [head_forward(h, eemb, k_all, inputs, hp, cfg, tr, pk) for hp, tr in zip(heads, traces)]
    if trace is not None:
        # regroup as sample-major: sample k's heads are trace.heads[k*N:(k+1)*N]
        for k in range(len(inputs.segments)):
            trace.heads.extend(tr.heads[k] for tr in traces)
    return outs[0] if len(outs) == 1 else nm.concat(outs, axis=1)
