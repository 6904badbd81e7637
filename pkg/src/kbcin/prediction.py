"""Causal-utterance scorer, training loss and pair-level F1 metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Sequence

import numpy as np

from . import numeric as nm
from .numeric import Tensor

CLAMP = 1e-12


@dataclass
class PairPrediction:
    dialogue_id: str
    target_index: int
    candidate_index: int
    score: float
    label: int

    def to_dict(self) -> dict:
        return asdict(self)


def init_predictor_params(in_dim: int, hidden: Sequence[int], rng: np.random.Generator,
                          scheme: str = "glorot") -> dict[str, Tensor]:
    widths = [in_dim, *hidden, 1]
    if any(w <= 0 for w in widths):
        raise ValueError(f"MLP widths must be positive, got {widths}")
    p = {}
    for k in range(len(widths) - 1):
        p[f"mlp.{k}.W"] = nm.init_matrix(rng, widths[k], widths[k + 1], scheme=scheme)
        p[f"mlp.{k}.b"] = nm.parameter(np.zeros(widths[k + 1]))
    return p


def mlp_depth(params: dict[str, Tensor]) -> int:
    return sum(1 for k in params if k.startswith("mlp.") and k.endswith(".W"))


def predict_logits(features: Tensor, params: dict[str, Tensor], dropout: float = 0.0,
                   rng: np.random.Generator | None = None, training: bool = False,
                   slope: float = 0.01) -> Tensor:
    depth = mlp_depth(params)
    if features.shape[-1] != params["mlp.0.W"].shape[0]:
        raise nm.DimensionError(
            f"predictor expects width {params['mlp.0.W'].shape[0]}, got features {features.shape}")
    x = features
    for k in range(depth):
        x = nm.linear_map(x, params[f"mlp.{k}.W"], params[f"mlp.{k}.b"])
        if k < depth - 1:
            x = nm.leaky_relu(x, slope)
            x = nm.dropout(x, dropout, rng, training)
    return nm.reshape(x, (x.shape[0],))


def predict_scores(features: Tensor, params: dict[str, Tensor], **kw) -> Tensor:
    """sigmoid(MLP(feature_i)) for each candidate row."""
    return nm.sigmoid(predict_logits(features, params, **kw))


def bce_loss(scores: Tensor, labels: Sequence[int], pos_weight: float = 1.0,
             segments: Sequence[tuple[int, int]] | None = None) -> Tensor:
    """Mean of -[w*y*log(p) + (1-y)*log(1-p)] with p clamped to [1e-12, 1-1e-12].

    With ``segments`` the rows are several packed samples: the loss is the
    mean over samples of each sample's mean.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != scores.shape:
        raise nm.DimensionError(f"bce_loss: scores {scores.shape} vs labels {y.shape}")
    p = nm.clip(scores, CLAMP, 1.0 - CLAMP)
    per = nm.log(p) * (pos_weight * y) + nm.log(1.0 - p) * (1.0 - y)
    if segments is None or len(segments) == 1:
        return nm.mean(per) * -1.0
    w = np.empty_like(y)
    for a, b in segments:
        w[a:b] = 1.0 / ((b - a) * len(segments))
    return nm.tensor_sum(per * w) * -1.0


def round2(x: float) -> float:
    """Round to 2 decimals, ties to even, on the decimal representation."""
    return float(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def macro_f1(neg_f1: float, pos_f1: float) -> float:
    """Macro F1 (percent, 2 decimals) from the two reported class F1s."""
    mean = (Decimal(repr(float(neg_f1))) + Decimal(repr(float(pos_f1)))) / 2
    return float(mean.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 or tp == 0 else 2 * tp / denom


def confusion(predictions: Iterable[PairPrediction], threshold: float = 0.5) -> dict[str, int]:
    tp = fp = fn = tn = 0
    for p in predictions:
        hit = p.score >= threshold
        if hit and p.label:
            tp += 1
        elif hit:
            fp += 1
        elif p.label:
            fn += 1
        else:
            tn += 1
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


def f1_from_confusion(c: dict[str, int]) -> dict:
    pos = round2(100 * _f1(c["tp"], c["fp"], c["fn"]))
    # negative class: roles of the two labels swap
    neg = round2(100 * _f1(c["tn"], c["fn"], c["fp"]))
    return {"neg_f1": neg, "pos_f1": pos, "macro_f1": macro_f1(neg, pos), "counts": dict(c)}


def f1_metrics(predictions: Sequence[PairPrediction], threshold: float = 0.5) -> dict:
    """Negative-class, positive-class and macro F1 in percent, 2 decimals."""
    if len(predictions) == 0:
        raise ValueError("f1_metrics needs at least one prediction")
    return f1_from_confusion(confusion(predictions, threshold))
