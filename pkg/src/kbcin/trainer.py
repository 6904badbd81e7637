"""AdamW training loop, checkpoints, model selection and seed averaging."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric as nm
from .dataset import DEFAULT_P_MAX, ConfigError, Corpus, build_samples
from .encoder import Vocabulary
from .knowledge import KnowledgeStore
from .model import KBCIN, ModelConfig
from .prediction import PairPrediction, bce_loss, f1_metrics

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 4e-5
    weight_decay: float = 3e-4
    batch_size: int = 8
    epochs: int = 200
    patience: int = 10
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    heads: int = 2
    d_h: int = 300
    d_m: int = 64
    enc_layers: int = 2
    enc_heads: int = 4
    d_ff: int = 128
    max_len: int = 64
    mlp_hidden: tuple[int, ...] = (300, 300, 300)
    dropout: float = 0.07
    leaky_slope: float = 0.01
    gat_activation: str = "elu"
    emotion_mode: str = "gold"
    s_bridge: bool = True
    e_bridge: bool = True
    a_bridge: bool = True
    init_scheme: str = "glorot"
    p_max: int = DEFAULT_P_MAX
    pos_weight: float = 1.0
    threshold: float = 0.5
    grad_clip: float = 0.0
    eval_train: bool = True

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.mlp_hidden = tuple(int(w) for w in self.mlp_hidden)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for name in ("learning_rate", "batch_size", "epochs", "heads", "d_h", "d_m", "p_max"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or not 0 <= self.dropout < 1:
            raise ConfigError("weight_decay must be >= 0 and dropout in [0, 1)")

    def model_config(self, d_k: int, emotions: Sequence[str]) -> ModelConfig:
        return ModelConfig(
            d_m=self.d_m, enc_layers=self.enc_layers, enc_heads=self.enc_heads, d_ff=self.d_ff,
            max_len=self.max_len, d_h=self.d_h, heads=self.heads, d_k=d_k, p_max=self.p_max,
            mlp_hidden=self.mlp_hidden, dropout=self.dropout, leaky_slope=self.leaky_slope,
            gat_activation=self.gat_activation, emotions=tuple(emotions),
            emotion_mode=self.emotion_mode, s_bridge=self.s_bridge, e_bridge=self.e_bridge,
            a_bridge=self.a_bridge, init_scheme=self.init_scheme,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# -- optimizer ---------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, nm.Tensor], state: AdamState, lr: float, weight_decay: float,
                   betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """One AdamW update of every parameter that has a gradient.

    Moments use bias correction; weight decay is decoupled (``-lr * wd * theta``).
    """
    b1, b2 = betas
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise nm.NonFiniteError(f"non-finite gradient for parameter {name}")
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data = p.data - lr * update
    return state


def clip_gradients(params: dict[str, nm.Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``; returns the old norm."""
    norm = float(np.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values() if p.grad is not None)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path: str | Path, model: KBCIN, extra: dict | None = None) -> None:
    meta = {"model_config": model.cfg.to_dict(), "vocab": model.vocab.to_list(), **(extra or {})}
    arrays = {f"param:{k}": v.data for k, v in model.params.items()}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[KBCIN, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
        params = {k[len("param:"):]: nm.parameter(z[k].copy(), name=k[len("param:"):])
                  for k in z.files if k.startswith("param:")}
    cfg = ModelConfig.from_dict(meta.pop("model_config"))
    vocab = Vocabulary.from_list(meta.pop("vocab"))
    return KBCIN(cfg, vocab, params), meta


def snapshot(model: KBCIN) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.params.items()}


def restore(model: KBCIN, snap: dict[str, np.ndarray]) -> None:
    for k, arr in snap.items():
        model.params[k].data = arr.copy()


# -- training ----------------------------------------------------------------------

@dataclass
class RunResult:
    seed: int
    model: KBCIN
    history: list[dict]
    best_epoch: int
    best_valid_macro: float
    test_metrics: dict | None
    test_predictions: list[PairPrediction] | None


def evaluate(model: KBCIN, corpus: Corpus, store: KnowledgeStore, threshold: float = 0.5,
             overlay: dict | None = None, mode: str | None = None) -> tuple[dict, list[PairPrediction]]:
    preds = model.predict(corpus, store, overlay, mode)
    return f1_metrics(preds, threshold), preds


def _batches(items: list, size: int) -> list[list]:
    return [items[k:k + size] for k in range(0, len(items), size)]


def train_seed(splits: dict[str, Corpus], stores: dict[str, KnowledgeStore], cfg: TrainConfig, seed: int,
               overlay: dict | None = None) -> RunResult:
    """Train one model; the returned model holds the best-on-valid parameters."""
    train, valid = splits.get("train"), splits.get("valid")
    if train is None or not len(train) or valid is None or not len(valid):
        raise ConfigError("train and valid splits must be non-empty")
    init_ss, order_ss, drop_ss = np.random.SeedSequence(seed).spawn(3)
    order_rng = np.random.default_rng(order_ss)
    drop_rng = np.random.default_rng(drop_ss)

    vocab = Vocabulary.build(u.text for d in train.dialogues for u in d.utterances)
    mcfg = cfg.model_config(stores["train"].dim, train.emotions)
    model = KBCIN.create(mcfg, vocab, np.random.default_rng(init_ss))

    by_id = train.by_id()
    per_dialogue = {}
    for d in train.dialogues:
        samples = build_samples(Corpus([d], train.emotions), cfg.p_max)
        if samples:
            per_dialogue[d.id] = samples
    if not per_dialogue:
        raise ConfigError("training split yields no samples")
    dialogue_ids = list(per_dialogue)

    state = AdamState()
    history: list[dict] = []
    best = (-1.0, 0, snapshot(model))
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = [dialogue_ids[k] for k in order_rng.permutation(len(dialogue_ids))]
        losses = []
        for batch in _batches(order, cfg.batch_size):
            for p in model.params.values():
                p.zero_grad()
            samples = [s for did in batch for s in per_dialogue[did]]
            inputs = model.pack(samples, by_id, stores["train"], overlay)
            scores = model.scores(inputs, rng=drop_rng, training=True)
            labels = [y for s in samples for y in s.labels]
            loss = bce_loss(scores, labels, cfg.pos_weight, inputs.segments)
            loss.backward()
            if cfg.grad_clip > 0:
                clip_gradients(model.params, cfg.grad_clip)
            optimizer_step(model.params, state, cfg.learning_rate, cfg.weight_decay)
            losses.append(loss.item())
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if cfg.eval_train:
            record["train"] = evaluate(model, train, stores["train"], cfg.threshold, overlay)[0]
        record["valid"] = evaluate(model, valid, stores["valid"], cfg.threshold, overlay)[0]
        history.append(record)
        logger.info("seed %d epoch %d loss %.4f valid macro %.2f", seed, epoch, record["train_loss"],
                    record["valid"]["macro_f1"])
        if record["valid"]["macro_f1"] > best[0]:
            best = (record["valid"]["macro_f1"], epoch, snapshot(model))
            stale = 0
        else:
            stale += 1
            if cfg.patience and stale >= cfg.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, best[1])
                break
    restore(model, best[2])

    test_metrics = test_preds = None
    if "test" in splits and len(splits["test"]):
        test_metrics, test_preds = evaluate(model, splits["test"], stores["test"], cfg.threshold, overlay)
    return RunResult(seed, model, history, best[1], best[0], test_metrics, test_preds)


def average_metrics(per_seed: Sequence[dict]) -> dict:
    keys = ("neg_f1", "pos_f1", "macro_f1")
    return {k: float(np.mean([m[k] for m in per_seed])) for k in keys}


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_predictions(path: Path, preds: Sequence[PairPrediction]) -> None:
    path.write_text("".join(json.dumps(p.to_dict(), sort_keys=True) + "\n" for p in preds), encoding="utf-8")


def train_run(splits: dict[str, Corpus], stores: dict[str, KnowledgeStore], cfg: TrainConfig,
              out_dir: str | Path | None = None, overlay: dict | None = None) -> dict:
    """Train one model per seed and average the test metrics.

    With ``out_dir`` each seed gets ``seed<N>/`` holding the best checkpoint,
    epoch history and test predictions/metrics; ``metrics.json`` at the top
    holds the per-seed and averaged test metrics.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "config.json", cfg.to_dict())
    results = []
    for seed in cfg.seeds:
        res = train_seed(splits, stores, cfg, seed, overlay)
        results.append(res)
        if out is not None:
            sd = out / f"seed{seed}"
            sd.mkdir(exist_ok=True)
            save_checkpoint(sd / "checkpoint.npz", res.model, {
                "train_config": cfg.to_dict(), "seed": seed, "epoch": res.best_epoch,
                "best_valid_macro_f1": res.best_valid_macro,
            })
            write_json(sd / "history.json", res.history)
            if res.test_metrics is not None:
                write_json(sd / "test_metrics.json", res.test_metrics)
                write_predictions(sd / "test_predictions.jsonl", res.test_predictions)
    report = {
        "seeds": {str(r.seed): {"best_epoch": r.best_epoch, "best_valid_macro_f1": r.best_valid_macro,
                                "test": r.test_metrics} for r in results},
    }
    tested = [r.test_metrics for r in results if r.test_metrics is not None]
    if tested:
        report["mean"] = average_metrics(tested)
    if out is not None:
        write_json(out / "metrics.json", report)
    report["results"] = results
    return report


def apply_overrides(model: KBCIN, overrides: dict | None) -> KBCIN:
    """A copy of ``model`` sharing its parameters, with config fields replaced."""
    if not overrides:
        return model
    return KBCIN(replace(model.cfg, **overrides), model.vocab, model.params)


def evaluate_run(model: KBCIN, corpus: Corpus, store: KnowledgeStore, overrides: dict | None = None,
                 overlay: dict | None = None, threshold: float = 0.5,
                 out_dir: str | Path | None = None) -> tuple[dict, list[PairPrediction]]:
    """Metrics and predictions for ``corpus``; writes metrics.json / predictions.jsonl when asked."""
    model = apply_overrides(model, overrides)
    if model.cfg.emotion_mode == "predicted" and overlay is None:
        raise ConfigError("emotion_mode 'predicted' needs an overlay file")
    metrics, preds = evaluate(model, corpus, store, threshold, overlay)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "metrics.json", metrics)
        write_predictions(out / "predictions.jsonl", preds)
    return metrics, preds


def attention_dump(model: KBCIN, corpus: Corpus, store: KnowledgeStore, overlay: dict | None = None) -> list[dict]:
    """Per sample and head: graph attention alpha and both interaction score vectors."""
    traces: list[tuple] = []
    model.predict(corpus, store, overlay, traces=traces)
    rows = []
    for sample, trace in traces:
        rows.append({
            "dialogue_id": sample.dialogue_id,
            "target_index": sample.target_index,
            "labels": sample.labels,
            "heads": [{"alpha": h.alpha.tolist(), "s_emo": h.s_emo.tolist(), "s_act": h.s_act.tolist()}
                      for h in trace.heads],
        })
    return rows

