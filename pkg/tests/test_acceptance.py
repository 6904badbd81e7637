"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed at the end of the run."""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from kbcin import numeric as nm
from kbcin.dataset import (
    SampleStats, SynthConfig, build_samples, convert_reccon, generate_synthetic, load_splits, parse_corpus,
    split_corpus,
)
from kbcin.encoder import Vocabulary
from kbcin.kbci import build_graph, csk_graph_attention, head_keys, init_nodes, knowledge_to_hidden
from kbcin.knowledge import synthesize_store
from kbcin.model import KBCIN, ModelConfig
from kbcin.prediction import bce_loss, macro_f1
from kbcin.trainer import TrainConfig, train_run

pytestmark = pytest.mark.slow

TABLE_2 = [
    ("KAG", 86.35, 58.18, 72.26),
    ("Adapted", 88.18, 64.53, 76.36),
    ("ECPE-2D", 94.96, 55.50, 75.23),
    ("ECPE-MLL", 94.68, 48.48, 71.59),
    ("RankCP", 97.30, 33.00, 65.15),
    ("RoBERTa-Base", 88.74, 64.28, 76.51),
    ("RoBERTa-Large", 87.89, 66.23, 77.06),
    ("KEC", 88.85, 66.55, 77.70),
    ("KBCIN", 89.65, 68.59, 79.12),
]


def synthetic_splits(seed=0, d_k=64):
    corpus = generate_synthetic(SynthConfig(n_dialogues=96, seed=seed))
    splits = split_corpus(corpus, {"train": 64, "valid": 16, "test": 16})
    return splits, {k: synthesize_store(v, d_k, 0) for k, v in splits.items()}


@pytest.mark.parametrize("row", TABLE_2, ids=[r[0] for r in TABLE_2])
def test_metric_arithmetic(row, criterion):
    name, neg, pos, macro = row
    with criterion(f"metric arithmetic [{name}]") as d:
        got = macro_f1(neg, pos)
        d["msg"] = f"({neg}, {pos}) -> {got:.2f}, published {macro:.2f}"
        assert got == macro


def test_gradient_fidelity(criterion):
    with criterion("gradient fidelity") as d:
        dialogue = parse_corpus({"dialogues": [{"id": "g", "utterances": [
            {"speaker": "A", "text": "my boss gave me a promotion !", "emotion": "happiness"},
            {"speaker": "B", "text": "that is great news .", "emotion": "happiness"},
            {"speaker": "A", "text": "i still can not believe the promotion", "emotion": "surprise"},
        ], "causal_pairs": [{"target": 2, "cause": 0}, {"target": 2, "cause": 2}]}]})
        vocab = Vocabulary.build(u.text for u in dialogue.dialogues[0].utterances)
        cfg = ModelConfig(d_m=16, enc_layers=1, enc_heads=2, d_ff=16, d_h=8, heads=2, d_k=6, mlp_hidden=(8, 8, 8),
                          dropout=0.0)
        model = KBCIN.create(cfg, vocab, np.random.default_rng(0))
        store = synthesize_store(dialogue, 6, 0)
        (sample,) = build_samples(dialogue)
        by_id = dialogue.by_id()

        def loss():
            inputs = model.pack([sample], by_id, store)
            return bce_loss(model.scores(inputs), sample.labels)

        t0 = time.time()
        err = nm.grad_check(loss, list(model.params.values()))
        n = model.parameter_count()
        d["msg"] = f"max rel err {err:.2e} over all {n} parameter entries ({time.time() - t0:.0f}s)"
        assert err < 1e-4


def test_causality(criterion):
    with criterion("causality invariant") as d:
        splits, stores = synthetic_splits(seed=7, d_k=6)
        corpus = splits["train"]
        cfg = ModelConfig(d_m=16, enc_layers=1, enc_heads=2, d_ff=16, d_h=8, heads=2, d_k=6, mlp_hidden=(8,),
                          dropout=0.0)
        vocab = Vocabulary.build(u.text for dl in corpus.dialogues for u in dl.utterances)
        model = KBCIN.create(cfg, vocab, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        by_id = corpus.by_id()
        samples = build_samples(corpus)
        picks = [samples[k] for k in rng.integers(0, len(samples), size=100)]
        probes = 0
        for s in picks:
            dl = by_id[s.dialogue_id]
            t = s.target_index
            base = model.scores(model.pack([s], by_id, stores["train"])).data
            # later utterances: alter their text and knowledge in a copy of the dialogue
            for j in range(t + 1, len(dl.utterances)):
                moved_dl = type(dl)(dl.id, [type(u)(u.index, u.speaker, u.text, u.emotion) for u in dl.utterances],
                                    dl.causal_pairs)
                moved_dl.utterances[j].text = "insult rotten spider lottery " + moved_dl.utterances[j].text
                know = {**stores["train"].vectors, dl.id: stores["train"].vectors[dl.id].copy()}
                know[dl.id][j] = -know[dl.id][j]
                moved_store = type(stores["train"])(stores["train"].dim, know)
                out = model.scores(model.pack([s], {dl.id: moved_dl}, moved_store)).data
                assert np.array_equal(out, base), f"{dl.id} t={t}: output moved when utterance {j} changed"
                probes += 1
            # graph outputs: perturb node j and check rows i < j of every head
            inputs = model.pack([s], by_id, stores["train"])
            p = model.params

            def graph_out(c, know):
                h, _ = init_nodes(nm.Tensor(c), inputs.positions, inputs.emotions, p["kbci.pos_emb"],
                                  p["kbci.emo_emb"], p["kbci.W_init"], p["kbci.b_init"])
                kk = knowledge_to_hidden(know, p["kbci.W_know"])
                return [csk_graph_attention(h, kk[:, 0], kk[:, 1], build_graph(t), head_keys(p, n), cfg.kbci)[0].data
                        for n in range(cfg.heads)]

            ref = graph_out(inputs.c.data, inputs.knowledge)
            for j in range(1, t + 1):
                c2, k2 = inputs.c.data.copy(), inputs.knowledge.copy()
                c2[j] += rng.standard_normal(c2.shape[1])
                k2[j] = -k2[j]
                for a, b in zip(ref, graph_out(c2, k2)):
                    assert np.array_equal(a[:j], b[:j]), f"{dl.id}: graph row < {j} moved"
                probes += 1
        d["msg"] = f"100 samples, {probes} perturbations, all exactly unchanged"


def test_normalization(criterion):
    with criterion("normalization") as d:
        splits, stores = synthetic_splits()
        cfg = TrainConfig(seeds=(0,), epochs=1, patience=0, eval_train=False)
        report = train_run(splits, stores, cfg)
        model = report["results"][0].model
        worst, count = 0.0, 0
        for split in ("train", "valid", "test"):
            traces = []
            model.predict(splits[split], stores[split], traces=traces)
            for _, tr in traces:
                for h in tr.heads:
                    worst = max(worst, float(np.max(np.abs(h.alpha.sum(axis=1) - 1.0))),
                                abs(float(h.s_emo.sum()) - 1.0), abs(float(h.s_act.sum()) - 1.0))
                    count += h.alpha.shape[0] + 2
        d["msg"] = f"{count} distributions after one epoch, max |sum - 1| = {worst:.1e}"
        assert worst <= 1e-9


@pytest.fixture(scope="module")
def default_runs():
    """Full model, bridges off and emotion-mode none; default config and seeds on corpus seed 0."""
    splits, stores = synthetic_splits(seed=0)
    runs = {}
    for name, kw in (("full", {}), ("no_bridges", dict(s_bridge=False, e_bridge=False, a_bridge=False)),
                     ("no_emotion", dict(emotion_mode="none"))):
        t0 = time.time()
        runs[name] = (train_run(splits, stores, TrainConfig(**kw)), time.time() - t0)
    return runs


def test_learnability(default_runs, criterion):
    with criterion("learnability") as d:
        report, secs = default_runs["full"]
        best_train = [max(h["train"]["pos_f1"] for h in r.history) for r in report["results"]]
        test_pos = report["mean"]["pos_f1"]
        d["msg"] = (f"train Pos F1 peak per seed {best_train}, mean test Pos F1 {test_pos:.2f} "
                    f"(per seed {[r.test_metrics['pos_f1'] for r in report['results']]}), {secs:.0f}s")
        assert all(b >= 95.0 for b in best_train)
        assert secs < 600
        assert test_pos >= 80.0


def test_ablation_direction(default_runs, criterion):
    with criterion("ablation direction") as d:
        full = default_runs["full"][0]["mean"]["macro_f1"]
        off = default_runs["no_bridges"][0]["mean"]["macro_f1"]
        d["msg"] = f"test macro F1 full {full:.2f}, all bridges off {off:.2f}"
        assert off < full


def test_emotion_mode_direction(default_runs, criterion):
    with criterion("emotion-mode direction") as d:
        gold = default_runs["full"][0]["mean"]["macro_f1"]
        none = default_runs["no_emotion"][0]["mean"]["macro_f1"]
        d["msg"] = f"test macro F1 gold {gold:.2f}, none {none:.2f}"
        assert none <= gold


def test_determinism(tmp_path, criterion):
    with criterion("determinism") as d:
        splits, stores = synthetic_splits()
        cfg = TrainConfig(seeds=(3,), epochs=5)
        files = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            train_run(splits, stores, cfg, out)
            files.append(sorted(p for p in out.rglob("*") if p.is_file() and p.suffix in (".json", ".jsonl")))
        names = [[p.relative_to(tmp_path / f"run{k}") for p in fs] for k, fs in enumerate(files)]
        assert names[0] == names[1]
        same = [a.read_bytes() == b.read_bytes() for a, b in zip(*files)]
        d["msg"] = f"{sum(same)}/{len(same)} metrics/history/prediction files bit-identical"
        assert all(same)


RECCON_COUNTS = {"train": (7027, 20646), "valid": (328, 838), "test": (1767, 5330)}


def test_reccon_pair_counts(criterion):
    with criterion("RECCON-DD pair counts (conditional)") as d:
        root = os.environ.get("KBCIN_RECCON_DIR")
        if not root:
            pytest.skip("set KBCIN_RECCON_DIR to a directory with the RECCON-DD splits")
        got = {}
        for split in RECCON_COUNTS:
            corpus = _load_reccon(Path(root), split)
            stats = SampleStats()
            build_samples(corpus, stats=stats)
            got[split] = (stats.positives, stats.negatives)
        d["msg"] = f"got {got}"
        assert got == RECCON_COUNTS


def _load_reccon(root: Path, split: str):
    """Either converted corpus files (train.json ...) or the original dailydialog_<split>.json dumps."""
    if (root / f"{split}.json").exists():
        return load_splits(root)[split]
    raw = json.loads((root / f"dailydialog_{split}.json").read_text(encoding="utf-8"))
    return parse_corpus(convert_reccon(raw))
