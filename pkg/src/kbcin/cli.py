"""Command line entry point: ``kbcin <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import (
    SPLITS, ConfigError, CorpusError, SynthConfig, generate_synthetic, load_overlay, load_splits, save_corpus,
    split_corpus,
)
from .knowledge import KnowledgeError, dump_store, read_store, synthesize_store
from .trainer import TrainConfig, apply_overrides, attention_dump, evaluate_run, load_checkpoint, train_run

logger = logging.getLogger("kbcin")


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(ln) for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]


def _load_data(args, splits: tuple[str, ...] = SPLITS):
    corpora = load_splits(args.corpus)
    corpora = {k: v for k, v in corpora.items() if k in splits}
    missing = [s for s in splits if s not in corpora]
    if missing:
        raise ConfigError(f"{args.corpus}: missing split file(s) {', '.join(s + '.json' for s in missing)}")
    stores = {s: read_store(Path(args.knowledge) / f"{s}.jsonl", c) for s, c in corpora.items()}
    overlay = load_overlay(_read_jsonl(Path(args.overlay))) if getattr(args, "overlay", None) else None
    return corpora, stores, overlay


def _overrides(args) -> dict:
    """Model-config fields named on the command line."""
    out = {}
    if args.emotion_mode is not None:
        out["emotion_mode"] = args.emotion_mode
    for b in ("s", "e", "a"):
        if getattr(args, f"disable_{b}_bridge"):
            out[f"{b}_bridge"] = False
    return out


def train_config(args) -> TrainConfig:
    """Config file values first, then any flag given on the command line."""
    values = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    values.update(_overrides(args))
    if args.heads is not None:
        values["heads"] = args.heads
    if args.seed:
        values["seeds"] = list(args.seed)
    for name in ("epochs", "learning_rate", "batch_size", "patience", "threshold"):
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    return TrainConfig.from_dict(values)


def cmd_gen_synth(args) -> int:
    sizes = [int(x) for x in args.split.split(",")]
    if len(sizes) != 3:
        raise ConfigError("--split needs three sizes: train,valid,test")
    corpus = generate_synthetic(SynthConfig(n_dialogues=sum(sizes), len_range=(args.min_len, args.max_len),
                                            seed=args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in split_corpus(corpus, dict(zip(SPLITS, sizes))).items():
        save_corpus(part, out / f"{name}.json")
    print(f"wrote {sum(sizes)} dialogues to {out}")
    return 0


def cmd_gen_knowledge(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, corpus in load_splits(args.corpus).items():
        store = synthesize_store(corpus, args.dim, args.seed)
        (out / f"{name}.jsonl").write_text(dump_store(store), encoding="utf-8")
        print(f"{name}: {sum(len(d.utterances) for d in corpus.dialogues)} utterances x 6 relations")
    return 0


def cmd_train(args) -> int:
    cfg = train_config(args)
    corpora, stores, overlay = _load_data(args)
    report = train_run(corpora, stores, cfg, args.out_dir, overlay)
    for seed, r in report["seeds"].items():
        test = r["test"] or {}
        print(f"seed {seed}: best epoch {r['best_epoch']}, valid macro {r['best_valid_macro_f1']:.2f}, "
              f"test pos {test.get('pos_f1', float('nan')):.2f} macro {test.get('macro_f1', float('nan')):.2f}")
    if "mean" in report:
        m = report["mean"]
        print(f"mean test: neg {m['neg_f1']:.2f} pos {m['pos_f1']:.2f} macro {m['macro_f1']:.2f}")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    corpora, stores, overlay = _load_data(args, (args.split,))
    metrics, _ = evaluate_run(model, corpora[args.split], stores[args.split], _overrides(args), overlay,
                              args.threshold if args.threshold is not None else 0.5, args.out_dir)
    print(json.dumps({k: metrics[k] for k in ("neg_f1", "pos_f1", "macro_f1")}))
    return 0


def cmd_dump_attention(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    model = apply_overrides(model, _overrides(args))
    corpora, stores, overlay = _load_data(args, (args.split,))
    rows = attention_dump(model, corpora[args.split], stores[args.split], overlay)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"attention_{args.split}.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    print(f"wrote {len(rows)} samples to {path}")
    return 0


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True, help="directory with train/valid/test.json")
    p.add_argument("--knowledge", required=True, help="directory with train/valid/test.jsonl")
    p.add_argument("--overlay", help="jsonl of predicted emotion labels")


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--emotion-mode", choices=("gold", "predicted", "none"))
    p.add_argument("--disable-s-bridge", action="store_true")
    p.add_argument("--disable-e-bridge", action="store_true")
    p.add_argument("--disable-a-bridge", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kbcin", description="Causal emotion entailment with commonsense-knowledge bridges.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic corpus with a planted trigger rule")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="64,16,16")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=10)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("gen-knowledge", help="write synthetic knowledge vectors for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_knowledge)

    p = sub.add_parser("train", help="train one model per seed")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON file with TrainConfig keys")
    p.add_argument("--seed", type=int, action="append", help="repeat for several seeds")
    p.add_argument("--heads", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "score a split with a checkpoint"),
                              ("dump-attention", cmd_dump_attention, "write attention weights per sample")):
        p = sub.add_parser(name, help=help_)
        _data_flags(p)
        _model_flags(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", default="test", choices=SPLITS)
        p.add_argument("--out-dir", required=True)
        if name == "eval":
            p.add_argument("--threshold", type=float)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CorpusError, KnowledgeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
