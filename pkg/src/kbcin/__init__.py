"""Causal emotion entailment with commonsense-knowledge bridges."""

from .dataset import Corpus, Dialogue, SynthConfig, Utterance, build_samples, generate_synthetic, load_corpus
from .knowledge import KnowledgeStore, Relation, read_store, synthesize_store
from .model import KBCIN, ModelConfig
from .prediction import PairPrediction, f1_metrics
from .trainer import TrainConfig, evaluate_run, load_checkpoint, save_checkpoint, train_run

__version__ = "0.1.0"

__all__ = [
    "KBCIN", "Corpus", "Dialogue", "KnowledgeStore", "ModelConfig", "PairPrediction", "Relation",
    "SynthConfig", "TrainConfig", "Utterance", "build_samples", "evaluate_run", "f1_metrics",
    "generate_synthetic", "load_checkpoint", "load_corpus", "read_store", "save_checkpoint",
    "synthesize_store", "train_run",
]
