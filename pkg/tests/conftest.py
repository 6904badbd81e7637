import numpy as np
import pytest

from kbcin.dataset import SynthConfig, generate_synthetic, split_corpus
from kbcin.encoder import Vocabulary
from kbcin.knowledge import synthesize_store
from kbcin.model import KBCIN, ModelConfig


def tiny_model_config(**kw) -> ModelConfig:
    base = dict(d_m=16, enc_layers=1, enc_heads=2, d_ff=16, max_len=16, d_h=8, heads=2, d_k=6,
                mlp_hidden=(8,), dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SynthConfig(n_dialogues=12, seed=3))


@pytest.fixture(scope="session")
def small_store(small_corpus):
    return synthesize_store(small_corpus, 6, 0)


@pytest.fixture
def tiny_model(small_corpus):
    vocab = Vocabulary.build(u.text for d in small_corpus.dialogues for u in d.utterances)
    return KBCIN.create(tiny_model_config(), vocab, np.random.default_rng(0))


@pytest.fixture(scope="session")
def small_splits():
    corpus = generate_synthetic(SynthConfig(n_dialogues=20, seed=5))
    splits = split_corpus(corpus, {"train": 12, "valid": 4, "test": 4})
    stores = {k: synthesize_store(v, 6, 0) for k, v in splits.items()}
    return splits, stores


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL/SKIP line per acceptance criterion."""
    from contextlib import contextmanager

    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    @contextmanager
    def run(name):
        detail = {}
        try:
            yield detail
        except pytest.skip.Exception as exc:
            lines.append(f"SKIP  {name}: {exc.msg}")
            raise
        except BaseException as exc:
            msg = detail.get("msg") or f"{type(exc).__name__}: {exc}".splitlines()[0]
            lines.append(f"FAIL  {name}: {msg}")
            raise
        lines.append(f"PASS  {name}: {detail.get('msg', '')}")

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for ln in lines:
            terminalreporter.write_line(ln)
