import pytest
import torch

from midivae.data.corpus import Limits, ingest_corpus
from midivae.data.synth import SyntheticCorpusSpec, synth_chorale_corpus
from midivae.model import ModelConfig
from midivae.octuple import OctupleVocabulary

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def vocab():
    return OctupleVocabulary()


def small_config(vocab, **overrides):
    kw = dict(d_track=16, d_bar=16, d_latent=16, n_tracks=4, n_bars=8, track_capacity=32, bar_capacity=24,
              encoder_layers=1, decoder_layers=1, heads=2, ff_mult=2, dropout=0.0)
    kw.update(overrides)
    return ModelConfig.for_vocab(vocab, **kw)


@pytest.fixture
def small_cfg(vocab):
    return small_config(vocab)


@pytest.fixture(scope="session")
def corpus10(tmp_path_factory, vocab):
    out = tmp_path_factory.mktemp("corpus10")
    return synth_chorale_corpus(SyntheticCorpusSpec(count=10, seed=0), out, vocab)


@pytest.fixture(scope="session")
def corpus64(tmp_path_factory, vocab):
    out = tmp_path_factory.mktemp("corpus64")
    return synth_chorale_corpus(SyntheticCorpusSpec(count=64, seed=0), out, vocab)


@pytest.fixture(scope="session")
def overfit_corpus(tmp_path_factory, vocab):
    """Eight synthetic pieces, all in the train split."""
    out = tmp_path_factory.mktemp("overfit")
    synth_chorale_corpus(SyntheticCorpusSpec(count=8, seed=0), out, vocab, ingest=False)
    return ingest_corpus(out / "pieces", vocab, out=out, limits=Limits(), ratios=(1, 0, 0))


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def corpus_config(manifest, vocab, **overrides):
    lim = manifest.limits
    return small_config(vocab, n_tracks=lim["n_tracks"], n_bars=lim["n_bars"],
                        track_capacity=lim["track_capacity"], bar_capacity=lim["bar_capacity"], **overrides)
