import pytest

from recap import data as D
from recap import training as T

CORPUS_SEED = 7


@pytest.fixture(scope="session")
def synthetic_corpus():
    """20-video synthetic corpus (d=32) with 14/2/4 splits."""
    feats, caps, vocab = D.gen_synthetic(seed=CORPUS_SEED, n_videos=20, d=32)
    corpus = D.corpus_from_synthetic(feats, caps, vocab)
    splits = D.split_by_id_order(corpus.features.keys())
    return corpus, splits


def shrunk_config(**overrides) -> T.TrainConfig:
    base = dict(
        stage="xe",
        hidden_dim=64,
        embed_dim=32,
        batch_size=2,
        max_epochs=300,
        patience=300,
        seed=CORPUS_SEED,
    )
    base.update(overrides)
    return T.TrainConfig(**base)


@pytest.fixture(scope="session")
def xe_overfit(synthetic_corpus):
    """Stage-1 cross-entropy run to convergence on the synthetic corpus.

    Shared by the overfit, reconstruction-trend, and SCST acceptance tests;
    consumers must not mutate the returned arrays in place.
    """
    corpus, splits = synthetic_corpus
    return T.train(shrunk_config(), corpus, splits)
