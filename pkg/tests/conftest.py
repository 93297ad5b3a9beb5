import numpy as np
import pytest

from dropcap.corpus import END_ID
from dropcap.decoder import CaptionModel
from dropcap.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(12345)


def tiny_model(vocab_size=20, embed_dim=6, feature_dim=5, hidden_dim=8,
               seed=0, embeddings_frozen=False) -> CaptionModel:
    return CaptionModel.init(
        vocab_size=vocab_size, embed_dim=embed_dim, feature_dim=feature_dim,
        hidden_dim=hidden_dim, rng=RngStream(seed).derive("init"),
        embeddings_frozen=embeddings_frozen,
    )


def random_pair(model: CaptionModel, seed=0, caption_len=5):
    rng = RngStream(seed)
    feature = rng.derive("feature").uniform_range(-1, 1, model.feature_dim)
    caption = [int(i) for i in rng.derive("caption").integers(4, model.vocab_size, caption_len)]
    caption.append(END_ID)
    return feature, caption


def zero_model(vocab_size=10, embed_dim=4, feature_dim=3, hidden_dim=6) -> CaptionModel:
    """All-zero weights: uniform output distribution at every step."""
    m = tiny_model(vocab_size, embed_dim, feature_dim, hidden_dim)
    for arr in m.named_params().values():
        arr[...] = 0.0
    return m
