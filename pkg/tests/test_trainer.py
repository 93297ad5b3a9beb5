import math

import numpy as np
import pytest

from conftest import tiny_model
from dropcap.corpus import build_vocab, synth_corpus
from dropcap.decoder import CaptionModel
from dropcap.errors import FormatError, NumericalError
from dropcap.rng import RngStream
from dropcap.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train,
    vocab_hash,
)


# --- adam ------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, 2.0])}
    state = AdamState()
    adam_step(params, {"w": np.zeros(2)}, state)
    assert np.array_equal(params["w"], [1.0, 2.0])
    assert state.t == 1


def test_adam_first_step_bias_corrected():
    params = {"w": np.array([0.0])}
    state = AdamState(lr=1e-3)
    adam_step(params, {"w": np.array([1.0])}, state)
    # m_hat = 1, v_hat = 1 after bias correction: delta = -lr / (1 + eps)
    expected = -1e-3 / (1.0 + 1e-8)
    assert params["w"][0] == pytest.approx(expected, rel=1e-12)
    assert params["w"][0] == pytest.approx(-9.99999e-4, abs=1e-8)


def test_adam_symmetry():
    params = {"w": np.array([0.5, 0.5])}
    state = AdamState()
    for _ in range(5):
        adam_step(params, {"w": np.array([0.3, 0.3])}, state)
    assert params["w"][0] == params["w"][1]


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(NumericalError, match="'w'"):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, AdamState())


# --- train -----------------------------------------------------------------------

def _toy_setup(n_images=4, seed=0):
    records, store = synth_corpus(seed, n_images)
    vocab = build_vocab(records)
    return records, store, vocab


def _fresh_model(vocab, store, hidden=16, embed=12, seed=0):
    return CaptionModel.init(
        vocab_size=vocab.size, embed_dim=embed, feature_dim=store.feature_dim,
        hidden_dim=hidden, rng=RngStream(seed).derive("init"),
    )


def test_train_overfits_one_pair():
    records, store, vocab = _toy_setup(1)
    one = records[:1]
    cfg = TrainConfig(d_t=0.0, batch_size=1, epochs=200, lr=5e-3,
                      seed=0, hidden_dim=16, embed_dim=12)
    model = _fresh_model(vocab, store)
    log = train(model, one, store, vocab, cfg, max_steps=200)
    assert log[-1] < 0.1


def test_train_deterministic_checkpoints(tmp_path):
    records, store, vocab = _toy_setup(4)
    vhash = vocab_hash(vocab)
    paths = []
    logs = []
    for run in range(2):
        cfg = TrainConfig(d_t=0.2, batch_size=4, epochs=3, lr=1e-3,
                          seed=7, hidden_dim=16, embed_dim=12)
        model = _fresh_model(vocab, store, seed=7)
        logs.append(train(model, records, store, vocab, cfg))
        path = tmp_path / f"run{run}.ckpt"
        save_checkpoint(model, cfg.d_t, vhash, path)
        paths.append(path)
    assert logs[0] == logs[1]
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_train_lr_zero_leaves_params():
    records, store, vocab = _toy_setup(2)
    cfg = TrainConfig(d_t=0.0, batch_size=2, epochs=2, lr=0.0,
                      seed=0, hidden_dim=16, embed_dim=12)
    model = _fresh_model(vocab, store)
    before = {k: v.copy() for k, v in model.named_params().items()}
    train(model, records, store, vocab, cfg)
    for k, v in model.named_params().items():
        assert np.array_equal(v, before[k])


def test_train_missing_feature_names_id():
    records, store, vocab = _toy_setup(2)
    del store.features[records[0].image_id]
    cfg = TrainConfig(epochs=1, seed=0, hidden_dim=16, embed_dim=12)
    model = _fresh_model(vocab, store)
    with pytest.raises(Exception, match=records[0].image_id):
        train(model, records, store, vocab, cfg)


def test_train_initial_loss_near_log_vocab():
    records, store, vocab = _toy_setup(8)
    cfg = TrainConfig(d_t=0.0, batch_size=8, epochs=1, lr=0.0,
                      seed=0, hidden_dim=16, embed_dim=12)
    model = _fresh_model(vocab, store)
    log = train(model, records, store, vocab, cfg)
    assert abs(log[0] - math.log(vocab.size)) / math.log(vocab.size) < 0.05


def test_frozen_embeddings_bit_identical():
    records, store, vocab = _toy_setup(4)
    cfg = TrainConfig(d_t=0.0, batch_size=4, epochs=3, lr=1e-2,
                      seed=0, hidden_dim=16, embed_dim=12, freeze_embeddings=True)
    model = _fresh_model(vocab, store)
    before = model.E.tobytes()
    train(model, records, store, vocab, cfg)
    assert model.E.tobytes() == before


# --- checkpoints -------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = tiny_model(seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, 0.2, 0xDEADBEEF, path)
    again, meta = load_checkpoint(path)
    assert meta["d_t"] == 0.2
    assert meta["vocab_hash"] == 0xDEADBEEF
    for k, v in model.named_params().items():
        assert v.tobytes() == again.named_params()[k].tobytes()


def test_checkpoint_vocab_hash_mismatch(tmp_path):
    model = tiny_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, 0.0, 1, path)
    with pytest.raises(FormatError, match="hash"):
        load_checkpoint(path, expected_vocab_hash=2)


def test_checkpoint_truncated(tmp_path):
    model = tiny_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, 0.0, 1, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(FormatError, match="offset"):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"ZZZZ" + b"\x00" * 100)
    with pytest.raises(FormatError, match="NDCP"):
        load_checkpoint(path)
