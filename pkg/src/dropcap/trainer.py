"""Adam optimizer, minibatch training loop, checkpoint IO.

Checkpoint format ("NDCP", version 1, little-endian):
  magic, u32 version, u32 vocab_size, u32 embed_dim, u32 feature_dim,
  u32 hidden_dim, f64 d_t, u64 vocab_hash (FNV-1a of the canonical vocabulary
  file bytes), u8 embeddings_frozen, u32 tensor_count; then per tensor
  u16 name length, name utf-8, u32 rank, u32 dims..., f64 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import CaptionRecord, END_ID, FeatureStore, Vocabulary
from .decoder import CaptionModel, teacher_forced_loss
from .errors import DataError, FormatError, NumericalError
from .neural import GruParams
from .rng import RngStream, fnv1a64


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place. Keys absent from grads are skipped."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"adam_step: non-finite gradient for '{name}'")
        theta = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        theta -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class TrainConfig:
    d_t: float = 0.0
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-3
    seed: int = 0
    hidden_dim: int = 256
    embed_dim: int = 300
    freeze_embeddings: bool = False
    grad_clip: float | None = None
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.d_t <= 0.95):
            raise DataError(f"TrainConfig: d_t {self.d_t} outside [0, 0.95]")
        if self.batch_size < 1 or self.epochs < 1:
            raise DataError("TrainConfig: batch_size and epochs must be >= 1")


def encode_caption(vocab: Vocabulary, tokens: list[str]) -> list[int]:
    return vocab.encode(tokens) + [END_ID]


def train(
    model: CaptionModel,
    records: list[CaptionRecord],
    features: FeatureStore,
    vocab: Vocabulary,
    config: TrainConfig,
    max_steps: int | None = None,
) -> list[float]:
    """Adam training with teacher forcing; returns per-epoch mean loss per token.

    Deterministic given config.seed: shuffling and dropout masks all derive
    from it. Minibatch gradients are the mean over examples of per-example
    gradients normalized by the example's predicted-token count.
    """
    if not records:
        raise DataError("train: empty corpus")
    pairs = []
    for rec in records:
        feat = features.get(rec.image_id).astype(np.float64)
        pairs.append((feat, encode_caption(vocab, rec.tokens)))
    model.embeddings_frozen = config.freeze_embeddings
    params = model.named_params()
    state = AdamState(lr=config.lr)
    rng = RngStream(config.seed)
    shuffle_rng = rng.derive("shuffle")
    dropout_rng = rng.derive("dropout")
    loss_log: list[float] = []
    steps = 0
    n = len(pairs)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        epoch_tokens = 0
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            grads_sum: dict[str, np.ndarray] | None = None
            for idx in batch:
                feat, caption_ids = pairs[int(idx)]
                loss, grads = teacher_forced_loss(
                    model, feat, caption_ids, config.d_t, dropout_rng
                )
                n_tok = len(caption_ids)
                epoch_loss += loss
                epoch_tokens += n_tok
                if grads_sum is None:
                    grads_sum = {k: g / n_tok for k, g in grads.items()}
                else:
                    for k, g in grads.items():
                        grads_sum[k] += g / n_tok
            assert grads_sum is not None
            for k in grads_sum:
                grads_sum[k] /= len(batch)
            if config.freeze_embeddings:
                grads_sum.pop("E", None)
            if config.grad_clip is not None:
                norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads_sum.values())))
                if norm > config.grad_clip:
                    scale = config.grad_clip / norm
                    for k in grads_sum:
                        grads_sum[k] *= scale
            adam_step(params, grads_sum, state)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                loss_log.append(epoch_loss / max(epoch_tokens, 1))
                return loss_log
        loss_log.append(epoch_loss / epoch_tokens)
    return loss_log


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_MAGIC = b"NDCP"
CHECKPOINT_VERSION = 1


def vocab_hash(vocab: Vocabulary) -> int:
    return fnv1a64(vocab.to_bytes())


def save_checkpoint(model: CaptionModel, d_t: float, vhash: int, path) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack(
            "<IIIIIdQB",
            CHECKPOINT_VERSION,
            model.vocab_size, model.embed_dim, model.feature_dim, model.hidden_dim,
            d_t, vhash, 1 if model.embeddings_frozen else 0,
        ))
        tensors = model.named_params()
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(np.asarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expected_vocab_hash: int | None = None):
    """Returns (model, metadata dict). Verifies the vocabulary hash if given."""
    with open(path, "rb") as f:
        data = f.read()
    header_fmt = "<IIIIIdQB"
    header_size = 4 + struct.calcsize(header_fmt) + 4
    if len(data) < header_size:
        raise FormatError("checkpoint truncated before header", offset=len(data))
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"checkpoint: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC.decode()!r}", offset=0
        )
    (version, vocab_size, embed_dim, feature_dim, hidden_dim,
     d_t, vhash, frozen) = struct.unpack_from(header_fmt, data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint: unsupported version {version}", offset=4)
    if expected_vocab_hash is not None and vhash != expected_vocab_hash:
        raise FormatError(
            f"checkpoint: vocabulary hash mismatch (file {vhash:#x}, expected {expected_vocab_hash:#x})"
        )
    off = 4 + struct.calcsize(header_fmt)
    (tensor_count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(tensor_count):
        if off + 2 > len(data):
            raise FormatError("checkpoint truncated in tensor header", offset=off)
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        if off + 4 > len(data):
            raise FormatError("checkpoint truncated in tensor rank", offset=off)
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = []
        for _ in range(rank):
            (d,) = struct.unpack_from("<I", data, off)
            dims.append(d)
            off += 4
        count = int(np.prod(dims)) if dims else 1
        if off + 8 * count > len(data):
            raise FormatError("checkpoint truncated in tensor payload", offset=off)
        tensors[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(dims).copy()
        off += 8 * count

    gru = GruParams(
        input_dim=embed_dim, hidden_dim=hidden_dim,
        U_r=tensors["U_r"], U_z=tensors["U_z"], U_h=tensors["U_h"],
        W_r=tensors["W_r"], W_z=tensors["W_z"], W_h=tensors["W_h"],
        b_r=tensors["b_r"], b_z=tensors["b_z"], b_h=tensors["b_h"],
    )
    model = CaptionModel(
        vocab_size=vocab_size, embed_dim=embed_dim, feature_dim=feature_dim,
        hidden_dim=hidden_dim, E=tensors["E"],
        W_img=tensors["W_img"], b_img=tensors["b_img"], gru=gru,
        W_out=tensors["W_out"], b_out=tensors["b_out"],
        embeddings_frozen=bool(frozen),
    )
    meta = {"d_t": d_t, "vocab_hash": vhash}
    return model, meta
