"""Caption model: image feature -> initial hidden state -> GRU -> vocab softmax.

Training uses teacher forcing with a summed cross-entropy loss; generation is
greedy (argmax each step, ties to the lowest index) with an optional
hidden-state dropout probability d_e and a hard 20-word limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import END_ID, PAD_ID, START_ID, UNK_ID, Vocabulary
from .errors import DataError, ShapeError
from .neural import (
    GruCache,
    GruParams,
    dropout_mask,
    gru_step,
    gru_step_backward,
    log_softmax,
    tanh,
    zero_grads,
)
from .rng import RngStream

GRU_PARAM_NAMES = ("U_r", "U_z", "U_h", "W_r", "W_z", "W_h", "b_r", "b_z", "b_h")


@dataclass
class CaptionModel:
    vocab_size: int
    embed_dim: int
    feature_dim: int
    hidden_dim: int
    E: np.ndarray          # vocab_size x embed_dim
    W_img: np.ndarray      # feature_dim x hidden_dim
    b_img: np.ndarray
    gru: GruParams
    W_out: np.ndarray      # hidden_dim x vocab_size
    b_out: np.ndarray
    embeddings_frozen: bool = True

    @classmethod
    def init(
        cls,
        vocab_size: int,
        embed_dim: int,
        feature_dim: int,
        hidden_dim: int,
        rng: RngStream,
        embeddings: np.ndarray | None = None,
        embeddings_frozen: bool = True,
    ) -> "CaptionModel":
        if embeddings is not None:
            if embeddings.shape != (vocab_size, embed_dim):
                raise ShapeError(
                    f"embedding matrix shape {embeddings.shape} != ({vocab_size}, {embed_dim})"
                )
            E = embeddings.astype(np.float64)
        else:
            E = rng.uniform_range(-1.0 / np.sqrt(embed_dim), 1.0 / np.sqrt(embed_dim),
                                  (vocab_size, embed_dim))
        sf = 1.0 / np.sqrt(feature_dim)
        sh = 1.0 / np.sqrt(hidden_dim)
        return cls(
            vocab_size=vocab_size,
            embed_dim=embed_dim,
            feature_dim=feature_dim,
            hidden_dim=hidden_dim,
            E=E,
            W_img=rng.uniform_range(-sf, sf, (feature_dim, hidden_dim)),
            b_img=np.zeros(hidden_dim),
            gru=GruParams.init(embed_dim, hidden_dim, rng),
            W_out=rng.uniform_range(-sh, sh, (hidden_dim, vocab_size)),
            b_out=np.zeros(vocab_size),
            embeddings_frozen=embeddings_frozen,
        )

    def named_params(self) -> dict[str, np.ndarray]:
        out = {"E": self.E, "W_img": self.W_img, "b_img": self.b_img}
        out.update(self.gru.named())
        out["W_out"] = self.W_out
        out["b_out"] = self.b_out
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.E = params["E"]
        self.W_img = params["W_img"]
        self.b_img = params["b_img"]
        for name in GRU_PARAM_NAMES:
            setattr(self.gru, name, params[name])
        self.W_out = params["W_out"]
        self.b_out = params["b_out"]

    def init_hidden(self, feature: np.ndarray) -> np.ndarray:
        """tanh(feature @ W_img + b_img); squashed to the GRU's state range."""
        if feature.shape[0] != self.feature_dim:
            raise ShapeError(
                f"init_hidden: feature dim {feature.shape[0]} != model feature_dim {self.feature_dim}"
            )
        return tanh(feature @ self.W_img + self.b_img)


@dataclass
class GenerationResult:
    token_ids: list[int]
    exceeded_limit: bool
    per_step_log_probs: list[float] = field(default_factory=list)


def zero_model_grads(model: CaptionModel) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in model.named_params().items()}


def teacher_forced_loss(
    model: CaptionModel,
    feature: np.ndarray,
    caption_ids: list[int],
    d_t: float,
    rng: RngStream | None,
    masks: list[np.ndarray] | None = None,
    compute_grads: bool = True,
):
    """Summed cross entropy over a teacher-forced unroll, plus gradients.

    caption_ids must end with the end-marker id. Inputs are the start token
    followed by the caption prefix; the target at each step is the next
    caption token. Pass `masks` to freeze the dropout masks (one per step).
    Returns (loss, grads-dict) or (loss, None) when compute_grads is False.
    """
    if not caption_ids:
        raise DataError("teacher_forced_loss: empty caption")
    if caption_ids[-1] != END_ID:
        raise DataError("teacher_forced_loss: caption does not end with the end marker")
    for i in caption_ids:
        if not (0 <= i < model.vocab_size):
            raise DataError(f"teacher_forced_loss: token id {i} out of range")

    n = len(caption_ids)
    inputs = [START_ID] + list(caption_ids[:-1])
    targets = list(caption_ids)
    feature = np.asarray(feature, dtype=np.float64)

    h0 = model.init_hidden(feature)
    h = h0
    cache = GruCache()
    probs = []
    loss = 0.0
    for t in range(n):
        x = model.E[inputs[t]]
        mask = masks[t] if masks is not None else None
        h, step_cache = gru_step(x, h, model.gru, d_t, rng, mask=mask)
        cache.steps.append(step_cache)
        logits = h @ model.W_out + model.b_out
        lp = log_softmax(logits)
        loss -= lp[targets[t]]
        if compute_grads:
            p = np.exp(lp)
            p[targets[t]] -= 1.0  # d loss / d logits
            probs.append((h, p))
    if not compute_grads:
        return loss, None

    grads = zero_model_grads(model)
    carry = np.zeros(model.hidden_dim)
    for t in range(n - 1, -1, -1):
        h_t, d_logits = probs[t]
        grads["W_out"] += np.outer(h_t, d_logits)
        grads["b_out"] += d_logits
        d_h = d_logits @ model.W_out.T + carry
        gru_grads_view = {k: grads[k] for k in GRU_PARAM_NAMES}
        d_x, carry = gru_step_backward(cache.steps[t], d_h, model.gru, gru_grads_view)
        if not model.embeddings_frozen:
            grads["E"][inputs[t]] += d_x
    # through tanh of the image projection
    d_a = carry * (1.0 - h0 * h0)
    grads["W_img"] += np.outer(feature, d_a)
    grads["b_img"] += d_a
    return loss, grads


def perplexity(model: CaptionModel, pairs) -> float:
    """exp(total cross entropy / total predicted tokens) with no dropout.

    pairs: iterable of (feature vector, caption id sequence ending in END_ID).
    """
    total_loss = 0.0
    total_tokens = 0
    for feature, caption_ids in pairs:
        loss, _ = teacher_forced_loss(model, feature, caption_ids, 0.0, None, compute_grads=False)
        total_loss += loss
        total_tokens += len(caption_ids)
    if total_tokens == 0:
        raise DataError("perplexity: empty corpus")
    return float(np.exp(total_loss / total_tokens))


_BLOCKED_IDS = (PAD_ID, START_ID, UNK_ID)  # never generable; END is allowed


def greedy_generate(
    model: CaptionModel,
    feature: np.ndarray,
    d_e: float,
    rng: RngStream | None,
    max_len: int = 20,
    apply_dropout: bool = True,
) -> GenerationResult:
    """Greedy decoding with hidden-state dropout probability d_e.

    Stops on the end marker or after max_len content tokens (then
    exceeded_limit is set). per_step_log_probs records the log probability of
    every argmax decision, including the final end-marker step when one is
    emitted. apply_dropout=False takes the dropout-free code path.
    """
    feature = np.asarray(feature, dtype=np.float64)
    h = model.init_hidden(feature)
    token = START_ID
    token_ids: list[int] = []
    log_probs: list[float] = []
    for _ in range(max_len + 1):
        x = model.E[token]
        h, _ = gru_step(x, h, model.gru, d_e, rng, apply_dropout=apply_dropout)
        logits = h @ model.W_out + model.b_out
        masked = logits.copy()
        masked[list(_BLOCKED_IDS)] = -np.inf
        token = int(np.argmax(masked))
        lp = log_softmax(masked)
        log_probs.append(float(lp[token]))
        if token == END_ID:
            return GenerationResult(token_ids=token_ids, exceeded_limit=False,
                                    per_step_log_probs=log_probs)
        token_ids.append(token)
        if len(token_ids) == max_len:
            return GenerationResult(token_ids=token_ids, exceeded_limit=True,
                                    per_step_log_probs=log_probs)
    raise AssertionError("unreachable")


def result_tokens(result: GenerationResult, vocab: Vocabulary) -> list[str]:
    return vocab.decode(result.token_ids)
