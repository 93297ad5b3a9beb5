"""GRU cell with optional hidden-state dropout, plus the dense primitives it needs.

Everything is float64. Gradients are hand-derived and checked against central
finite differences (see grad_check and the test suite).

The cell follows the gated-recurrent-unit equations with reset gate r, update
gate z and candidate state h_bar; dropout (inverted scaling, mask entries are
0 or 1/(1-p)) is applied to the combined hidden state, and the post-dropout
state is both the recurrent input of the next step and the state handed to the
caller for output projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError, UsageError
from .rng import RngStream

MAX_DROPOUT = 0.95


def affine(x: np.ndarray, U: np.ndarray, h: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x@U + h@W + b with shape validation."""
    if x.shape[0] != U.shape[0]:
        raise ShapeError(f"affine: x has dim {x.shape[0]} but U has {U.shape[0]} rows")
    if h.shape[0] != W.shape[0]:
        raise ShapeError(f"affine: h has dim {h.shape[0]} but W has {W.shape[0]} rows")
    if not (U.shape[1] == W.shape[1] == b.shape[0]):
        raise ShapeError(
            f"affine: output dims disagree (U cols {U.shape[1]}, W cols {W.shape[1]}, b dim {b.shape[0]})"
        )
    return x @ U + h @ W + b


def sigmoid(v: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp for large |v|
    out = np.empty_like(v, dtype=np.float64)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def tanh(v: np.ndarray) -> np.ndarray:
    return np.tanh(v)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted)))


def _check_p(p: float) -> None:
    if not (0.0 <= p <= MAX_DROPOUT):
        raise UsageError(f"dropout probability {p} outside [0, {MAX_DROPOUT}]")


def dropout_mask(p: float, dim: int, rng: RngStream) -> np.ndarray:
    """Inverted-dropout mask: entries 0 w.p. p, else 1/(1-p). p=0 -> exact ones."""
    _check_p(p)
    if p == 0.0:
        return np.ones(dim, dtype=np.float64)
    keep = rng.uniform(dim) >= p
    return keep.astype(np.float64) / (1.0 - p)


@dataclass
class GruParams:
    input_dim: int
    hidden_dim: int
    U_r: np.ndarray
    U_z: np.ndarray
    U_h: np.ndarray
    W_r: np.ndarray
    W_z: np.ndarray
    W_h: np.ndarray
    b_r: np.ndarray
    b_z: np.ndarray
    b_h: np.ndarray

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruParams":
        return cls(
            input_dim,
            hidden_dim,
            *(np.zeros((input_dim, hidden_dim)) for _ in range(3)),
            *(np.zeros((hidden_dim, hidden_dim)) for _ in range(3)),
            *(np.zeros(hidden_dim) for _ in range(3)),
        )

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: RngStream) -> "GruParams":
        """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero."""
        su = 1.0 / np.sqrt(input_dim)
        sw = 1.0 / np.sqrt(hidden_dim)
        return cls(
            input_dim,
            hidden_dim,
            *(rng.uniform_range(-su, su, (input_dim, hidden_dim)) for _ in range(3)),
            *(rng.uniform_range(-sw, sw, (hidden_dim, hidden_dim)) for _ in range(3)),
            *(np.zeros(hidden_dim) for _ in range(3)),
        )

    def named(self) -> dict[str, np.ndarray]:
        return {
            "U_r": self.U_r, "U_z": self.U_z, "U_h": self.U_h,
            "W_r": self.W_r, "W_z": self.W_z, "W_h": self.W_h,
            "b_r": self.b_r, "b_z": self.b_z, "b_h": self.b_h,
        }


@dataclass
class GruStepCache:
    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    h_bar: np.ndarray
    mask: np.ndarray


@dataclass
class GruCache:
    steps: list[GruStepCache] = field(default_factory=list)


def gru_step(
    x_t: np.ndarray,
    h_prev: np.ndarray,
    params: GruParams,
    p: float,
    rng: RngStream | None,
    mask: np.ndarray | None = None,
    apply_dropout: bool = True,
) -> tuple[np.ndarray, GruStepCache]:
    """One GRU step. Returns the post-dropout hidden state and its cache.

    A caller may freeze the mask by passing it explicitly (used by the
    gradient checker); otherwise a fresh mask is sampled from rng each step.
    With apply_dropout=False the dropout multiplication is skipped entirely
    (the dropout-free reference path).
    """
    _check_p(p)
    r = sigmoid(affine(x_t, params.U_r, h_prev, params.W_r, params.b_r))
    z = sigmoid(affine(x_t, params.U_z, h_prev, params.W_z, params.b_z))
    h_bar = tanh(affine(x_t, params.U_h, r * h_prev, params.W_h, params.b_h))
    combined = z * h_prev + (1.0 - z) * h_bar
    if not apply_dropout:
        mask = np.ones_like(combined)
        h_t = combined
    else:
        if mask is None:
            mask = dropout_mask(p, params.hidden_dim, rng)
        h_t = mask * combined
    return h_t, GruStepCache(x=x_t, h_prev=h_prev, r=r, z=z, h_bar=h_bar, mask=mask)


def gru_step_backward(
    cache: GruStepCache,
    d_h: np.ndarray,
    params: GruParams,
    grads: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Backward through one cached step; accumulates into grads.

    Returns (d_x, d_h_prev). The dropout mask is a constant during backward.
    """
    x, h_prev, r, z, h_bar, m = cache.x, cache.h_prev, cache.r, cache.z, cache.h_bar, cache.mask
    d_comb = d_h * m
    d_z = d_comb * (h_prev - h_bar)
    d_hbar = d_comb * (1.0 - z)
    d_h_prev = d_comb * z

    # h_bar = tanh(x@U_h + (r*h_prev)@W_h + b_h)
    d_ah = d_hbar * (1.0 - h_bar * h_bar)
    grads["U_h"] += np.outer(x, d_ah)
    grads["W_h"] += np.outer(r * h_prev, d_ah)
    grads["b_h"] += d_ah
    d_rh = d_ah @ params.W_h.T
    d_r = d_rh * h_prev
    d_h_prev = d_h_prev + d_rh * r

    d_az = d_z * z * (1.0 - z)
    grads["U_z"] += np.outer(x, d_az)
    grads["W_z"] += np.outer(h_prev, d_az)
    grads["b_z"] += d_az
    d_h_prev = d_h_prev + d_az @ params.W_z.T

    d_ar = d_r * r * (1.0 - r)
    grads["U_r"] += np.outer(x, d_ar)
    grads["W_r"] += np.outer(h_prev, d_ar)
    grads["b_r"] += d_ar
    d_h_prev = d_h_prev + d_ar @ params.W_r.T

    d_x = d_ar @ params.U_r.T + d_az @ params.U_z.T + d_ah @ params.U_h.T
    return d_x, d_h_prev


def zero_grads(params: GruParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.named().items()}


def gru_backprop(
    cache: GruCache,
    d_h: np.ndarray | list[np.ndarray],
    params: GruParams,
) -> tuple[dict[str, np.ndarray], list[np.ndarray], np.ndarray]:
    """Backprop through a full cached sequence.

    d_h is either the gradient w.r.t. the final hidden state, or a list of
    per-step upstream gradients (one per cached step).
    Returns (parameter grads, d_x per step, d_h0).
    """
    n = len(cache.steps)
    if isinstance(d_h, np.ndarray):
        per_step = [np.zeros(params.hidden_dim) for _ in range(n - 1)] + [d_h]
    else:
        per_step = list(d_h)
        if len(per_step) != n:
            raise ShapeError(f"gru_backprop: {len(per_step)} upstream grads for {n} cached steps")
    grads = zero_grads(params)
    d_xs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    carry = np.zeros(params.hidden_dim)
    for t in range(n - 1, -1, -1):
        d_x, carry = gru_step_backward(cache.steps[t], per_step[t] + carry, params, grads)
        d_xs[t] = d_x
    return grads, d_xs, carry


def grad_check(
    loss_and_grad_fn,
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients to central finite differences.

    loss_and_grad_fn() must evaluate the loss at the current parameter values
    and return (loss, grads-dict keyed like params). It must be deterministic
    (freeze any dropout masks before calling). Returns the max over all
    coordinates of |a - n| / max(1e-8, |a| + |n|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise UsageError(f"grad_check eps {eps} outside [1e-7, 1e-3]")
    loss, analytic = loss_and_grad_fn()
    if not np.isfinite(loss):
        raise NumericalError("grad_check: non-finite loss")
    worst = 0.0
    for name, theta in params.items():
        a = analytic[name]
        flat = theta.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_grad_fn()
            flat[i] = orig - eps
            lm, _ = loss_and_grad_fn()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericalError(f"grad_check: non-finite loss perturbing {name}[{i}]")
            numeric = (lp - lm) / (2.0 * eps)
            ai = a.reshape(-1)[i]
            err = abs(ai - numeric) / max(1e-8, abs(ai) + abs(numeric))
            worst = max(worst, err)
    return worst
