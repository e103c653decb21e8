"""Training objectives: values plus analytic gradients w.r.t. raw inputs.

All gradients are taken with respect to the *raw* (pre-normalization)
representation rows; normalization is part of each loss, chained through
the Jacobian d(x/||x||)/dx = (I - x_n x_n^T) / ||x||.

Numerical conventions: -log(sigmoid(z)) is computed as softplus(-z);
log-mean-exp uses max-subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetSplit
from .encoders import EmbeddingTable
from .errors import DegenerateEmbedding, InsufficientBatch, NoNegativeAvailable


@dataclass(frozen=True)
class UniformityConfig:
    """Scale of the pairwise Gaussian potential exp(-t * dist^2); fixed to 2."""

    t: float = 2.0

    def __post_init__(self):
        if self.t != 2.0:
            raise ValueError("the Gaussian-potential scale is fixed to 2")


UNIFORMITY_SCALE = UniformityConfig().t


@dataclass
class LossOutput:
    """Loss value and gradients, shaped like the corresponding inputs.

    Losses over a single matrix (uniform_loss) carry their gradient in
    grad_user; grad_neg is populated only by bpr_loss.
    """

    value: float
    grad_user: np.ndarray | None = None
    grad_item: np.ndarray | None = None
    grad_neg: np.ndarray | None = None


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x), stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize, returning (unit rows, norms as (n,1))."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        raise DegenerateEmbedding("zero or non-finite row norm in loss input")
    return x / norms, norms


def _chain(grad_xn: np.ndarray, xn: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. unit rows back to the raw rows."""
    radial = np.sum(grad_xn * xn, axis=1, keepdims=True)
    return (grad_xn - radial * xn) / norms


def align_loss(u_reps: np.ndarray, i_reps: np.ndarray) -> LossOutput:
    """Mean squared distance between normalized positive pairs; range [0, 4]."""
    u_reps = np.atleast_2d(u_reps)
    i_reps = np.atleast_2d(i_reps)
    if u_reps.shape != i_reps.shape:
        raise ValueError("paired batches must have identical shapes")
    n = u_reps.shape[0]
    if n < 1:
        raise ValueError("alignment needs at least one pair")
    xn, xnorm = _normalize(u_reps)
    yn, ynorm = _normalize(i_reps)
    diff = xn - yn
    value = float(np.mean(np.sum(diff * diff, axis=1)))
    g = (2.0 / n) * diff
    return LossOutput(
        value=value,
        grad_user=_chain(g, xn, xnorm),
        grad_item=_chain(-g, yn, ynorm),
    )


def uniform_loss(reps: np.ndarray) -> LossOutput:
    """log mean over distinct unordered row pairs of exp(-2 ||x_j - x_k||^2).

    Range [-8, 0]; 0 iff all normalized rows coincide. The gradient for the
    single input matrix is returned in grad_user.
    """
    reps = np.atleast_2d(reps)
    n = reps.shape[0]
    if n < 2:
        raise InsufficientBatch("uniformity needs at least two rows")
    xn, norms = _normalize(reps)
    gram = xn @ xn.T
    d2 = np.clip(2.0 - 2.0 * gram, 0.0, None)
    logits = -UNIFORMITY_SCALE * d2
    np.fill_diagonal(logits, -np.inf)
    m = float(np.max(logits))
    weights = np.exp(logits - m)  # exp(-inf - m) = 0 on the diagonal
    total = weights.sum() / 2.0  # symmetric, unordered pairs counted once
    n_pairs = n * (n - 1) / 2.0
    value = m + float(np.log(total / n_pairs))

    # d value / d x_j = (-4 / W) * sum_k w_jk (x_j - x_k), with w_jk / W
    # computed from the max-shifted weights.
    row_sum = weights.sum(axis=1, keepdims=True)
    g = (-2.0 * UNIFORMITY_SCALE / total) * (xn * row_sum - weights @ xn)
    return LossOutput(value=value, grad_user=_chain(g, xn, norms))


def direct_au_loss(u_reps: np.ndarray, i_reps: np.ndarray, gamma: float) -> LossOutput:
    """Alignment plus gamma-weighted mean of the two in-batch uniformities."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    a = align_loss(u_reps, i_reps)
    uu = uniform_loss(u_reps)
    ui = uniform_loss(i_reps)
    return LossOutput(
        value=a.value + gamma * (uu.value + ui.value) / 2.0,
        grad_user=a.grad_user + (gamma / 2.0) * uu.grad_user,
        grad_item=a.grad_item + (gamma / 2.0) * ui.grad_user,
    )


def bpr_loss(
    u_reps: np.ndarray,
    i_pos_reps: np.ndarray,
    i_neg_reps: np.ndarray,
    score: str = "dot",
) -> LossOutput:
    """Pairwise ranking loss: mean of -log sigmoid(s(u,i) - s(u,i-)).

    score 'dot' uses raw dot products (the training setting); 'cosine'
    normalizes all three inputs first (used by the theoretical harness).
    """
    u_reps = np.atleast_2d(u_reps)
    i_pos_reps = np.atleast_2d(i_pos_reps)
    i_neg_reps = np.atleast_2d(i_neg_reps)
    if not (u_reps.shape == i_pos_reps.shape == i_neg_reps.shape):
        raise ValueError("user, positive, and negative batches must align")
    n = u_reps.shape[0]
    if score == "dot":
        delta = np.sum(u_reps * (i_pos_reps - i_neg_reps), axis=1)
        value = float(np.mean(softplus(-delta)))
        c = (-_sigmoid(-delta) / n)[:, None]
        return LossOutput(
            value=value,
            grad_user=c * (i_pos_reps - i_neg_reps),
            grad_item=c * u_reps,
            grad_neg=-c * u_reps,
        )
    if score == "cosine":
        xn, xnorm = _normalize(u_reps)
        pn, pnorm = _normalize(i_pos_reps)
        qn, qnorm = _normalize(i_neg_reps)
        delta = np.sum(xn * (pn - qn), axis=1)
        value = float(np.mean(softplus(-delta)))
        c = (-_sigmoid(-delta) / n)[:, None]
        return LossOutput(
            value=value,
            grad_user=_chain(c * (pn - qn), xn, xnorm),
            grad_item=_chain(c * xn, pn, pnorm),
            grad_neg=_chain(-c * xn, qn, qnorm),
        )
    raise ValueError(f"unknown score function {score!r}")


def sample_negatives(
    split: DatasetSplit,
    users: np.ndarray,
    strategy: str,
    table: EmbeddingTable | None = None,
    candidates: int = 32,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One negative item per user, drawn outside the user's training items.

    'uniform' rejection-samples a single item; 'dynamic' rejection-samples
    `candidates` items and picks one with probability proportional to the
    softmax of their predicted dot scores (harder negatives more likely).
    """
    if rng is None:
        raise ValueError("an explicit rng is required for reproducibility")
    if strategy not in ("uniform", "dynamic"):
        raise ValueError(f"unknown negative-sampling strategy {strategy!r}")
    if strategy == "dynamic" and table is None:
        raise ValueError("dynamic sampling needs an embedding table for scoring")
    if candidates < 1:
        raise ValueError(f"candidates must be >= 1, got {candidates}")

    n_items = split.train.n_items
    item_sets = split.train_item_sets
    out = np.empty(len(users), dtype=np.int64)
    for k, u in enumerate(np.asarray(users, dtype=np.int64).tolist()):
        interacted = item_sets[u]
        if len(interacted) >= n_items:
            raise NoNegativeAvailable(f"user {u} interacted with every item")
        if strategy == "uniform":
            out[k] = _draw_outside(rng, n_items, interacted)
        else:
            cands = np.array(
                [_draw_outside(rng, n_items, interacted) for _ in range(candidates)],
                dtype=np.int64,
            )
            scores = table.item_emb[cands] @ table.user_emb[u]
            probs = np.exp(scores - scores.max())
            probs /= probs.sum()
            out[k] = int(rng.choice(cands, p=probs))
    return out


def _draw_outside(rng: np.random.Generator, n_items: int, interacted: frozenset) -> int:
    while True:
        j = int(rng.integers(0, n_items))
        if j not in interacted:
            return j
