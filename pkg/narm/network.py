"""
Forward pass and backpropagation through time.

Shapes follow the column convention: a hidden state is ``H x 1`` for one
session and ``H x n`` for a batch of ``n`` sessions. Batches are right-padded
with item index 0; a padded step carries the previous hidden state forward
unchanged and gets zero attention, so padding never changes a result.

    z_t  = sigmoid(Wz x_t + Uz h_{t-1})
    r_t  = sigmoid(Wr x_t + Ur h_{t-1})
    ĥ_t  = tanh(W x_t + U (r_t ⊙ h_{t-1}))
    h_t  = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ ĥ_t
    q_tj = v' sigmoid(A1 h_t + A2 h_j)
    c    = [h_t ; Σ_j q_tj h_j]
    S_i  = emb_i' B c,   probs = softmax(S)
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from numerics.kernels import (
    ShapeError,
    concat_rows,
    dropout_mask,
    sigmoid,
    softmax,
    tanh,
    zeros,
)

from .params import GradientSet, NarmParams

# Smallest positive normal double; the loss never takes log of anything below it.
PROB_FLOOR = np.finfo(np.float64).tiny


class IndexRangeError(IndexError):
    pass


# -----------------------------
# Containers
# -----------------------------


@dataclass(frozen=True)
class Batch:
    """Right-padded item indices (``n x T``), true lengths and optional labels."""

    items: np.ndarray
    lengths: np.ndarray
    labels: Optional[np.ndarray] = None

    @classmethod
    def pad(
        cls,
        prefixes: Sequence[Sequence[int]],
        labels: Optional[Sequence[int]] = None,
        width: Optional[int] = None,
    ) -> "Batch":
        lengths = np.array([len(p) for p in prefixes], dtype=np.int64)
        if not len(prefixes) or lengths.min() < 1:
            raise ValueError("every prefix needs at least one item")
        width = int(lengths.max()) if width is None else width
        if width < lengths.max():
            raise ValueError(f"width {width} is shorter than the longest prefix")
        items = np.zeros((len(prefixes), width), dtype=np.int64)
        for row, prefix in enumerate(prefixes):
            items[row, : len(prefix)] = prefix
        label_arr = None if labels is None else np.asarray(labels, dtype=np.int64)
        return cls(items, lengths, label_arr)

    @property
    def size(self) -> int:
        return self.items.shape[0]

    @property
    def width(self) -> int:
        return self.items.shape[1]

    def step_mask(self) -> np.ndarray:
        """``T x n`` booleans: True where step j is a real click of session b."""
        return np.arange(self.width)[:, None] < self.lengths[None, :]


@dataclass(frozen=True)
class DropoutMasks:
    """Inverted-dropout masks: ``embed`` is ``T x D x n``, ``repr`` is ``C x n``."""

    embed: np.ndarray
    repr: np.ndarray


@dataclass
class EncodedSession:
    hidden: List[np.ndarray]
    attention_weights: List[float] = field(default_factory=list)
    c_global: Optional[np.ndarray] = None
    c_local: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return len(self.hidden)


@dataclass(frozen=True)
class Prediction:
    scores: np.ndarray  # length m; position i-1 holds item i
    probs: np.ndarray


class ForwardPass(NamedTuple):
    prediction: Prediction
    loss: float
    encoded: EncodedSession
    masks: Optional[DropoutMasks]


@dataclass
class BatchCache:
    """Everything backprop needs from one batched forward pass."""

    batch: Batch
    masks: Optional[DropoutMasks]
    step_mask: np.ndarray
    inputs: List[np.ndarray]
    hidden: np.ndarray  # T x H x n (h_1..h_T)
    gates: List[Tuple[np.ndarray, np.ndarray, np.ndarray]]
    attention: Optional[np.ndarray]  # T x H x n sigmoid activations
    alpha: Optional[np.ndarray]  # T x n
    c: np.ndarray
    c_dropped: np.ndarray
    projected: Optional[np.ndarray]  # B c, bilinear decoder only
    scores: np.ndarray  # m x n
    probs: np.ndarray
    losses: Optional[np.ndarray]

    @property
    def final_hidden(self) -> np.ndarray:
        return self.hidden[-1]

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean())


# -----------------------------
# Building blocks
# -----------------------------


def _check_indices(items: np.ndarray, m: int, allow_padding: bool = False) -> None:
    low = 0 if allow_padding else 1
    if items.size and (items.min() < low or items.max() > m):
        raise IndexRangeError(f"item index outside {low}..{m}")


def _gru(params: NarmParams, x: np.ndarray, h_prev: np.ndarray):
    w = params.weights
    z_in = w["Wz"] @ x + w["Uz"] @ h_prev
    r_in = w["Wr"] @ x + w["Ur"] @ h_prev
    if params.config.use_bias:
        z_in += w["bz"]
        r_in += w["br"]
    z = sigmoid(z_in)
    r = sigmoid(r_in)
    h_in = w["W"] @ x + w["U"] @ (r * h_prev)
    if params.config.use_bias:
        h_in += w["bh"]
    h_cand = tanh(h_in)
    return (1.0 - z) * h_prev + z * h_cand, z, r, h_cand


def gru_step(params: NarmParams, x_emb: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    cfg = params.config
    if x_emb.shape[0] != cfg.embedding_dim or h_prev.shape[0] != cfg.hidden_dim:
        raise ShapeError(
            f"gru_step: x {x_emb.shape} / h {h_prev.shape} for D={cfg.embedding_dim}, H={cfg.hidden_dim}"
        )
    if x_emb.shape[1] != h_prev.shape[1]:
        raise ShapeError("gru_step: input and state column counts differ")
    return _gru(params, x_emb, h_prev)[0]


def _attention(params: NarmParams, h_t: np.ndarray, hidden: np.ndarray):
    """Scores of every ``hidden[j]`` (``T x H x n``) against ``h_t``: returns (q ``T x n``, activations)."""
    w = params.weights
    base = w["A1"] @ h_t
    if params.config.use_bias:
        base = base + w["ba"]
    act = sigmoid(base[None] + np.einsum("ij,tjn->tin", w["A2"], hidden))
    return np.einsum("i,tin->tn", w["v"][:, 0], act), act


def _attention_weights(q: np.ndarray, step_mask: np.ndarray, normalize: bool) -> np.ndarray:
    if normalize:
        return softmax(np.where(step_mask, q, -np.inf), axis=0)
    return np.where(step_mask, q, 0.0)


def attention_score(params: NarmParams, h_t: np.ndarray, h_j: np.ndarray) -> float:
    q, _ = _attention(params, h_t, h_j[None])
    return float(q[0, 0])


def _combine(params: NarmParams, c_global: np.ndarray, c_local: Optional[np.ndarray]) -> np.ndarray:
    mode = params.config.mode
    if mode == "hybrid":
        return concat_rows(c_global, c_local)
    return c_global if mode == "global" else c_local


def _scores(params: NarmParams, c: np.ndarray):
    """Decoder scores ``m x n`` and, for the bilinear decoder, the projection ``B c``."""
    w = params.weights
    if params.config.decoder == "bilinear":
        projected = w["B"] @ c
        scores = w["Emb"][1:] @ projected
    else:
        projected = None
        scores = w["Wout"] @ c
    if params.config.use_bias:
        scores = scores + w["bo"]
    return scores, projected


def draw_masks(
    params: NarmParams,
    rng: np.random.Generator,
    width: int,
    n: int = 1,
    keep_embed: float = 0.75,
    keep_repr: float = 0.5,
) -> DropoutMasks:
    cfg = params.config
    return DropoutMasks(
        embed=dropout_mask(rng, (width, cfg.embedding_dim, n), keep_embed),
        repr=dropout_mask(rng, (cfg.repr_dim, n), keep_repr),
    )


# -----------------------------
# Single-session operations
# -----------------------------


def encode(
    params: NarmParams,
    prefix: Sequence[int],
    dropout: Optional[DropoutMasks] = None,
) -> EncodedSession:
    cfg = params.config
    items = np.asarray(prefix, dtype=np.int64)
    if not 1 <= items.size <= cfg.truncation:
        raise ValueError(f"prefix length {items.size} outside 1..{cfg.truncation}")
    _check_indices(items, cfg.n_items)

    h = zeros(cfg.hidden_dim)
    hidden = []
    for j, index in enumerate(items):
        x = params["Emb"][index][:, None]
        if dropout is not None:
            x = x * dropout.embed[j]
        h = gru_step(params, x, h)
        hidden.append(h)
    return EncodedSession(hidden=hidden)


def local_feature(params: NarmParams, enc: EncodedSession) -> Tuple[np.ndarray, List[float]]:
    hidden = np.stack(enc.hidden)  # t x H x 1
    q, _ = _attention(params, enc.hidden[-1], hidden)
    alpha = _attention_weights(q, np.ones_like(q, dtype=bool), params.config.attention_softmax)
    c_local = np.einsum("tn,thn->hn", alpha, hidden)
    return c_local, [float(a) for a in alpha[:, 0]]


def session_representation(params: NarmParams, enc: EncodedSession) -> EncodedSession:
    c_global = enc.hidden[-1]
    c_local, alpha = None, []
    if params.config.uses_attention:
        c_local, alpha = local_feature(params, enc)
    return replace(
        enc,
        attention_weights=alpha,
        c_global=c_global,
        c_local=c_local,
        c=_combine(params, c_global, c_local),
    )


def decode(params: NarmParams, c: np.ndarray, dropout: Optional[np.ndarray] = None) -> Prediction:
    if dropout is not None:
        c = c * dropout
    scores, _ = _scores(params, c)
    probs = softmax(scores, axis=0)
    return Prediction(scores=scores[:, 0], probs=probs[:, 0])


def loss(pred: Prediction, label: int) -> float:
    """Cross-entropy against the one-hot label: ``-log probs[label]``."""
    if not 1 <= label <= pred.probs.size:
        raise IndexRangeError(f"label {label} outside 1..{pred.probs.size}")
    return float(-np.log(max(pred.probs[label - 1], PROB_FLOOR)))


def forward(
    params: NarmParams,
    prefix: Sequence[int],
    label: int,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    *,
    keep_embed: float = 0.75,
    keep_repr: float = 0.5,
    masks: Optional[DropoutMasks] = None,
) -> ForwardPass:
    """
    encode -> session_representation -> decode -> loss.

    Train mode draws the embedding and representation dropout masks from
    ``rng`` unless ``masks`` are passed in; eval mode uses none.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and masks is None:
        if rng is None:
            raise ValueError("train mode needs an rng to draw dropout masks")
        masks = draw_masks(params, rng, len(prefix), 1, keep_embed, keep_repr)
    if mode == "eval":
        masks = None

    enc = session_representation(params, encode(params, prefix, masks))
    pred = decode(params, enc.c, None if masks is None else masks.repr)
    return ForwardPass(pred, loss(pred, label), enc, masks)


def backward(
    params: NarmParams,
    prefix: Sequence[int],
    label: int,
    fwd: ForwardPass,
) -> GradientSet:
    """Exact gradients of ``fwd.loss``, reusing the dropout masks of that pass."""
    return backprop(params, run_batch(params, Batch.pad([prefix], [label]), fwd.masks))


# -----------------------------
# Batched forward / backward
# -----------------------------


def run_batch(
    params: NarmParams,
    batch: Batch,
    masks: Optional[DropoutMasks] = None,
) -> BatchCache:
    cfg = params.config
    w = params.weights
    _check_indices(batch.items, cfg.n_items, allow_padding=True)
    step_mask = batch.step_mask()
    n = batch.size

    h = zeros(cfg.hidden_dim, n)
    inputs, states, gates = [], [], []
    for j in range(batch.width):
        x = w["Emb"][batch.items[:, j]].T
        if masks is not None:
            x = x * masks.embed[j]
        h_new, z, r, h_cand = _gru(params, x, h)
        h = np.where(step_mask[j], h_new, h)
        inputs.append(x)
        gates.append((z, r, h_cand))
        states.append(h)
    hidden = np.stack(states)
    h_t = hidden[-1]

    act = alpha = c_local = None
    if cfg.uses_attention:
        q, act = _attention(params, h_t, hidden)
        alpha = _attention_weights(q, step_mask, cfg.attention_softmax)
        c_local = np.einsum("tn,thn->hn", alpha, hidden)
    c = _combine(params, h_t, c_local)
    c_dropped = c if masks is None else c * masks.repr

    scores, projected = _scores(params, c_dropped)
    probs = softmax(scores, axis=0)
    losses = None
    if batch.labels is not None:
        _check_indices(batch.labels, cfg.n_items)
        picked = probs[batch.labels - 1, np.arange(n)]
        losses = -np.log(np.maximum(picked, PROB_FLOOR))

    return BatchCache(
        batch=batch,
        masks=masks,
        step_mask=step_mask,
        inputs=inputs,
        hidden=hidden,
        gates=gates,
        attention=act,
        alpha=alpha,
        c=c,
        c_dropped=c_dropped,
        projected=projected,
        scores=scores,
        probs=probs,
        losses=losses,
    )


def backprop(params: NarmParams, cache: BatchCache) -> GradientSet:
    """Gradients of the batch mean loss with respect to every parameter block."""
    cfg = params.config
    w = params.weights
    grads = GradientSet.zeros_like(params)
    g = grads.blocks
    batch = cache.batch
    n, width, hdim = batch.size, batch.width, cfg.hidden_dim

    # Decoder.
    d_scores = cache.probs.copy()
    d_scores[batch.labels - 1, np.arange(n)] -= 1.0
    d_scores /= n
    if cfg.use_bias:
        g["bo"] += d_scores.sum(axis=1, keepdims=True)
    if cfg.decoder == "bilinear":
        g["Emb"][1:] += d_scores @ cache.projected.T
        d_projected = w["Emb"][1:].T @ d_scores
        g["B"] += d_projected @ cache.c_dropped.T
        d_c = w["B"].T @ d_projected
    else:
        g["Wout"] += d_scores @ cache.c_dropped.T
        d_c = w["Wout"].T @ d_scores
    if cache.masks is not None:
        d_c = d_c * cache.masks.repr

    # Session features.
    d_hidden = np.zeros_like(cache.hidden)
    d_final = np.zeros((hdim, n))
    if cfg.mode == "hybrid":
        d_global, d_local = d_c[:hdim], d_c[hdim:]
    elif cfg.mode == "global":
        d_global, d_local = d_c, None
    else:
        d_global, d_local = None, d_c
    if d_global is not None:
        d_final += d_global

    if d_local is not None:
        alpha, act, hidden = cache.alpha, cache.attention, cache.hidden
        d_alpha = np.einsum("hn,thn->tn", d_local, hidden)
        d_hidden += alpha[:, None, :] * d_local[None]
        if cfg.attention_softmax:
            d_q = alpha * (d_alpha - (alpha * d_alpha).sum(axis=0, keepdims=True))
        else:
            d_q = np.where(cache.step_mask, d_alpha, 0.0)
        d_act = w["v"][None] * d_q[:, None, :]
        d_pre = d_act * act * (1.0 - act)
        g["v"] += np.einsum("tin,tn->i", act, d_q)[:, None]
        g["A1"] += np.einsum("tin,jn->ij", d_pre, cache.final_hidden)
        g["A2"] += np.einsum("tin,tjn->ij", d_pre, hidden)
        if cfg.use_bias:
            g["ba"] += d_pre.sum(axis=(0, 2))[:, None]
        d_final += w["A1"].T @ d_pre.sum(axis=0)
        d_hidden += np.einsum("ij,tin->tjn", w["A2"], d_pre)

    d_hidden[-1] += d_final

    # Through time.
    carry = np.zeros((hdim, n))
    for j in reversed(range(width)):
        d_h = d_hidden[j] + carry
        live = cache.step_mask[j]
        live_f = live.astype(np.float64)
        x = cache.inputs[j]
        h_prev = cache.hidden[j - 1] if j else np.zeros((hdim, n))
        z, r, h_cand = cache.gates[j]

        d_pre_h = d_h * z * (1.0 - h_cand**2) * live_f
        d_pre_z = d_h * (h_cand - h_prev) * z * (1.0 - z) * live_f
        d_rh = w["U"].T @ d_pre_h
        d_pre_r = d_rh * h_prev * r * (1.0 - r)

        g["W"] += d_pre_h @ x.T
        g["U"] += d_pre_h @ (r * h_prev).T
        g["Wz"] += d_pre_z @ x.T
        g["Uz"] += d_pre_z @ h_prev.T
        g["Wr"] += d_pre_r @ x.T
        g["Ur"] += d_pre_r @ h_prev.T
        if cfg.use_bias:
            g["bh"] += d_pre_h.sum(axis=1, keepdims=True)
            g["bz"] += d_pre_z.sum(axis=1, keepdims=True)
            g["br"] += d_pre_r.sum(axis=1, keepdims=True)

        d_prev = (
            d_h * (1.0 - z)
            + d_rh * r
            + w["Uz"].T @ d_pre_z
            + w["Ur"].T @ d_pre_r
        )
        carry = np.where(live, d_prev, d_h)

        d_x = w["W"].T @ d_pre_h + w["Wz"].T @ d_pre_z + w["Wr"].T @ d_pre_r
        if cache.masks is not None:
            d_x = d_x * cache.masks.embed[j]
        np.add.at(g["Emb"], batch.items[:, j], d_x.T)

    g["Emb"][0] = 0.0
    return grads
