"""The two sequence generators.

``RnnModel`` is the baseline: embedding -> LSTM -> decoder softmax over the
vocabulary, initial state zero. ``ArnnModel`` conditions on the pre-trip
traffic state: per-cell features from the [N, 10] accumulation window set
the initial LSTM state and, at every step, an additive-attention context
vector is concatenated to the token embedding at the LSTM input.

Training is teacher-forced per-sequence SGD with Adam; generation samples
the next token from the emitted multinomial until #end.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nncore
from .nncore import Params, lstm_backward, lstm_step_cached, softmax, softmax_cross_entropy
from .tokens import END, START, Token, Vocab

TRAFFIC_WINDOW_MINUTES = 10


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelDims:
    """Layer sizes; the traffic-feature and attention dims default to d_h."""

    d_e: int
    d_h: int
    d_f: int | None = None
    d_a: int | None = None

    def __post_init__(self):
        if self.d_e < 1 or self.d_h < 1:
            raise ValueError("dimensions must be >= 1")

    @property
    def feat(self) -> int:
        return self.d_f if self.d_f is not None else self.d_h

    @property
    def attn(self) -> int:
        return self.d_a if self.d_a is not None else self.d_h


class RnnModel:
    """Baseline recurrent generator over the cell vocabulary."""

    kind = "rnn"

    def __init__(self, vocab: Vocab, dims: ModelDims, params: Params):
        self.vocab = vocab
        self.dims = dims
        self.params = params

    @property
    def input_dim(self) -> int:
        return self.dims.d_e

    @classmethod
    def init(cls, vocab: Vocab, dims: ModelDims, seed: int = 0) -> "RnnModel":
        rng = np.random.default_rng(seed)
        params = _base_params(rng, len(vocab), dims, input_dim=dims.d_e)
        return cls(vocab, dims, params)


class ArnnModel(RnnModel):
    """Attention-conditioned generator; LSTM input is concat(embed, context)."""

    kind = "arnn"

    @property
    def input_dim(self) -> int:
        return self.dims.d_e + self.dims.feat

    @classmethod
    def init(cls, vocab: Vocab, dims: ModelDims, seed: int = 0) -> "ArnnModel":
        rng = np.random.default_rng(seed)
        d_f, d_a = dims.feat, dims.attn
        params = _base_params(rng, len(vocab), dims, input_dim=dims.d_e + d_f)
        params["traffic_W"] = nncore.uniform_init(rng, (TRAFFIC_WINDOW_MINUTES, d_f), TRAFFIC_WINDOW_MINUTES)
        params["attn_W"] = nncore.uniform_init(rng, (dims.d_h, d_a), dims.d_h)
        params["attn_U"] = nncore.uniform_init(rng, (d_f, d_a), d_f)
        params["attn_v"] = nncore.uniform_init(rng, (d_a,), d_a)
        params["init_Wh"] = nncore.uniform_init(rng, (d_f, dims.d_h), d_f)
        params["init_Wc"] = nncore.uniform_init(rng, (d_f, dims.d_h), d_f)
        return cls(vocab, dims, params)


def _base_params(rng: np.random.Generator, v: int, dims: ModelDims, input_dim: int) -> Params:
    d_h = dims.d_h
    params = {
        "embed": nncore.uniform_init(rng, (v, dims.d_e), dims.d_e),
        "lstm_W": nncore.uniform_init(rng, (input_dim, 4 * d_h), input_dim),
        "lstm_U": nncore.uniform_init(rng, (d_h, 4 * d_h), d_h),
        "lstm_b": np.zeros(4 * d_h),
        "dec_W": nncore.uniform_init(rng, (d_h, v), d_h),
        "dec_b": np.zeros(v),
    }
    params["lstm_b"][d_h : 2 * d_h] = 1.0  # forget gate open at init
    return params


# ---------------------------------------------------------------------------
# forward passes


def rnn_forward(x: Sequence[Token], model: RnnModel) -> np.ndarray:
    """Per-step next-token probability vectors, shape [len(x), V]."""
    ids = np.asarray(model.vocab.encode(list(x)), dtype=np.intp)
    return _rnn_forward_ids(ids, model)


def _rnn_forward_ids(ids: np.ndarray, model: RnnModel) -> np.ndarray:
    p = model.params
    d_h = model.dims.d_h
    h = np.zeros(d_h)
    c = np.zeros(d_h)
    out = np.empty((len(ids), len(model.vocab)))
    for i, tid in enumerate(ids):
        x = p["embed"][tid]
        h, c = nncore.lstm_step(x, h, c, p["lstm_W"], p["lstm_U"], p["lstm_b"])
        out[i] = softmax(h @ p["dec_W"] + p["dec_b"])
    return out


def encode_traffic(traffic: np.ndarray, model: ArnnModel) -> np.ndarray:
    """Per-cell features tanh(traffic @ W_f), shape [N, d_f]."""
    traffic = np.asarray(traffic, dtype=float)
    if traffic.ndim != 2 or traffic.shape[1] != TRAFFIC_WINDOW_MINUTES:
        raise ValueError(f"traffic tensor must be [N, {TRAFFIC_WINDOW_MINUTES}], got {traffic.shape}")
    return np.tanh(traffic @ model.params["traffic_W"])


def attention_init_state(features: np.ndarray, model: ArnnModel) -> tuple[np.ndarray, np.ndarray]:
    """Initial (hidden, cell) state: tanh maps of the mean-pooled features."""
    f_mean = features.mean(axis=0)
    h0 = np.tanh(f_mean @ model.params["init_Wh"])
    c0 = np.tanh(f_mean @ model.params["init_Wc"])
    return h0, c0


def attention_step(s_prev: np.ndarray, features: np.ndarray, model: ArnnModel) -> tuple[np.ndarray, np.ndarray]:
    """Additive attention over cells: weights alpha and context C.

    Scores e_j = v . tanh(s_prev @ W_a + features_j @ U_a); alpha is their
    softmax and C the alpha-weighted sum of features.
    """
    p = model.params
    t = np.tanh(s_prev @ p["attn_W"] + features @ p["attn_U"])
    e = t @ p["attn_v"]
    alpha = softmax(e)
    context = alpha @ features
    return alpha, context


def arnn_forward(
    x: Sequence[Token], traffic: np.ndarray, model: ArnnModel
) -> tuple[np.ndarray, np.ndarray]:
    """Probability vectors [len(x), V] and attention map [len(x), N]."""
    ids = np.asarray(model.vocab.encode(list(x)), dtype=np.intp)
    return _arnn_forward_probs(model, ids, traffic)


# ---------------------------------------------------------------------------
# loss and manual backprop


def loss_and_grads(
    model: RnnModel, x_ids: np.ndarray, y_ids: np.ndarray, traffic: np.ndarray | None = None
) -> tuple[float, Params]:
    """Summed cross-entropy over the sequence and gradients for every parameter."""
    if model.kind == "arnn":
        if traffic is None:
            raise ValueError("traffic tensor required for the attention model")
        return _arnn_loss_and_grads(model, x_ids, y_ids, traffic)
    return _rnn_loss_and_grads(model, x_ids, y_ids)


def _zero_grads(params: Params) -> Params:
    return {k: np.zeros_like(p) for k, p in params.items()}


def _rnn_loss_and_grads(model, x_ids, y_ids):
    p = model.params
    d_h = model.dims.d_h
    h = np.zeros(d_h)
    c = np.zeros(d_h)
    loss = 0.0
    steps = []
    for i in range(len(x_ids)):
        x = p["embed"][x_ids[i]]
        h, c, cache = lstm_step_cached(x, h, c, p["lstm_W"], p["lstm_U"], p["lstm_b"])
        logits = h @ p["dec_W"] + p["dec_b"]
        li, dlogits = softmax_cross_entropy(logits, int(y_ids[i]))
        loss += li
        steps.append((cache, dlogits, h))

    grads = _zero_grads(p)
    dh_next = np.zeros(d_h)
    dc_next = np.zeros(d_h)
    for i in reversed(range(len(x_ids))):
        cache, dlogits, h_i = steps[i]
        grads["dec_W"] += np.outer(h_i, dlogits)
        grads["dec_b"] += dlogits
        dh = dlogits @ p["dec_W"].T + dh_next
        dx, dh_next, dc_next = lstm_backward(
            cache, dh, dc_next, p["lstm_W"], p["lstm_U"],
            grads["lstm_W"], grads["lstm_U"], grads["lstm_b"],
        )
        grads["embed"][x_ids[i]] += dx
    return loss, grads


def _arnn_loss_and_grads(model, x_ids, y_ids, traffic):
    p = model.params
    d_e = model.dims.d_e
    d_h = model.dims.d_h
    traffic = np.asarray(traffic, dtype=float)

    pre_f = traffic @ p["traffic_W"]
    features = np.tanh(pre_f)
    n_cells = features.shape[0]
    f_mean = features.mean(axis=0)
    h_init = np.tanh(f_mean @ p["init_Wh"])
    c_init = np.tanh(f_mean @ p["init_Wc"])

    h, c = h_init, c_init
    loss = 0.0
    steps = []
    for i in range(len(x_ids)):
        s_prev = h
        t_mat = np.tanh(s_prev @ p["attn_W"] + features @ p["attn_U"])
        e = t_mat @ p["attn_v"]
        alpha = softmax(e)
        context = alpha @ features
        x_in = np.concatenate([p["embed"][x_ids[i]], context])
        h, c, cache = lstm_step_cached(x_in, h, c, p["lstm_W"], p["lstm_U"], p["lstm_b"])
        logits = h @ p["dec_W"] + p["dec_b"]
        li, dlogits = softmax_cross_entropy(logits, int(y_ids[i]))
        loss += li
        steps.append((cache, dlogits, h, alpha, t_mat, s_prev))

    grads = _zero_grads(p)
    dh_next = np.zeros(d_h)
    dc_next = np.zeros(d_h)
    d_features = np.zeros_like(features)
    for i in reversed(range(len(x_ids))):
        cache, dlogits, h_i, alpha, t_mat, s_prev = steps[i]
        grads["dec_W"] += np.outer(h_i, dlogits)
        grads["dec_b"] += dlogits
        dh = dlogits @ p["dec_W"].T + dh_next
        dxc, dh_prev, dc_prev = lstm_backward(
            cache, dh, dc_next, p["lstm_W"], p["lstm_U"],
            grads["lstm_W"], grads["lstm_U"], grads["lstm_b"],
        )
        grads["embed"][x_ids[i]] += dxc[:d_e]
        d_context = dxc[d_e:]

        # attention backward: context = alpha @ features, alpha = softmax(e)
        d_alpha = features @ d_context
        d_features += np.outer(alpha, d_context)
        de = alpha * (d_alpha - alpha @ d_alpha)
        grads["attn_v"] += t_mat.T @ de
        d_pre = np.outer(de, p["attn_v"]) * (1.0 - t_mat * t_mat)
        d_pre_sum = d_pre.sum(axis=0)
        grads["attn_W"] += np.outer(s_prev, d_pre_sum)
        grads["attn_U"] += features.T @ d_pre
        d_features += d_pre @ p["attn_U"].T
        dh_next = dh_prev + d_pre_sum @ p["attn_W"].T
        dc_next = dc_prev

    d_pre_h = dh_next * (1.0 - h_init * h_init)
    grads["init_Wh"] += np.outer(f_mean, d_pre_h)
    d_f_mean = d_pre_h @ p["init_Wh"].T
    d_pre_c = dc_next * (1.0 - c_init * c_init)
    grads["init_Wc"] += np.outer(f_mean, d_pre_c)
    d_f_mean += d_pre_c @ p["init_Wc"].T
    d_features += d_f_mean[None, :] / n_cells

    d_pre_f = d_features * (1.0 - features * features)
    grads["traffic_W"] += traffic.T @ d_pre_f
    return loss, grads


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainingExample:
    x_ids: np.ndarray
    y_ids: np.ndarray
    traffic: np.ndarray | None = None


def make_example(vocab: Vocab, tokens: Sequence[Token], traffic: np.ndarray | None = None) -> TrainingExample:
    """Teacher-forcing example from a full #start..#end token sequence."""
    ids = np.asarray(vocab.encode(list(tokens)), dtype=np.intp)
    if len(ids) < 3:
        raise ValueError("empty journey")
    return TrainingExample(x_ids=ids[:-1], y_ids=ids[1:], traffic=traffic)


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)  # mean per-step loss
    clip_events: int = 0


def train(
    model: RnnModel,
    examples: Sequence[TrainingExample],
    lr: float,
    epochs: int,
    seed: int = 0,
    clip_norm: float | None = 5.0,
    shuffle: bool = True,
    batch_size: int = 1,
) -> TrainResult:
    """Teacher-forced training: one Adam update per batch of sequences.

    The default batch size of 1 is plain per-sequence SGD; larger batches
    accumulate gradients over whole sequences before stepping.
    ``clip_norm=None`` disables gradient clipping. Order of sequences is
    reshuffled each epoch from the given seed.
    """
    if not examples:
        raise ValueError("no training examples")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    state = nncore.AdamState.zeros_like(model.params)
    rng = np.random.default_rng(seed)
    result = TrainResult()
    order = np.arange(len(examples))
    for epoch in range(epochs):
        if shuffle:
            order = rng.permutation(len(examples))
        total = 0.0
        steps = 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grads: Params | None = None
            for offset, idx in enumerate(batch):
                ex = examples[idx]
                loss, g = loss_and_grads(model, ex.x_ids, ex.y_ids, ex.traffic)
                if not np.isfinite(loss):
                    raise TrainingDiverged(f"diverged at epoch {epoch} step {start + offset}")
                total += loss
                steps += len(ex.x_ids)
                if grads is None:
                    grads = g
                else:
                    for name in grads:
                        grads[name] += g[name]
            if clip_norm is not None and nncore.clip_global_norm(grads, clip_norm):
                result.clip_events += 1
            nncore.adam_update(model.params, grads, state, lr)
        result.epoch_losses.append(total / steps)
    return result


def mean_loss(model: RnnModel, examples: Sequence[TrainingExample]) -> float:
    """Mean per-step cross-entropy over a set of sequences (no updates)."""
    total = 0.0
    steps = 0
    for ex in examples:
        if model.kind == "arnn":
            probs, _ = _arnn_forward_probs(model, ex.x_ids, ex.traffic)
        else:
            probs = _rnn_forward_ids(ex.x_ids, model)
        idx = np.arange(len(ex.y_ids))
        total += float(-np.log(probs[idx, ex.y_ids]).sum())
        steps += len(ex.x_ids)
    return total / steps


def _arnn_forward_probs(model, ids, traffic):
    if traffic is None:
        raise ValueError("traffic tensor required for the attention model")
    p = model.params
    features = encode_traffic(traffic, model)
    h, c = attention_init_state(features, model)
    probs = np.empty((len(ids), len(model.vocab)))
    alphas = np.empty((len(ids), features.shape[0]))
    for i, tid in enumerate(ids):
        alpha, context = attention_step(h, features, model)
        x_in = np.concatenate([p["embed"][tid], context])
        h, c = nncore.lstm_step(x_in, h, c, p["lstm_W"], p["lstm_U"], p["lstm_b"])
        probs[i] = softmax(h @ p["dec_W"] + p["dec_b"])
        alphas[i] = alpha
    return probs, alphas


# ---------------------------------------------------------------------------
# generation


@dataclass
class GenerationResult:
    """Sampled continuation plus the per-step distributions that produced it."""

    tokens: list[Token]
    step_probs: list[np.ndarray]
    attention: list[np.ndarray] | None
    terminated: bool

    @property
    def cells(self) -> list[int]:
        return [t for t in self.tokens if isinstance(t, int)]


def default_max_len(reference_len: int) -> int:
    """Generation cap: four times the reference length, at most 100 tokens."""
    return min(100, 4 * reference_len)


def _sample(probs: np.ndarray, u: float) -> int:
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(idx, probs.shape[0] - 1)


def generate(
    model: RnnModel,
    prefix: Sequence[Token],
    seed: int | np.random.Generator,
    max_len: int,
    traffic: np.ndarray | None = None,
) -> GenerationResult:
    """Consume the prefix, then sample tokens until #end or max_len.

    Deterministic for a given seed: one uniform draw per sampled token.
    """
    results = generate_batch(model, prefix, [seed], max_len, traffic=traffic)
    return results[0]


def generate_batch(
    model: RnnModel,
    prefix: Sequence[Token],
    seeds: Sequence[int | np.random.Generator],
    max_len: int,
    traffic: np.ndarray | None = None,
) -> list[GenerationResult]:
    """Sample several continuations of one prefix, one RNG stream each.

    Candidate i consumes uniforms exactly as a lone ``generate`` call with
    ``seeds[i]`` would, so batched and sequential evaluation agree.
    """
    prefix = list(prefix)
    if not prefix or prefix[0] != START:
        raise ValueError("prefix must start with #start")
    if END in prefix:
        raise ValueError("prefix must not contain #end")
    if max_len <= len(prefix):
        raise ValueError("max_len must exceed the prefix length")
    ids = model.vocab.encode(prefix)
    k = len(seeds)
    rngs = [s if isinstance(s, np.random.Generator) else np.random.default_rng(s) for s in seeds]
    p = model.params
    d_h = model.dims.d_h
    v = len(model.vocab)
    end_id = model.vocab.end_id
    is_arnn = model.kind == "arnn"

    if is_arnn:
        if traffic is None:
            raise ValueError("traffic tensor required for the attention model")
        features = encode_traffic(traffic, model)
        fu = features @ p["attn_U"]
        h0, c0 = attention_init_state(features, model)
        h = np.tile(h0, (k, 1))
        c = np.tile(c0, (k, 1))
    else:
        features = fu = None
        h = np.zeros((k, d_h))
        c = np.zeros((k, d_h))

    out_ids = [list(ids) for _ in range(k)]
    step_probs: list[list[np.ndarray]] = [[] for _ in range(k)]
    attn: list[list[np.ndarray]] | None = [[] for _ in range(k)] if is_arnn else None
    alive = np.ones(k, dtype=bool)
    last = np.full(k, ids[0], dtype=np.intp)
    probs = np.empty((k, v))

    def step(active: np.ndarray) -> None:
        nonlocal h, c
        sel = np.flatnonzero(active)
        if is_arnn:
            pre = h[sel] @ p["attn_W"]
            t_mat = np.tanh(pre[:, None, :] + fu[None, :, :])
            e = t_mat @ p["attn_v"]
            alpha = softmax(e)
            context = alpha @ features
            x_in = np.concatenate([p["embed"][last[sel]], context], axis=1)
        else:
            alpha = None
            x_in = p["embed"][last[sel]]
        h_new, c_new = nncore.lstm_step(x_in, h[sel], c[sel], p["lstm_W"], p["lstm_U"], p["lstm_b"])
        h[sel] = h_new
        c[sel] = c_new
        pr = softmax(h_new @ p["dec_W"] + p["dec_b"])
        probs[sel] = pr
        for row, cand in enumerate(sel):
            step_probs[cand].append(pr[row])
            if attn is not None:
                attn[cand].append(alpha[row])

    # teacher-forced pass over the prefix
    for j, tid in enumerate(ids):
        last[:] = tid
        step(alive)

    # sampling loop
    while np.any(alive):
        for cand in np.flatnonzero(alive):
            tid = _sample(probs[cand], rngs[cand].random())
            out_ids[cand].append(tid)
            last[cand] = tid
            if tid == end_id or len(out_ids[cand]) >= max_len:
                alive[cand] = False
        if not np.any(alive):
            break
        step(alive)

    return [
        GenerationResult(
            tokens=model.vocab.decode(out_ids[cand]),
            step_probs=step_probs[cand],
            attention=attn[cand] if attn is not None else None,
            terminated=out_ids[cand][-1] == end_id,
        )
        for cand in range(k)
    ]


# ---------------------------------------------------------------------------
# checkpoints


def save_model(path: str | Path, model: RnnModel, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": model.kind,
        "dims": {"d_e": model.dims.d_e, "d_h": model.dims.d_h, "d_f": model.dims.d_f, "d_a": model.dims.d_a},
        "cells": list(model.vocab.cells),
    }
    if extra_meta:
        meta.update(extra_meta)
    nncore.save_checkpoint(path, model.params, meta)


def load_model(path: str | Path) -> tuple[RnnModel, dict]:
    params, meta = nncore.load_checkpoint(path)
    dims = ModelDims(**meta["dims"])
    vocab = Vocab(meta["cells"])
    cls = ArnnModel if meta["kind"] == "arnn" else RnnModel
    return cls(vocab, dims, params), meta
