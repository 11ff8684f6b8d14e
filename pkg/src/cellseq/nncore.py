"""Minimal neural numeric core: LSTM cell, softmax cross-entropy, Adam,
and a finite-difference gradient checker.

Everything is float64 numpy with hand-written backward passes; the model
module composes these pieces into full sequence models. Parameters travel
as plain ``dict[str, np.ndarray]`` maps.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

Params = dict[str, np.ndarray]

CHECKPOINT_VERSION = "ckpt-v1"


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax over the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss -log softmax(logits)[label] and its gradient wrt the logits."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 1:
        raise ValueError("logits must be a vector")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    z = logits - np.max(logits)
    logsumexp = np.log(np.sum(np.exp(z)))
    loss = float(logsumexp - z[label])
    grad = np.exp(z - logsumexp)
    grad[label] -= 1.0
    return loss, grad


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _gate_split(z: np.ndarray, d: int):
    return z[..., 0:d], z[..., d : 2 * d], z[..., 2 * d : 3 * d], z[..., 3 * d : 4 * d]


def lstm_step(
    x: np.ndarray, h: np.ndarray, c: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step: gates i, f, o sigmoid, candidate g tanh,
    c' = f*c + i*g, h' = o*tanh(c').

    Accepts either vectors or [batch, dim] matrices. ``W`` is
    [input_dim, 4*d_h], ``U`` is [d_h, 4*d_h], gate order i, f, o, g.
    """
    d = h.shape[-1]
    if W.shape != (x.shape[-1], 4 * d) or U.shape != (d, 4 * d) or b.shape != (4 * d,):
        raise ValueError(
            f"inconsistent LSTM shapes: x{x.shape} h{h.shape} W{W.shape} U{U.shape} b{b.shape}"
        )
    if c.shape != h.shape:
        raise ValueError("hidden and cell state shapes must match")
    z = x @ W + h @ U + b
    zi, zf, zo, zg = _gate_split(z, d)
    i, f, o, g = sigmoid(zi), sigmoid(zf), sigmoid(zo), np.tanh(zg)
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    return h2, c2


def lstm_step_cached(x, h, c, W, U, b):
    """lstm_step plus the intermediate values needed for the backward pass."""
    d = h.shape[-1]
    z = x @ W + h @ U + b
    zi, zf, zo, zg = _gate_split(z, d)
    i, f, o, g = sigmoid(zi), sigmoid(zf), sigmoid(zo), np.tanh(zg)
    c2 = f * c + i * g
    tanh_c2 = np.tanh(c2)
    h2 = o * tanh_c2
    cache = {"x": x, "h": h, "c": c, "i": i, "f": f, "o": o, "g": g, "tanh_c2": tanh_c2}
    return h2, c2, cache


def lstm_backward(cache, dh2, dc2, W, U, gW, gU, gb):
    """Backward through one cached step.

    Accumulates into gW/gU/gb and returns (dx, dh, dc) for the inputs.
    """
    i, f, o, g = cache["i"], cache["f"], cache["o"], cache["g"]
    tanh_c2 = cache["tanh_c2"]
    do = dh2 * tanh_c2
    dc_total = dc2 + dh2 * o * (1.0 - tanh_c2 * tanh_c2)
    df = dc_total * cache["c"]
    dc = dc_total * f
    di = dc_total * g
    dg = dc_total * i
    dzi = di * i * (1.0 - i)
    dzf = df * f * (1.0 - f)
    dzo = do * o * (1.0 - o)
    dzg = dg * (1.0 - g * g)
    dz = np.concatenate([dzi, dzf, dzo, dzg], axis=-1)
    gW += np.outer(cache["x"], dz)
    gU += np.outer(cache["h"], dz)
    gb += dz
    dx = dz @ W.T
    dh = dz @ U.T
    return dx, dh, dc


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""

    m: Params
    v: Params
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_update(params: Params, grads: Params, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam step, applied to the parameters in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"diverged: non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        p = params[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def global_norm(grads: Params) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_global_norm(grads: Params, max_norm: float) -> bool:
    """Scale all gradients down to the given global norm. True if clipping fired."""
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return False
    scale = max_norm / norm
    for g in grads.values():
        g *= scale
    return True


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-s, s, size=shape)


LossAndGrads = Callable[[Params], tuple[float, Params]]


def grad_check(fn: LossAndGrads, params: Params, eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``fn`` maps parameters to (scalar loss, gradient dict). The relative
    error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    _, analytic = fn(params)
    worst = 0.0
    for name, p in params.items():
        a = analytic[name]
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            plus, _ = fn(params)
            flat[idx] = orig - eps
            minus, _ = fn(params)
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * eps)
            ai = float(a.reshape(-1)[idx])
            err = abs(ai - numeric) / max(1e-8, abs(ai) + abs(numeric))
            worst = max(worst, err)
    return worst


def save_checkpoint(path: str | Path, params: Params, meta: Mapping) -> None:
    """Versioned container: a JSON header naming each array and its shape,
    followed by the raw little-endian float64 values in header order.

    Byte-identical for identical contents (no timestamps), so re-running a
    training stage with the same inputs reproduces the file exactly.
    """
    meta = dict(meta)
    meta["format"] = CHECKPOINT_VERSION
    meta["params"] = [
        {"name": name, "shape": list(np.asarray(p).shape)} for name, p in sorted(params.items())
    ]
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(b"%s\n" % CHECKPOINT_VERSION.encode("ascii"))
        fh.write(len(header).to_bytes(8, "big"))
        fh.write(header)
        for entry in meta["params"]:
            arr = np.ascontiguousarray(params[entry["name"]], dtype="<f8")
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> tuple[Params, dict]:
    with open(path, "rb") as fh:
        magic = fh.readline().strip().decode("ascii")
        if magic != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format: {magic!r}")
        header_len = int.from_bytes(fh.read(8), "big")
        meta = json.loads(fh.read(header_len).decode("utf-8"))
        params: Params = {}
        for entry in meta["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").copy()
            params[entry["name"]] = data.reshape(shape)
    return params, meta
