"""Stacked LSTM corrector with exact hand-written backpropagation.

Parameters live in a flat dict of float64 arrays so the optimizer,
gradient clipping and finite-difference checks can iterate them
uniformly.  Keys: ``lstm{l}_Wx/Wh/b`` for the predictor stack,
``init{l}_Wx/Wh/b`` for the initializer stack and ``proj_W`` for the
hidden-to-residual projection.  Gate order inside the stacked 4H axis is
input, forget, cell, output.

The output-range constraint is a scaled tanh: bounded dimensions return
beta * tanh(raw / beta), which stays strictly inside (-beta, beta) and is
smooth, so the multi-step training signal passes through it.
"""

import math
from dataclasses import dataclass

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

def init_lstm_stack(rng, prefix, n_layers, n_hidden, input_dim, params):
    """Uniform(+-1/sqrt(n_hidden)) weights; forget bias 1, other biases 0."""
    bound = 1.0 / math.sqrt(n_hidden)
    in_dim = input_dim
    for layer in range(n_layers):
        params[f"{prefix}{layer}_Wx"] = rng.uniform(-bound, bound, size=(4 * n_hidden, in_dim))
        params[f"{prefix}{layer}_Wh"] = rng.uniform(-bound, bound, size=(4 * n_hidden, n_hidden))
        b = np.zeros(4 * n_hidden)
        b[n_hidden : 2 * n_hidden] = 1.0
        params[f"{prefix}{layer}_b"] = b
        in_dim = n_hidden
    return params


@dataclass
class OutputConstraint:
    """Per-dimension output bound in normalized units; None = unconstrained."""

    beta: np.ndarray | None = None

    def __post_init__(self):
        if self.beta is not None:
            self.beta = np.asarray(self.beta, dtype=float)
            if np.any(self.beta < 0.0) or np.any(np.isnan(self.beta)):
                raise ValueError("constraint bounds must be >= 0")

    @property
    def bounded(self):
        return self.beta is not None


def constrain(raw, constraint):
    if not constraint.bounded:
        return raw
    beta = constraint.beta
    finite = np.isfinite(beta)
    active = finite & (beta > 0.0)
    safe = np.where(active, beta, 1.0)
    out = np.where(active, safe * np.tanh(raw / safe), raw)
    return np.where(finite & (beta == 0.0), 0.0, out)


def constrain_backward(raw, constraint, d_out):
    if not constraint.bounded:
        return d_out
    beta = constraint.beta
    finite = np.isfinite(beta)
    active = finite & (beta > 0.0)
    safe = np.where(active, beta, 1.0)
    slope = np.where(active, 1.0 - np.tanh(raw / safe) ** 2, 1.0)
    return np.where(finite & (beta == 0.0), 0.0, d_out * slope)


class RecurrentCorrector:
    """Initializer LSTM + predictor LSTM + linear projection + constraint.

    The initializer consumes the normalized (state, control) window and its
    final hidden/cell states seed the predictor, which steps on normalized
    (control, physical-prediction) inputs and emits a normalized state
    residual through ``proj_W`` and the output constraint.
    """

    def __init__(self, n_layers, n_hidden, state_dim, control_dim, params, constraint=None):
        self.n_layers = n_layers
        self.n_hidden = n_hidden
        self.state_dim = state_dim
        self.control_dim = control_dim
        self.params = params
        self.constraint = constraint or OutputConstraint(None)

    @classmethod
    def create(cls, rng_seed, n_layers, n_hidden, state_dim, control_dim, constraint=None):
        rng = np.random.Generator(np.random.PCG64(rng_seed))
        bound = 1.0 / math.sqrt(n_hidden)
        params = {}
        init_lstm_stack(rng, "lstm", n_layers, n_hidden, control_dim + state_dim, params)
        init_lstm_stack(rng, "init", n_layers, n_hidden, state_dim + control_dim, params)
        params["proj_W"] = rng.uniform(-bound, bound, size=(state_dim, n_hidden))
        return cls(n_layers, n_hidden, state_dim, control_dim, params, constraint)

    def zero_state(self, batch):
        h = [np.zeros((batch, self.n_hidden)) for _ in range(self.n_layers)]
        c = [np.zeros((batch, self.n_hidden)) for _ in range(self.n_layers)]
        return h, c

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}


# ---------------------------------------------------------------------------
# LSTM forward / backward
# ---------------------------------------------------------------------------

def lstm_step(params, prefix, n_layers, n_hidden, x, h_prev, c_prev):
    """One step through the stack.  Returns (h, c, cache)."""
    caches = []
    h_new, c_new = [], []
    inp = x
    for layer in range(n_layers):
        Wx = params[f"{prefix}{layer}_Wx"]
        Wh = params[f"{prefix}{layer}_Wh"]
        b = params[f"{prefix}{layer}_b"]
        a = inp @ Wx.T + h_prev[layer] @ Wh.T + b
        i = _sigmoid(a[:, :n_hidden])
        f = _sigmoid(a[:, n_hidden : 2 * n_hidden])
        g = np.tanh(a[:, 2 * n_hidden : 3 * n_hidden])
        o = _sigmoid(a[:, 3 * n_hidden :])
        c = f * c_prev[layer] + i * g
        tc = np.tanh(c)
        h = o * tc
        caches.append((inp, h_prev[layer], c_prev[layer], i, f, g, o, tc))
        h_new.append(h)
        c_new.append(c)
        inp = h
    return h_new, c_new, caches


def lstm_step_backward(params, prefix, n_layers, caches, d_top, dh_next, dc_next, grads):
    """Backward through one stacked step.

    d_top: gradient into the top-layer hidden output at this step;
    dh_next/dc_next: per-layer recurrent gradients flowing from step t+1.
    Accumulates parameter gradients into `grads`; returns
    (dx, dh_prev, dc_prev).
    """
    d_from_above = d_top
    dh_prev = [None] * n_layers
    dc_prev = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        inp, h_p, c_p, i, f, g, o, tc = caches[layer]
        dh = d_from_above + dh_next[layer]
        do = dh * tc
        dc = dh * o * (1.0 - tc**2) + dc_next[layer]
        di = dc * g
        dg = dc * i
        df = dc * c_p
        da = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g**2),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        grads[f"{prefix}{layer}_Wx"] += da.T @ inp
        grads[f"{prefix}{layer}_Wh"] += da.T @ h_p
        grads[f"{prefix}{layer}_b"] += da.sum(axis=0)
        dh_prev[layer] = da @ params[f"{prefix}{layer}_Wh"]
        dc_prev[layer] = dc * f
        d_from_above = da @ params[f"{prefix}{layer}_Wx"]
    return d_from_above, dh_prev, dc_prev


def lstm_forward(params, prefix, n_layers, n_hidden, xs, h0=None, c0=None):
    """Run the stack over a sequence xs (T, B, in).

    Returns (top hidden sequence (T, B, H), final h list, final c list,
    caches for the backward pass).
    """
    T, B = xs.shape[0], xs.shape[1]
    if h0 is None:
        h0 = [np.zeros((B, n_hidden)) for _ in range(n_layers)]
        c0 = [np.zeros((B, n_hidden)) for _ in range(n_layers)]
    h, c = h0, c0
    tops = np.empty((T, B, n_hidden))
    caches = []
    for t in range(T):
        h, c, cache = lstm_step(params, prefix, n_layers, n_hidden, xs[t], h, c)
        caches.append(cache)
        tops[t] = h[-1]
    return tops, h, c, caches


def lstm_backward(params, prefix, n_layers, n_hidden, caches, d_tops, dh_final, dc_final, grads):
    """Backward over a full sequence.

    d_tops: (T, B, H) gradients into the top hidden outputs (zeros where
    unused); dh_final/dc_final: gradients w.r.t. the final states (used to
    chain the initializer into the predictor).  Returns (dxs, dh0, dc0).
    """
    T = len(caches)
    B = caches[0][0][0].shape[0]
    dh_next = [np.array(x, copy=True) for x in dh_final]
    dc_next = [np.array(x, copy=True) for x in dc_final]
    dxs = np.empty((T, B, caches[0][0][0].shape[1]))
    for t in range(T - 1, -1, -1):
        dx, dh_next, dc_next = lstm_step_backward(
            params, prefix, n_layers, caches[t], d_tops[t], dh_next, dc_next, grads
        )
        dxs[t] = dx
    return dxs, dh_next, dc_next


def encode_initial_state(corrector, window_states_norm, window_controls_norm):
    """Run the initializer over the (W, B, S)/(W, B, K) window.

    The final hidden and cell states per layer seed the predictor.
    Returns (h0, c0, caches).
    """
    xs = np.concatenate([window_states_norm, window_controls_norm], axis=-1)
    _, h, c, caches = lstm_forward(
        corrector.params, "init", corrector.n_layers, corrector.n_hidden, xs
    )
    return h, c, caches


def encode_initial_state_backward(corrector, caches, dh0, dc0, grads):
    window = len(caches)
    batch = dh0[0].shape[0]
    d_tops = np.zeros((window, batch, corrector.n_hidden))
    dxs, _, _ = lstm_backward(
        corrector.params, "init", corrector.n_layers, corrector.n_hidden,
        caches, d_tops, dh0, dc0, grads,
    )
    return dxs


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_init(params):
    return {
        "step": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_update(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard Adam with bias correction; updates params in place."""
    state["step"] += 1
    t = state["step"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for key in sorted(params):
        g = grads[key]
        m = state["m"][key]
        v = state["v"][key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[key] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


def global_norm_clip(grads, max_norm):
    """Scale all gradients down to a global L2 norm of max_norm."""
    total = 0.0
    for key in sorted(grads):
        total += float(np.sum(grads[key] ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for key in grads:
            grads[key] *= scale
    return norm
