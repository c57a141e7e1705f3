"""LSTM encoder, additive temporal attention and the temporal readouts."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor, uniform_init

TEMPORAL_MODES = ("last", "attn")


class LstmLayer:
    """Gates packed as ``[input, forget, output, candidate]`` along the last axis."""

    def __init__(self, params: ParameterSet, prefix: str, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_in, self.d_h = d_in, d_h
        self.w_x = params.register(f"{prefix}.w_x", uniform_init(rng, d_h, (d_in, 4 * d_h)))
        self.w_h = params.register(f"{prefix}.w_h", uniform_init(rng, d_h, (d_h, 4 * d_h)))
        self.bias = params.register(f"{prefix}.bias", uniform_init(rng, d_h, (4 * d_h,)))

    def step(self, x_proj: Tensor, h: Tensor, c: Tensor):
        """One recurrence step given the precomputed input projection ``x @ w_x``."""
        d = self.d_h
        z = x_proj + h @ self.w_h + self.bias
        gates = ad.sigmoid(z[..., : 3 * d])
        i, f, o = gates[..., :d], gates[..., d: 2 * d], gates[..., 2 * d:]
        g = ad.tanh(z[..., 3 * d:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        return h, c


def _zero_state(d_h: int):
    return Tensor._result(np.zeros(d_h), False), Tensor._result(np.zeros(d_h), False)


def lstm_forward(xs: Tensor, layer: LstmLayer, state=None):
    """Run ``(T, d_in)`` inputs; returns ``(T, d_h)`` hidden states and final ``(h, c)``."""
    if xs.ndim != 2 or xs.shape[0] < 1:
        raise ValueError(f"lstm_forward expects a (T, d_in) sequence, got {xs.shape}")
    if xs.shape[1] != layer.d_in:
        raise ValueError(f"LSTM layer expects width {layer.d_in}, got {xs.shape[1]}")
    h, c = state if state is not None else _zero_state(layer.d_h)
    proj = xs @ layer.w_x
    outs = []
    for t in range(xs.shape[0]):
        h, c = layer.step(proj[t], h, c)
        outs.append(h)
    return ad.stack(outs, axis=0), (h, c)


class TemporalAttention:
    """Energy ``e_t = v . tanh(W1 s0 + W2 p_t)`` with ``s0 = p_T``."""

    def __init__(self, params: ParameterSet, prefix: str, d_h: int, rng: np.random.Generator,
                 d_attn: int | None = None):
        d_attn = d_attn or d_h
        self.w_query = params.register(f"{prefix}.w_query", uniform_init(rng, d_h, (d_h, d_attn)))
        self.w_key = params.register(f"{prefix}.w_key", uniform_init(rng, d_h, (d_h, d_attn)))
        self.v = params.register(f"{prefix}.v", uniform_init(rng, d_attn, (d_attn,)))

    def energies(self, hs: Tensor) -> Tensor:
        s0 = hs[-1]
        return ad.tanh(s0 @ self.w_query + hs @ self.w_key) @ self.v   # (T,)


def temporal_attention(hs: Tensor, attn: TemporalAttention):
    """Context ``q = sum_t beta_t p_t`` and weights ``beta = softmax(e)``."""
    beta = ad.softmax(attn.energies(hs), axis=0)
    q = beta @ hs
    return q, beta


def temporal_readout(hs: Tensor, mode: str, decoder: LstmLayer | None = None,
                     attn: TemporalAttention | None = None, final_state=None) -> Tensor:
    """``last`` -> p_T; ``attn`` -> one decoder step on q from the encoder's final state."""
    if mode == "last":
        return hs[-1]
    if mode == "attn":
        if decoder is None or attn is None or final_state is None:
            raise ValueError("attn readout needs a decoder, an attention layer and the final state")
        q, _ = temporal_attention(hs, attn)
        h, c = final_state
        z, _ = decoder.step(q @ decoder.w_x, h, c)
        return z
    raise ValueError(f"temporal mode must be one of {TEMPORAL_MODES}, got {mode!r}")


class TemporalModel:
    """Stacked LSTM encoder followed by a temporal readout.

    ``kind="mean"`` is the ablation baseline that averages the graph
    embeddings over time and has no parameters.
    """

    def __init__(self, params: ParameterSet, rng: np.random.Generator, d_in: int, d_h: int = 64,
                 n_layers: int = 2, kind: str = "lstm-attn", prefix: str = "temporal"):
        if kind not in ("lstm-attn", "lstm-last", "mean"):
            raise ValueError(f"temporal kind must be lstm-attn, lstm-last or mean, got {kind!r}")
        self.kind = kind
        self.layers: list[LstmLayer] = []
        self.attn = self.decoder = None
        if kind == "mean":
            self.out_width = d_in
            return
        widths = [d_in] + [d_h] * n_layers
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            self.layers.append(LstmLayer(params, f"{prefix}.lstm.{i}", a, b, rng))
        if kind == "lstm-attn":
            self.attn = TemporalAttention(params, f"{prefix}.attn", d_h, rng)
            self.decoder = LstmLayer(params, f"{prefix}.decoder", d_h, d_h, rng)
        self.out_width = d_h

    def encode(self, xs: Tensor):
        state = None
        for layer in self.layers:
            xs, state = lstm_forward(xs, layer)
        return xs, state

    def __call__(self, xs: Tensor) -> Tensor:
        if self.kind == "mean":
            return xs.mean(axis=0)
        hs, state = self.encode(xs)
        mode = "attn" if self.kind == "lstm-attn" else "last"
        return temporal_readout(hs, mode, self.decoder, self.attn, state)

    def attention_weights(self, xs: Tensor) -> np.ndarray | None:
        if self.attn is None:
            return None
        hs, _ = self.encode(xs)
        return temporal_attention(hs, self.attn)[1].data
