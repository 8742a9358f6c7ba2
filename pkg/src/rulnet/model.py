"""The RUL network: self-attention over sensors, self-attention over time
steps, a stacked LSTM, and a small MLP regression head.

A sample is an F x T matrix: F channels (operational settings + sensors),
T consecutive cycles.  The feature block treats each channel's T-step
series as one token (width T); the sequence block transposes and treats
each time step's F readings as one token (width F).  Neither block changes
the input shape.  All forward paths accept a single (F, T) sample or a
stacked (B, F, T) batch.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CapabilityError, ConfigurationError, ContractError, DimensionError

MODES = ("L", "A", "F", "F+T")


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q kᵀ / sqrt(d_k)) v with a row-wise softmax.

    Returns (output, attention weights); weight rows sum to 1.
    """
    d_k = q.shape[-1]
    if d_k == 0:
        raise ContractError("attention requires d_k > 0")
    if k.shape[-1] != d_k:
        raise DimensionError(f"q and k widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"k and v row counts differ: {k.shape} vs {v.shape}")
    scores = ad.scale(q @ ad.transpose(k), 1.0 / math.sqrt(d_k))
    weights = ad.softmax(scores, axis=-1)
    return weights @ v, weights


class MultiHeadAttention:
    """Multi-head self-attention with per-head q/k/v projections.

    Head count must divide the embedding width; the output projection maps
    the concatenated heads back to ``d_model`` so the shape is preserved.
    The softmax weights of the most recent forward pass are retained (as
    plain arrays, one per head) for interpretability export.
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, dtype=ad.DEFAULT_DTYPE):
        if heads < 1:
            raise ConfigurationError(f"head count must be >= 1, got {heads}")
        if d_model % heads != 0:
            raise ConfigurationError(
                f"head count {heads} does not divide embedding width {d_model}"
            )
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.w_q = [_uniform_init(rng, (d_model, self.d_head), d_model, dtype) for _ in range(heads)]
        self.w_k = [_uniform_init(rng, (d_model, self.d_head), d_model, dtype) for _ in range(heads)]
        self.w_v = [_uniform_init(rng, (d_model, self.d_head), d_model, dtype) for _ in range(heads)]
        self.w_o = _uniform_init(rng, (d_model, d_model), d_model, dtype)
        self.last_weights: list[np.ndarray] | None = None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_model:
            raise DimensionError(
                f"attention expects width {self.d_model}, got input shape {x.shape}"
            )
        head_outs = []
        retained = []
        for i in range(self.heads):
            out, weights = scaled_dot_product_attention(
                x @ self.w_q[i], x @ self.w_k[i], x @ self.w_v[i]
            )
            head_outs.append(out)
            retained.append(weights.data)
        self.last_weights = retained
        merged = head_outs[0] if self.heads == 1 else ad.concat(head_outs, axis=-1)
        return merged @ self.w_o

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i in range(self.heads):
            yield f"h{i}.wq", self.w_q[i]
            yield f"h{i}.wk", self.w_k[i]
            yield f"h{i}.wv", self.w_v[i]
        yield "wo", self.w_o


class LstmStack:
    """Stacked LSTM; upper layers consume the lower layer's hidden sequence.

    Gate layout in the fused weight matrices is [input, forget, cell, output].
    Hidden and cell states start at zero for every sample; the final
    top-layer hidden state is the feature vector.
    """

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        layers: int,
        rng: np.random.Generator,
        dtype=ad.DEFAULT_DTYPE,
    ):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = layers
        self.w_x: list[Tensor] = []
        self.w_h: list[Tensor] = []
        self.bias: list[Tensor] = []
        for layer in range(layers):
            fan_in = input_size if layer == 0 else hidden_size
            self.w_x.append(_uniform_init(rng, (fan_in, 4 * hidden_size), fan_in, dtype))
            self.w_h.append(_uniform_init(rng, (hidden_size, 4 * hidden_size), hidden_size, dtype))
            b = np.zeros(4 * hidden_size, dtype=dtype)
            b[hidden_size : 2 * hidden_size] = 1.0  # forget gate starts open
            self.bias.append(Tensor(b, requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        """(B, F, T) -> (B, hidden_size); a single (F, T) sample -> (hidden_size,)."""
        if x.ndim == 2:
            return ad.reshape(self(ad.reshape(x, (1,) + x.shape)), (self.hidden_size,))
        if x.ndim != 3 or x.shape[1] != self.input_size:
            raise DimensionError(
                f"lstm expects (batch, {self.input_size}, T), got {x.shape}"
            )
        batch = x.shape[0]
        steps = x.shape[2]
        h = self.hidden_size
        # (B, T, in) sequence view for the batched input projection.
        seq = ad.transpose(x)
        h_t: Tensor | None = None
        for layer in range(self.num_layers):
            w_x, w_h, bias = self.w_x[layer], self.w_h[layer], self.bias[layer]
            # Project every time step at once; the recurrent term stays
            # sequential by nature.
            projected = ad.unstack(seq @ w_x + bias, axis=1)
            h_t = None
            c_t: Tensor | None = None
            outputs = []
            for z in projected:
                if h_t is not None:
                    z = z + h_t @ w_h
                i_gate, f_gate, g_cell, o_gate = ad.split(z, 1, (h, h, h, h))
                i_gate = ad.sigmoid(i_gate)
                g_cell = ad.tanh(g_cell)
                c_t = (
                    i_gate * g_cell
                    if c_t is None
                    else ad.sigmoid(f_gate) * c_t + i_gate * g_cell
                )
                h_t = ad.sigmoid(o_gate) * ad.tanh(c_t)
                outputs.append(h_t)
            if layer + 1 < self.num_layers:
                seq = ad.concat(
                    [ad.reshape(out, (batch, 1, h)) for out in outputs], axis=1
                )
        assert h_t is not None
        return h_t

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for layer in range(self.num_layers):
            yield f"l{layer}.wx", self.w_x[layer]
            yield f"l{layer}.wh", self.w_h[layer]
            yield f"l{layer}.b", self.bias[layer]


class MlpHead:
    """Hidden rectified layer with inverted dropout, then one output node."""

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        dropout: float,
        rng: np.random.Generator,
        dtype=ad.DEFAULT_DTYPE,
    ):
        if not 0.0 <= dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {dropout}")
        self.dropout = dropout
        self.w1 = _uniform_init(rng, (input_size, hidden_size), input_size, dtype)
        self.b1 = Tensor(np.zeros(hidden_size, dtype=dtype), requires_grad=True)
        self.w2 = _uniform_init(rng, (hidden_size, 1), hidden_size, dtype)
        self.b2 = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        hidden = ad.relu(x @ self.w1 + self.b1)
        if training and self.dropout > 0.0:
            if rng is None:
                raise ContractError("training-mode forward needs a dropout generator")
            keep = rng.random(hidden.shape) >= self.dropout
            mask = (keep / (1.0 - self.dropout)).astype(hidden.data.dtype)
            hidden = hidden * Tensor(mask)
        return hidden @ self.w2 + self.b2

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2


class RulModel:
    """Full network: optional attention blocks, LSTM stack, MLP head.

    ``mode`` selects the active blocks: "L" plain LSTM, "A" single-head
    attention on channels, "F" multi-head attention on channels, "F+T"
    attention on channels then on time steps.  Disabled blocks are not
    constructed, so they contribute no parameters.
    """

    def __init__(
        self,
        n_features: int,
        window: int,
        mode: str = "F+T",
        feature_heads: int = 5,
        sequence_heads: int = 4,
        lstm_hidden: int = 100,
        lstm_layers: int = 3,
        mlp_hidden: int = 100,
        dropout: float = 0.5,
        init_rng: np.random.Generator | None = None,
        dtype=ad.DEFAULT_DTYPE,
    ):
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
        if mode == "A":
            feature_heads = 1
        if init_rng is None:
            init_rng = np.random.default_rng(0)
        self.n_features = n_features
        self.window = window
        self.mode = mode
        self.feature_heads = feature_heads if mode != "L" else 0
        self.sequence_heads = sequence_heads if mode == "F+T" else 0
        self.dtype = np.dtype(dtype)

        # Channel tokens have width T, time-step tokens have width F.
        self.feature_attention = (
            MultiHeadAttention(window, feature_heads, init_rng, dtype) if mode != "L" else None
        )
        self.sequence_attention = (
            MultiHeadAttention(n_features, sequence_heads, init_rng, dtype)
            if mode == "F+T"
            else None
        )
        self.lstm = LstmStack(n_features, lstm_hidden, lstm_layers, init_rng, dtype)
        self.head = MlpHead(lstm_hidden, mlp_hidden, dropout, init_rng, dtype)

    # -- forward ---------------------------------------------------------
    def _check_input(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            x = ad.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[1] != self.n_features or x.shape[2] != self.window:
            raise DimensionError(
                f"model built for {self.n_features}x{self.window} inputs, got {x.shape}"
            )
        return x

    def apply_feature_attention(self, x: Tensor) -> Tensor:
        """Attention across channels; identity when the block is disabled."""
        if self.feature_attention is None:
            return x
        return self.feature_attention(x)

    def apply_sequence_attention(self, x: Tensor) -> Tensor:
        """Attention across time steps; identity when the block is disabled."""
        if self.sequence_attention is None:
            return x
        return ad.transpose(self.sequence_attention(ad.transpose(x)))

    def forward(
        self,
        x: Tensor,
        training: bool = False,
        dropout_rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Predict RUL; (F, T) -> scalar, (B, F, T) -> (B, 1).

        In inference mode the output is deterministic.  The attention
        blocks' softmax weights from this pass stay retrievable via
        :meth:`attention_weights`.
        """
        squeeze = x.ndim == 2
        x = self._check_input(x)
        x = self.apply_feature_attention(x)
        x = self.apply_sequence_attention(x)
        features = self.lstm(x)
        out = self.head(features, training, dropout_rng)
        if squeeze:
            out = ad.reshape(out, ())
        return out

    def predict(self, matrix: np.ndarray) -> np.ndarray:
        """Inference on raw arrays: (F, T) -> float, (B, F, T) -> (B,)."""
        x = Tensor(np.asarray(matrix, dtype=self.dtype))
        out = self.forward(x, training=False)
        return out.data if out.ndim == 0 else out.data.reshape(-1)

    # -- attention retention ----------------------------------------------
    def attention_weights(self, block: str) -> list[np.ndarray]:
        """Per-head softmax weights of the last forward pass.

        ``block`` is "feature" or "sequence".  Raises CapabilityError when
        that block is disabled, ContractError before any forward pass.
        """
        attn = self.feature_attention if block == "feature" else self.sequence_attention
        if attn is None:
            raise CapabilityError(f"model mode {self.mode!r} has no {block} attention block")
        if attn.last_weights is None:
            raise ContractError("no forward pass has been run yet")
        return attn.last_weights

    # -- parameters --------------------------------------------------------
    def parameters(self) -> list[tuple[str, Tensor]]:
        """Stable (name, tensor) list over every trainable parameter."""
        named: list[tuple[str, Tensor]] = []
        if self.feature_attention is not None:
            named += [(f"fa.{n}", p) for n, p in self.feature_attention.parameters()]
        if self.sequence_attention is not None:
            named += [(f"sa.{n}", p) for n, p in self.sequence_attention.parameters()]
        named += [(f"lstm.{n}", p) for n, p in self.lstm.parameters()]
        named += [(f"head.{n}", p) for n, p in self.head.parameters()]
        return named

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.parameters()]

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            if name not in arrays:
                raise ContractError(f"missing parameter {name!r} in state")
            src = arrays[name]
            if src.shape != p.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {src.shape} != model shape {p.shape}"
                )
            p.data = src.astype(self.dtype, copy=True)

    def hyperparams(self) -> dict:
        """Construction arguments needed to rebuild an identical skeleton."""
        return {
            "n_features": self.n_features,
            "window": self.window,
            "mode": self.mode,
            "feature_heads": self.feature_heads or 1,
            "sequence_heads": self.sequence_heads or 1,
            "lstm_hidden": self.lstm.hidden_size,
            "lstm_layers": self.lstm.num_layers,
            "mlp_hidden": self.head.w1.shape[1],
            "dropout": self.head.dropout,
            "dtype": self.dtype.str,
        }

    @classmethod
    def from_hyperparams(cls, hp: dict) -> "RulModel":
        hp = dict(hp)
        dtype = np.dtype(hp.pop("dtype", "<f4"))
        return cls(dtype=dtype, **hp)
