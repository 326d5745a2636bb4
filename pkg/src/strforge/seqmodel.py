"""Sequence-modeling stage: two-layer bidirectional LSTM, or identity.

Features arrive as a (B, I, D) tensor — I per-image steps of width D. Each
BiLSTM layer runs one LSTM left-to-right and an independent LSTM over the
reversed sequence, concatenates the two hidden states per step (2H wide), and
projects through an FC layer back to the hidden width. By default the
projection is applied after every layer, including the last, so downstream
predictors consume width-H vectors; ``project_last=False`` exposes the raw
2H concatenation of the final layer instead.

Parameters are created zero-filled; initialization policy lives with the
training pipeline.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, concat, lstm_cell, matmul, stack


class _LstmDirection:
    """Weights for one direction of one BiLSTM layer."""

    def __init__(self, name, input_size, hidden_size, dtype):
        self.name = name
        self.hidden_size = hidden_size
        self.w_ih = Tensor(np.zeros((4 * hidden_size, input_size), dtype=dtype),
                           requires_grad=True)
        self.w_hh = Tensor(np.zeros((4 * hidden_size, hidden_size), dtype=dtype),
                           requires_grad=True)
        self.bias = Tensor(np.zeros(4 * hidden_size, dtype=dtype), requires_grad=True)

    def params(self):
        return {
            f"{self.name}.w_ih": self.w_ih,
            f"{self.name}.w_hh": self.w_hh,
            f"{self.name}.bias": self.bias,
        }

    def run(self, steps):
        """Run over a list of (B, in) tensors; returns list of (B, H) states."""
        batch = steps[0].shape[0]
        dtype = self.w_ih.dtype
        h = Tensor(np.zeros((batch, self.hidden_size), dtype=dtype))
        c = Tensor(np.zeros((batch, self.hidden_size), dtype=dtype))
        out = []
        for x in steps:
            h, c = lstm_cell(x, h, c, self.w_ih, self.w_hh, self.bias)
            out.append(h)
        return out


class BiLSTMLayer:
    """One bidirectional layer plus its FC projection (2H -> out)."""

    def __init__(self, name, input_size, hidden_size, output_size, dtype):
        self.name = name
        self.fwd = _LstmDirection(f"{name}.fwd", input_size, hidden_size, dtype)
        self.bwd = _LstmDirection(f"{name}.bwd", input_size, hidden_size, dtype)
        self.fc_w = Tensor(np.zeros((output_size, 2 * hidden_size), dtype=dtype),
                           requires_grad=True)
        self.fc_b = Tensor(np.zeros(output_size, dtype=dtype), requires_grad=True)

    def params(self):
        out = {}
        out.update(self.fwd.params())
        out.update(self.bwd.params())
        out[f"{self.name}.fc.weight"] = self.fc_w
        out[f"{self.name}.fc.bias"] = self.fc_b
        return out

    def concat_states(self, steps):
        """Pre-FC states: list of (B, 2H), forward half first."""
        hf = self.fwd.run(steps)
        hb = self.bwd.run(steps[::-1])[::-1]
        return [concat([f, b], axis=1) for f, b in zip(hf, hb)]

    def forward_steps(self, steps, project=True):
        states = self.concat_states(steps)
        if not project:
            return states
        return [matmul(s, self.fc_w.T) + self.fc_b for s in states]


class BiLSTMStack:
    """Two stacked bidirectional layers with inter-layer FC projections."""

    def __init__(self, input_size=512, hidden_size=256, output_size=256,
                 num_layers=2, project_last=True, dtype=np.float32, name="seq"):
        self.name = name
        self.project_last = project_last
        self.layers = []
        size = input_size
        for i in range(num_layers):
            layer = BiLSTMLayer(f"{name}.layer{i + 1}", size, hidden_size,
                                output_size, dtype)
            self.layers.append(layer)
            size = output_size
        self.output_size = output_size if project_last else 2 * hidden_size

    def params(self):
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def param_element_count(self):
        return sum(int(p.size) for p in self.params().values())

    def forward(self, v: Tensor, mode="train") -> Tensor:
        """(B, I, D) -> (B, I, output_size)."""
        if v.ndim != 3:
            raise ShapeError(f"expected (B, I, D) feature sequence, got {v.shape}")
        if v.shape[1] == 0:
            raise ShapeError("empty feature sequence")
        steps = [v[:, i, :] for i in range(v.shape[1])]
        for li, layer in enumerate(self.layers):
            last = li == len(self.layers) - 1
            steps = layer.forward_steps(steps, project=self.project_last or not last)
        return stack(steps, axis=1)


def identity_seq(v: Tensor) -> Tensor:
    """The "None" sequence module: H = V."""
    return v
