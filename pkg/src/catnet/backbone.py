"""Recurrent encoding of visit-vector sequences into per-visit hidden states.

Single-layer, unidirectional GRU or LSTM cells with zero initial state.
Sequences in a batch are processed independently up to their own lengths, so
batch composition and trailing padding can never change a sequence's hidden
states or gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from catnet import autodiff as ad

_GRU_GATES = ("z", "r", "h")
_LSTM_GATES = ("i", "f", "o", "g")


@dataclass
class RecurrentParams:
    """Gate weights for one cell: per gate, input map, state map, and bias."""

    kind: str
    input_dim: int
    hidden_dim: int
    weights: dict

    @classmethod
    def init(cls, kind: str, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        if kind not in ("gru", "lstm"):
            raise ValueError(f"unknown backbone kind {kind!r}; expected 'gru' or 'lstm'")
        gates = _GRU_GATES if kind == "gru" else _LSTM_GATES
        bound_w = np.sqrt(6.0 / (input_dim + hidden_dim))
        bound_u = np.sqrt(6.0 / (2 * hidden_dim))
        weights = {}
        for gate in gates:
            weights[f"w{gate}"] = ad.parameter(rng.uniform(-bound_w, bound_w, (hidden_dim, input_dim)))
            weights[f"u{gate}"] = ad.parameter(rng.uniform(-bound_u, bound_u, (hidden_dim, hidden_dim)))
            weights[f"b{gate}"] = ad.parameter(np.zeros(hidden_dim))
        return cls(kind=kind, input_dim=input_dim, hidden_dim=hidden_dim, weights=weights)

    def named(self, prefix: str = "rnn") -> dict:
        return {f"{prefix}_{name}": t for name, t in self.weights.items()}

    def _gate(self, gate: str, x, h):
        w = self.weights[f"w{gate}"]
        u = self.weights[f"u{gate}"]
        b = self.weights[f"b{gate}"]
        return ad.add(ad.add(ad.matmul(w, x), ad.matmul(u, h)), b)


def gru_cell(h_prev: ad.Tensor, x: ad.Tensor, params: RecurrentParams) -> ad.Tensor:
    """One GRU step: h = (1 - z) * h_prev + z * candidate."""
    z = ad.sigmoid(params._gate("z", x, h_prev))
    r = ad.sigmoid(params._gate("r", x, h_prev))
    candidate = ad.tanh(ad.add(ad.add(ad.matmul(params.weights["wh"], x),
                                      ad.matmul(params.weights["uh"], ad.mul(r, h_prev))),
                               params.weights["bh"]))
    return ad.add(ad.mul(ad.affine(z, -1.0, 1.0), h_prev), ad.mul(z, candidate))


def lstm_cell(h_prev: ad.Tensor, c_prev: ad.Tensor, x: ad.Tensor, params: RecurrentParams):
    """One LSTM step: c = f * c_prev + i * g, h = o * tanh(c)."""
    i = ad.sigmoid(params._gate("i", x, h_prev))
    f = ad.sigmoid(params._gate("f", x, h_prev))
    o = ad.sigmoid(params._gate("o", x, h_prev))
    g = ad.tanh(params._gate("g", x, h_prev))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


@dataclass
class SequenceBatch:
    """Variable-length sequences of input vectors; extra steps are padding."""

    sequences: list
    lengths: list = None

    def __post_init__(self):
        if self.lengths is None:
            self.lengths = [len(s) for s in self.sequences]
        for seq, length in zip(self.sequences, self.lengths):
            if length < 1 or length > len(seq):
                raise ValueError(f"sequence length {length} out of range 1..{len(seq)}")

    @property
    def t_max(self) -> int:
        return max(self.lengths)

    def mask(self) -> np.ndarray:
        m = np.zeros((len(self.sequences), self.t_max), dtype=bool)
        for i, length in enumerate(self.lengths):
            m[i, :length] = True
        return m


@dataclass
class HiddenStates:
    """Per-sequence hidden states; padded positions read as zeros."""

    sequences: list
    hidden_dim: int
    t_max: int = field(default=0)

    def __post_init__(self):
        self.t_max = max(self.t_max, max(len(s) for s in self.sequences))

    def padded_values(self) -> np.ndarray:
        out = np.zeros((len(self.sequences), self.t_max, self.hidden_dim))
        for i, seq in enumerate(self.sequences):
            for t, h in enumerate(seq):
                out[i, t] = h.data
        return out


def run_sequence(batch: SequenceBatch, params: RecurrentParams) -> HiddenStates:
    """Hidden states for every valid step of every sequence in the batch."""
    zero = ad.tensor(np.zeros(params.hidden_dim))
    all_states = []
    for seq, length in zip(batch.sequences, batch.lengths):
        h = zero
        c = zero
        states = []
        for t in range(length):
            if params.kind == "gru":
                h = gru_cell(h, seq[t], params)
            else:
                h, c = lstm_cell(h, c, seq[t], params)
            states.append(h)
        all_states.append(states)
    return HiddenStates(sequences=all_states, hidden_dim=params.hidden_dim,
                        t_max=batch.t_max)
