"""Visit-level attention, the global time gate, fusion, and the output head.

Hidden states from the backbone are combined along two routes: scaled
dot-product self-attention across visits yields per-visit contexts, and a
sigmoid gate driven by each visit's elapsed time since the first visit scales
the hidden states elementwise.  Per visit, the two are added, summed over
time, concatenated with the encoded demographics, and mapped through a
sigmoid output layer to per-target probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from catnet import autodiff as ad
from catnet.time_kernel import TimeKernelParams, time_embed

bce_loss = ad.binary_cross_entropy


@dataclass
class HeadParams:
    """Demographic encoder and output layer weights."""

    demo_w: ad.Tensor
    demo_b: ad.Tensor
    out_w: ad.Tensor
    out_b: ad.Tensor

    @classmethod
    def init(cls, demo_in: int, demo_dim: int, hidden_dim: int, n_targets: int,
             rng: np.random.Generator):
        bound_d = np.sqrt(6.0 / (demo_in + demo_dim))
        bound_o = np.sqrt(6.0 / (hidden_dim + demo_dim + n_targets))
        return cls(
            demo_w=ad.parameter(rng.uniform(-bound_d, bound_d, (demo_dim, demo_in))),
            demo_b=ad.parameter(np.zeros(demo_dim)),
            out_w=ad.parameter(rng.uniform(-bound_o, bound_o, (n_targets, hidden_dim + demo_dim))),
            out_b=ad.parameter(np.zeros(n_targets)),
        )

    def named(self) -> dict:
        return {"demo_w": self.demo_w, "demo_b": self.demo_b,
                "out_w": self.out_w, "out_b": self.out_b}


def visit_self_attention(states):
    """Per-visit attention contexts over all visits.

    Returns ``(contexts, alpha)``: context t is the alpha-weighted sum of all
    hidden states, alpha row t the softmax of scaled dot products of state t
    against every state.
    """
    if not states:
        raise ValueError("visit_self_attention needs at least one visit")
    hidden_dim = states[0].shape[0]
    stacked = ad.stack(states)
    inv_scale = 1.0 / math.sqrt(hidden_dim)
    contexts = []
    rows = []
    for h in states:
        weights = ad.stable_softmax(ad.scale(ad.matmul(stacked, h), inv_scale))
        contexts.append(ad.weighted_row_sum(weights, stacked))
        rows.append(weights.data.copy())
    return contexts, np.stack(rows)


def global_time_gate(states, delta_global, kernel: TimeKernelParams):
    """Elementwise sigmoid gates from each visit's global decay time.

    ``delta_global`` must start at 0 and be non-decreasing (already scaled by
    the caller).  Returns ``(gated_states, gates)``.
    """
    deltas = [float(d) for d in delta_global]
    if len(deltas) != len(states):
        raise ValueError(f"{len(deltas)} decay times for {len(states)} visits")
    if deltas and deltas[0] != 0.0:
        raise ValueError("global decay times must start at 0")
    if any(b < a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("global decay times must be non-decreasing")
    gated = []
    gate_values = []
    for h, d in zip(states, deltas):
        gate = ad.sigmoid(time_embed(d, kernel))
        gated.append(ad.mul(gate, h))
        gate_values.append(gate.data.copy())
    return gated, np.stack(gate_values)


def encode_demographics(demo_vector, params: HeadParams) -> ad.Tensor:
    """Linear map of the raw demographic features (no activation)."""
    return ad.add(ad.matmul(params.demo_w, ad.tensor(demo_vector)), params.demo_b)


def fuse_and_predict(contexts, gated, demo_vector, params: HeadParams) -> ad.Tensor:
    """Per-target probabilities from the two per-visit routes and demographics.

    ``gated`` may be None (global gate ablated), in which case the fused sum
    uses the attention contexts alone.
    """
    if gated is None:
        per_visit = list(contexts)
    else:
        per_visit = [ad.add(c, g) for c, g in zip(contexts, gated)]
    fused = per_visit[0]
    for v in per_visit[1:]:
        fused = ad.add(fused, v)
    features = ad.concat([fused, encode_demographics(demo_vector, params)])
    return ad.sigmoid(ad.add(ad.matmul(params.out_w, features), params.out_b))
