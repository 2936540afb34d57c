"""Learned kernel embedding of a temporal gap.

The same kernel shape serves two places: embedding the interval since the
previous visit (producing the interval token) and embedding the elapsed time
since the first visit (driving the global gate).  The kernel is

    out = w2 @ (1 - tanh((w1 * delta + b1)^2)) + b2

whose inner component lies in (0, 1], saturating towards 0 as the gap grows.
Callers are expected to scale raw day values before embedding; the kernel
itself applies none.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from catnet import autodiff as ad


@dataclass
class TimeKernelParams:
    """Kernel weights: w1/b1 of the hidden width, w2/b2 mapping to the output."""

    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor

    def __post_init__(self):
        hidden = self.w1.shape[0]
        out = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (out, hidden) or self.b2.shape != (out,):
            raise ValueError(
                f"inconsistent kernel shapes: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}")

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def init(cls, hidden: int, out: int, rng: np.random.Generator) -> "TimeKernelParams":
        bound = np.sqrt(6.0 / (hidden + out))
        return cls(
            w1=ad.parameter(rng.uniform(-0.5, 0.5, hidden)),
            b1=ad.parameter(rng.uniform(-0.5, 0.5, hidden)),
            w2=ad.parameter(rng.uniform(-bound, bound, (out, hidden))),
            b2=ad.parameter(np.zeros(out)),
        )

    def named(self, prefix: str) -> dict:
        return {f"{prefix}_w1": self.w1, f"{prefix}_b1": self.b1,
                f"{prefix}_w2": self.w2, f"{prefix}_b2": self.b2}


def time_embed(delta: float, params: TimeKernelParams) -> ad.Tensor:
    """Embed a non-negative gap (already scaled) into the kernel's output space."""
    delta = float(delta)
    if not np.isfinite(delta) or delta < 0:
        raise ValueError(f"temporal gap must be finite and non-negative, got {delta}")
    u = ad.add(ad.scale(params.w1, delta), params.b1)
    kernel = ad.affine(ad.tanh(ad.mul(u, u)), -1.0, 1.0)
    return ad.add(ad.matmul(params.w2, kernel), params.b2)
