"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore, read_arrays, write_arrays


@dataclass
class OptimizerState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0

    def save(self, directory):
        arrays = {f"m.{k}": v for k, v in self.first.items()}
        arrays.update({f"v.{k}": v for k, v in self.second.items()})
        write_arrays(directory, arrays, {"step": self.step})

    @classmethod
    def load(cls, directory):
        arrays, meta = read_arrays(directory)
        state = cls(step=int(meta["step"]))
        for key, arr in arrays.items():
            kind, name = key.split(".", 1)
            (state.first if kind == "m" else state.second)[name] = arr
        return state


def adamw_step(
    store: ParameterStore,
    state: OptimizerState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One AdamW update in place.  Gradients are left untouched."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in store.trainable():
        g = p.grad
        m = state.first.get(name)
        if m is None:
            m = state.first[name] = np.zeros_like(p.data)
            state.second[name] = np.zeros_like(p.data)
        v = state.second[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def global_grad_norm(store: ParameterStore) -> float:
    return math.sqrt(sum(float((p.grad**2).sum()) for _, p in store.trainable()))


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(store)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in store.trainable():
            p.grad *= scale
    return norm
