"""Learning-state extraction: three causal residual blocks fused by a 1x1 projection."""

from __future__ import annotations

import numpy as np

from . import autograd as ag

DILATIONS = (1, 2, 4)


def init_lse(store, dim, kernel_size, rng):
    for k in range(1, len(DILATIONS) + 1):
        v = store.uniform(f"lse.block{k}.direction", (kernel_size, dim, dim), rng, fan_in=kernel_size * dim)
        # weight norm starts at the direction's own norm, so the initial kernel equals v
        store.add(f"lse.block{k}.magnitude", [np.sqrt((v.data**2).sum())])
        store.zeros(f"lse.block{k}.bias", (dim,))
    for k in range(1, len(DILATIONS)):
        store.add(f"lse.norm{k}.gain", np.ones(dim))
        store.zeros(f"lse.norm{k}.bias", (dim,))
    store.uniform("lse.fuse.W", (len(DILATIONS) * dim, dim), rng)
    store.zeros("lse.fuse.b", (dim,))


def residual_block(y, store, k, *, train, rng=None, dropout=0.0):
    """``y + dropout(relu(conv(y)))`` for block ``k`` (1-based)."""
    kernel = ag.weight_norm(store[f"lse.block{k}.direction"], store[f"lse.block{k}.magnitude"])
    conv = ag.add(ag.causal_conv1d(y, kernel, DILATIONS[k - 1]), store[f"lse.block{k}.bias"])
    return ag.add(y, ag.dropout(ag.relu(conv), dropout, train, rng))


def lse_forward(y, store, *, train, rng=None, dropout=0.0):
    """Map interactions ``[..., L, D]`` to learning states of the same shape.

    Layer norm sits between consecutive blocks only; the fused output
    concatenates all three block outputs before the projection.
    """
    outputs = []
    h = y
    for k in range(1, len(DILATIONS) + 1):
        if k > 1:
            h = ag.layer_norm(h, store[f"lse.norm{k - 1}.gain"], store[f"lse.norm{k - 1}.bias"])
        h = residual_block(h, store, k, train=train, rng=rng, dropout=dropout)
        outputs.append(h)
    fused = ag.concat_last(*outputs)
    return ag.add(ag.matmul(fused, store["lse.fuse.W"]), store["lse.fuse.b"])


def receptive_field(kernel_size=3):
    """Number of past steps (excluding the current one) that can reach an output."""
    return (kernel_size - 1) * sum(DILATIONS)
