"""End-to-end finite-difference check of every model parameter."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention import StatePool, kmeans_fit
from .data import SynthSpec, build_sequences, pad_batch, synth_generate
from .errors import ConfigError
from .model import ModelConfig, make_variant

MAX_DIM = 16
MAX_LEN = 16
STEP = 1e-5
TOLERANCE = 1e-4
GRAD_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    errors: dict  # parameter name -> max relative error (0.0 when no entry above the floor)
    checked: int
    seconds: float
    tolerance: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    def worst(self):
        return max(self.errors.items(), key=lambda kv: kv[1])


def tiny_config(**overrides) -> ModelConfig:
    base = dict(dim=8, max_len=12, batch_size=2, n_clusters=2, dropout=0.0, pool_size=4, seed=7)
    base.update(overrides)
    return ModelConfig(**base)


def check_config(cfg: ModelConfig) -> None:
    if cfg.dim > MAX_DIM or cfg.max_len > MAX_LEN:
        raise ConfigError(
            f"gradcheck needs dim <= {MAX_DIM} and max_len <= {MAX_LEN}, got dim={cfg.dim}, max_len={cfg.max_len}"
        )
    if cfg.dropout != 0.0 or cfg.guess_in_eval:
        raise ConfigError("gradcheck requires deterministic mode (dropout 0, guess noise off)")


def relative_error(analytic, numeric, floor=GRAD_FLOOR) -> float:
    """Largest |a - n| / max(|a|, |n|) over entries where either exceeds ``floor``."""
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    sel = scale > floor
    if not sel.any():
        return 0.0
    return float((np.abs(analytic - numeric)[sel] / scale[sel]).max())


def run_gradcheck(cfg: ModelConfig | None = None, step: float = STEP) -> GradcheckResult:
    """Compare backprop gradients with central differences on a tiny synthetic batch.

    A warm-up pass fills the state pool so the cluster mask is active; the
    fitted centers are then frozen for the check.
    """
    cfg = cfg or tiny_config()
    check_config(cfg)
    t0 = time.perf_counter()
    spec = SynthSpec(learners=6, concepts=3, exercises=5, length=cfg.max_len, seed=cfg.seed)
    corpus = build_sequences(synth_generate(spec), cfg.max_len)
    seqs = corpus.sequences
    model = make_variant(cfg, corpus.concepts.size, corpus.exercises.size)

    warm = pad_batch(seqs[cfg.batch_size :], cfg.max_len)
    pool = StatePool(max(cfg.pool_size, warm.size))
    clusters = None
    if model.variant.learning_state:
        res = model.forward(warm, None, train=False)
        pool.push(res.yhat.data[i, : warm.lengths[i]] for i in range(warm.size))
        clusters = kmeans_fit(pool, cfg.n_clusters, cfg.kmeans_iters, np.random.default_rng(cfg.seed))

    batch = pad_batch(seqs[: cfg.batch_size], cfg.max_len)
    # ragged lengths exercise the padding mask
    batch.lengths[-1] = max(2, cfg.max_len - 3)

    def loss_value():
        return float(model.loss(model.forward(batch, clusters, train=False)).data)

    model.params.zero_grad()
    ag.backward(model.loss(model.forward(batch, clusters, train=False)))

    errors, checked = {}, 0
    for name, p in model.params.items():
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * step)
        checked += flat.size
        errors[name] = relative_error(analytic, numeric)
    return GradcheckResult(errors, checked, time.perf_counter() - t0)
