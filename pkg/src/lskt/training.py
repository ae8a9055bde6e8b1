"""Training loop, held-out evaluation and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .attention import ClusterModel, StatePool, kmeans_fit, pool_update
from .data import iter_batches
from .errors import NumericalError
from .metrics import MetricsReport
from .model import LSKT, ModelConfig, make_variant
from .optim import OptimizerState, adamw_step, clip_grad_norm
from .params import read_arrays, write_arrays

log = logging.getLogger(__name__)

STREAMS = ("init", "split", "shuffle", "dropout", "guess", "kmeans")
HISTORY_FIELDS = ("epoch", "train_loss", "val_auc", "val_acc", "val_rmse", "val_mae")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """One independent generator per source of randomness, all derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def split_seed(seed: int) -> int:
    return int(rng_streams(seed)["split"].integers(2**31))


@dataclass
class TrainState:
    model: LSKT
    opt: OptimizerState
    pool: StatePool
    clusters: ClusterModel
    rngs: dict
    history: list = field(default_factory=list)
    epoch: int = 0
    # largest |gradient| ever seen on a parameter the variant disables
    disabled_grad_max: float = 0.0


def evaluate(model: LSKT, sequences, clusters: ClusterModel | None, batch_size: int | None = None):
    """Eval-mode predictions over ``sequences``; returns (report, scores, labels)."""
    cfg = model.config
    rng = np.random.default_rng(cfg.seed) if cfg.guess_in_eval else None
    scores, labels = [], []
    for batch in iter_batches(sequences, batch_size or cfg.batch_size, cfg.max_len):
        res = model.forward(batch, clusters, train=False, rng=rng)
        scores.append(res.pred.data[res.mask])
        labels.append(res.targets[res.mask])
    scores = np.concatenate(scores) if scores else np.zeros(0)
    labels = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    return MetricsReport.compute(scores, labels), scores, labels


def _param_norms(model):
    return {n: float(np.linalg.norm(t.data)) for n, t in model.params.items()}


def train_step(state: TrainState, batch, epoch: int, index: int) -> float:
    cfg, model = state.model.config, state.model
    if model.variant.enhancement:
        state.clusters = kmeans_fit(state.pool, cfg.n_clusters, cfg.kmeans_iters, state.rngs["kmeans"])
    res = model.forward(
        batch, state.clusters, train=True, rng=state.rngs["dropout"], guess_rng=state.rngs["guess"]
    )
    loss = model.loss(res)
    value = float(loss.data)
    if not math.isfinite(value):
        norms = _param_norms(model)
        worst = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
        raise NumericalError(f"non-finite loss {value} at epoch {epoch}, batch {index}; largest parameter norms {worst}")
    model.params.zero_grad()
    ag.backward(loss)
    for name in model.disabled_params():
        state.disabled_grad_max = max(state.disabled_grad_max, float(np.abs(model.params[name].grad).max()))
    clip_grad_norm(model.params, cfg.clip_norm)
    adamw_step(model.params, state.opt, lr=cfg.lr, weight_decay=cfg.weight_decay)
    if model.variant.learning_state:
        pool_update(state.pool, [res.yhat.data[i, : batch.lengths[i]] for i in range(batch.size)])
    return value


def new_state(config: ModelConfig, n_concepts: int, n_exercises: int) -> TrainState:
    rngs = rng_streams(config.seed)
    model = make_variant(config, n_concepts, n_exercises, rngs["init"])
    return TrainState(model, OptimizerState(), StatePool(config.pool_size), ClusterModel(config.n_clusters), rngs)


def train(
    config: ModelConfig,
    train_seqs,
    test_seqs,
    n_concepts: int,
    n_exercises: int,
    checkpoint_dir=None,
    state: TrainState | None = None,
) -> TrainState:
    """Run (or resume) training up to ``config.epochs`` epochs.

    After every epoch the centers used for evaluation are refit from the pool
    and, when ``checkpoint_dir`` is given, a full checkpoint is written.
    """
    state = state or new_state(config, n_concepts, n_exercises)
    cfg = state.model.config
    for epoch in range(state.epoch + 1, cfg.epochs + 1):
        order = state.rngs["shuffle"].permutation(len(train_seqs))
        losses = []
        for i, batch in enumerate(iter_batches(train_seqs, cfg.batch_size, cfg.max_len, order)):
            losses.append(train_step(state, batch, epoch, i))
        if state.model.variant.enhancement:
            state.clusters = kmeans_fit(state.pool, cfg.n_clusters, cfg.kmeans_iters, state.rngs["kmeans"])
        report, _, _ = evaluate(state.model, test_seqs, state.clusters)
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_auc": report.auc,
            "val_acc": report.acc,
            "val_rmse": report.rmse,
            "val_mae": report.mae,
        }
        state.history.append(row)
        state.epoch = epoch
        log.info("epoch %d loss %.4f auc %.4f acc %.4f", epoch, row["train_loss"], report.auc, report.acc)
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir, state)
    return state


# -- checkpoints -------------------------------------------------------------


def write_history(path, history) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})


def read_history(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def save_checkpoint(directory, state: TrainState) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model = state.model
    meta = dict(model.config.to_dict(), n_concepts=model.n_concepts, n_exercises=model.n_exercises)
    (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    model.params.save(directory / "params")
    state.opt.save(directory / "optimizer")
    pool = {f"seq{i:04d}": s for i, s in enumerate(state.pool)}
    if state.clusters.fitted:
        pool["centers"] = state.clusters.centers
    write_arrays(
        directory / "pool",
        pool,
        {"capacity": state.pool.capacity, "n_clusters": state.clusters.n, "fitted": state.clusters.fitted},
    )
    rng_state = {name: g.bit_generator.state for name, g in state.rngs.items()}
    (directory / "rng.json").write_text(json.dumps({"epoch": state.epoch, "streams": rng_state}, sort_keys=True))
    write_history(directory / "history.csv", state.history)


def load_checkpoint(directory, config: ModelConfig | None = None) -> TrainState:
    """Rebuild a :class:`TrainState`; ``config`` overrides the stored one when given.

    Raises :class:`~lskt.errors.DimensionError` when stored parameter shapes
    disagree with the (possibly overridden) configuration.
    """
    directory = Path(directory)
    meta = json.loads((directory / "config.json").read_text())
    n_concepts, n_exercises = meta.pop("n_concepts"), meta.pop("n_exercises")
    cfg = config or ModelConfig(**meta)
    state = new_state(cfg, n_concepts, n_exercises)
    state.model.params.load_into(directory / "params")
    state.opt = OptimizerState.load(directory / "optimizer")
    arrays, pmeta = read_arrays(directory / "pool")
    state.pool = StatePool(int(pmeta["capacity"]))
    state.pool.push(arrays[k] for k in sorted(arrays) if k.startswith("seq"))
    state.clusters = ClusterModel(int(pmeta["n_clusters"]), arrays.get("centers"))
    rng_meta = json.loads((directory / "rng.json").read_text())
    for name, st in rng_meta["streams"].items():
        state.rngs[name].bit_generator.state = st
    state.epoch = int(rng_meta["epoch"])
    state.history = read_history(directory / "history.csv")
    return state


def checkpoint_dims(directory) -> tuple[int, int]:
    meta = json.loads((Path(directory) / "config.json").read_text())
    return meta["n_concepts"], meta["n_exercises"]
