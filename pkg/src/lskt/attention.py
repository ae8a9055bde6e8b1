"""Learning-state pool, k-means cluster centers, and cluster-masked attention."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ContractError

PAD_LABEL = -1
MIN_POINTS_PER_CLUSTER = 5


class StatePool:
    """FIFO of the most recent learners' learning-state sequences.

    Entries are plain ``[L_valid, D]`` arrays (no gradient history).
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractError(f"pool capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def points(self) -> np.ndarray:
        if not self._items:
            return np.zeros((0, 0))
        return np.concatenate(list(self._items), axis=0)

    def n_points(self) -> int:
        return int(sum(a.shape[0] for a in self._items))

    def push(self, states) -> None:
        for s in states:
            self._items.append(np.array(s, dtype=np.float64, copy=True))


def pool_update(pool: StatePool, batch_states) -> None:
    pool.push(batch_states)


@dataclass
class ClusterModel:
    n: int
    centers: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.centers is not None


def kmeans_fit(pool: StatePool, n: int, iterations: int, rng) -> ClusterModel:
    """Lloyd's algorithm over every pooled state vector.

    Returns an unfitted model while the pool holds fewer than ``5 * n``
    points.  An emptied cluster is reseeded to the point farthest from its
    currently assigned center.
    """
    points = pool.points()
    if points.shape[0] < MIN_POINTS_PER_CLUSTER * n:
        return ClusterModel(n)
    start = rng.choice(points.shape[0], size=n, replace=False)
    centers = points[np.sort(start)].copy()
    for _ in range(iterations):
        d2 = _sq_dist(points, centers)
        labels = d2.argmin(axis=1)
        own = d2[np.arange(points.shape[0]), labels]
        taken = set()
        for k in range(n):
            members = labels == k
            if members.any():
                centers[k] = points[members].mean(axis=0)
                continue
            for idx in np.argsort(-own, kind="stable"):
                if int(idx) not in taken:
                    taken.add(int(idx))
                    centers[k] = points[idx]
                    break
    return ClusterModel(n, centers)


def _sq_dist(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def assign_labels(states, model: ClusterModel, valid) -> np.ndarray:
    """Nearest center for each state; padded positions get ``PAD_LABEL``.

    ``states`` is ``[..., L, D]`` and ``valid`` the matching boolean mask.
    Ties resolve to the lowest center index.
    """
    if not model.fitted:
        raise ContractError("cluster model is not fitted")
    states = np.asarray(states)
    flat = states.reshape(-1, states.shape[-1])
    labels = _sq_dist(flat, model.centers).argmin(axis=1).reshape(states.shape[:-1])
    return np.where(valid, labels, PAD_LABEL)


def labels_or_shared(states, model: ClusterModel | None, valid) -> np.ndarray:
    """Cluster labels, or a single shared label while no model is fitted."""
    if model is None or not model.fitted:
        return np.where(valid, 0, PAD_LABEL)
    return assign_labels(states, model, valid)


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def state_similarity(yhat):
    """Scaled dot products between every pair of learning states, ``[..., L, L]``."""
    dim = yhat.shape[-1]
    return ag.mul(ag.matmul(yhat, ag.transpose_last(yhat)), 1.0 / math.sqrt(dim))


def cluster_mask(labels) -> np.ndarray:
    """Keep-mask ``[..., L, L]``: true where both steps share a label.

    The diagonal is always kept.  Dropped entries act as minus infinity once
    passed to :func:`~lskt.autograd.masked_softmax`.
    """
    labels = np.asarray(labels)
    keep = labels[..., :, None] == labels[..., None, :]
    return keep | np.eye(labels.shape[-1], dtype=bool)


def exercise_attention(x):
    dim = x.shape[-1]
    scores = ag.mul(ag.matmul(x, ag.transpose_last(x)), 1.0 / math.sqrt(dim))
    return ag.masked_softmax(scores, causal_mask(x.shape[-2]))


def combined_attention(x, beta, keep):
    """Exercise softmax plus cluster-masked state softmax, both causal.

    Each row therefore carries total mass 2 and is exactly zero above the
    diagonal.
    """
    causal = causal_mask(x.shape[-2])
    state = ag.masked_softmax(beta, keep & causal)
    return ag.add(exercise_attention(x), state)


def knowledge_state(gamma, y):
    return ag.matmul(gamma, y)
