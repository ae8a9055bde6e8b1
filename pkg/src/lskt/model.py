"""Full forward pass: embeddings -> learning states -> attention -> prediction."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autograd as ag
from .attention import (
    ClusterModel,
    cluster_mask,
    combined_attention,
    exercise_attention,
    knowledge_state,
    labels_or_shared,
    state_similarity,
)
from .embeddings import IRT_LEVELS, embed_exercise, embed_interaction, init_tables
from .errors import ConfigError, ContractError
from .lse import init_lse, lse_forward
from .params import ParameterStore

PROB_CLAMP = 1e-7


@dataclass
class ModelConfig:
    dim: int = 128
    max_len: int = 200
    kernel_size: int = 3
    pool_size: int = 16
    n_clusters: int = 4
    kmeans_iters: int = 10
    lr: float = 0.001
    batch_size: int = 16
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    dropout: float = 0.2
    epochs: int = 30
    seed: int = 0
    irt: str = "3PL"
    ablation: str = "full"
    guess_in_eval: bool = False
    train_fraction: float = 0.8

    def validate(self) -> "ModelConfig":
        for name in ("dim", "max_len", "kernel_size", "pool_size", "n_clusters", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {self.max_len}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.irt not in IRT_LEVELS:
            raise ConfigError(f"irt must be one of {IRT_LEVELS}, got {self.irt!r}")
        if self.ablation not in VARIANTS:
            raise ConfigError(f"ablation must be one of {tuple(VARIANTS)}, got {self.ablation!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class Variant:
    """Which of the three architectural components are active."""

    learning_state: bool
    enhancement: bool
    knowledge_state: bool


VARIANTS = {
    "full": Variant(True, True, True),
    "RLS": Variant(False, False, True),
    "RLE": Variant(True, False, True),
    "RKS": Variant(True, False, False),
}


@dataclass
class ForwardResult:
    pred: ag.Tensor  # [B, L-1] probability for targets at steps 2..L
    targets: np.ndarray  # [B, L-1]
    mask: np.ndarray  # [B, L-1] valid targets
    x: ag.Tensor
    y: ag.Tensor
    yhat: ag.Tensor | None
    h: ag.Tensor | None
    z: ag.Tensor
    gamma: ag.Tensor | None
    labels: np.ndarray | None


def fuse(h, yhat, store):
    return ag.add(ag.matmul(ag.concat_last(h, yhat), store["W7"]), store["b7"])


def predict(z, x_next, store):
    logit = ag.add(ag.matmul(ag.concat_last(z, x_next), store["W8"]), store["b8"])
    return ag.sigmoid(ag.reshape(logit, logit.shape[:-1]))


def bce_loss(pred, targets, mask):
    """Mean binary cross-entropy over valid targets, probabilities clamped."""
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise ContractError("bce_loss needs at least one valid target")
    t = np.asarray(targets, dtype=np.float64)
    p = ag.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = ag.add(ag.mul(ag.log(p), t), ag.mul(ag.log(ag.sub(1.0, p)), 1.0 - t))
    return ag.mul(ag.sum(ag.mul(ll, mask)), -1.0 / count)


class LSKT:
    """Parameters plus the forward pass for one (irt level, ablation) variant."""

    def __init__(self, config: ModelConfig, n_concepts: int, n_exercises: int, rng=None):
        self.config = config.validate()
        self.variant = VARIANTS[config.ablation]
        self.n_concepts = n_concepts
        self.n_exercises = n_exercises
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        D = config.dim
        self.params = ParameterStore(seed=config.seed)
        init_tables(self.params, n_concepts, n_exercises, D, rng)
        init_lse(self.params, D, config.kernel_size, rng)
        self.params.uniform("W7", (2 * D, D), rng)
        self.params.zeros("b7", (D,))
        self.params.uniform("W8", (2 * D, 1), rng)
        self.params.zeros("b8", (1,))

    def component_params(self) -> dict[str, list[str]]:
        """Parameter names grouped by the architectural component that owns them."""
        names = list(self.params)
        irt = self.config.irt
        used_embed = {
            "NI": {"concept", "response"},
            "1PL": {"concept", "concept_var", "response", "response_var", "difficulty", "W1", "b1", "W2", "b2"},
            "2PL": {"concept", "concept_var", "response", "response_var", "difficulty",
                    "exercise_latent", "W3", "W4", "b4", "W5", "b5"},
            "3PL": {"concept", "concept_var", "response", "response_var", "difficulty",
                    "exercise_latent", "W3", "W4", "b4", "W6", "b6", "guess_response"},
        }[irt]
        embed_all = [n for n in names if not n.startswith("lse.") and n not in ("W7", "b7", "W8", "b8")]
        return {
            "embedding_used": [n for n in embed_all if n in used_embed],
            "embedding_unused": [n for n in embed_all if n not in used_embed],
            "learning_state": [n for n in names if n.startswith("lse.")],
            "fusion": ["W7", "b7"],
            "prediction": ["W8", "b8"],
        }

    def disabled_params(self) -> list[str]:
        """Names that cannot influence the loss under this variant."""
        groups = self.component_params()
        off = list(groups["embedding_unused"])
        if not self.variant.learning_state:
            off += groups["learning_state"]
        if not (self.variant.learning_state and self.variant.knowledge_state):
            off += groups["fusion"]
        return off

    def forward(
        self, batch, clusters: ClusterModel | None = None, *, train: bool, rng=None, guess_rng=None
    ) -> ForwardResult:
        """Predict every target step 2..L of ``batch``.

        ``rng`` drives dropout; ``guess_rng`` (defaulting to ``rng``) drives the
        3PL guess noise.  The prediction for step t+1 reads interactions up to
        t and the exercise at t+1 only.
        """
        batch.check()
        cfg, store, var = self.config, self.params, self.variant
        if train and rng is None and (cfg.dropout > 0 or cfg.irt == "3PL"):
            raise ContractError("train-mode forward needs an rng")
        valid = batch.valid()
        x = embed_exercise(store, cfg.irt, batch.concepts, batch.exercises)
        y = embed_interaction(
            store,
            cfg.irt,
            batch.concepts,
            batch.responses,
            batch.exercises,
            batch.lengths,
            train=train,
            rng=guess_rng if guess_rng is not None else rng,
            guess_in_eval=cfg.guess_in_eval,
        )

        yhat = lse_forward(y, store, train=train, rng=rng, dropout=cfg.dropout) if var.learning_state else None

        labels = gamma = h = None
        if var.knowledge_state:
            if var.enhancement:
                labels = labels_or_shared(yhat.data, clusters, valid)
                gamma = combined_attention(x, state_similarity(yhat), cluster_mask(labels))
            else:
                gamma = exercise_attention(x)
            h = knowledge_state(gamma, y)

        if var.knowledge_state and var.learning_state:
            z = fuse(h, yhat, store)
        elif var.knowledge_state:
            z = h
        else:
            z = yhat

        pred = predict(z[:, :-1], x[:, 1:], store)
        targets = batch.responses[:, 1:]
        mask = valid[:, 1:]
        return ForwardResult(pred, targets, mask, x, y, yhat, h, z, gamma, labels)

    def loss(self, result: ForwardResult):
        return bce_loss(result.pred, result.targets, result.mask)


def make_variant(config: ModelConfig, n_concepts: int, n_exercises: int, rng=None) -> LSKT:
    if config.ablation not in VARIANTS:
        raise ConfigError(f"unknown variant {config.ablation!r}; expected one of {tuple(VARIANTS)}")
    return LSKT(config, n_concepts, n_exercises, rng)
