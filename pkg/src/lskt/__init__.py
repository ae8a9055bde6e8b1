"""Knowledge tracing with IRT-style embeddings, causal learning-state extraction
and cluster-masked attention, built on a small float64 autograd engine."""

from .data import SynthSpec, build_sequences, parse_csv, split, synth_generate
from .metrics import MetricsReport
from .model import LSKT, VARIANTS, ModelConfig, make_variant
from .training import evaluate, train

__all__ = [
    "LSKT",
    "VARIANTS",
    "MetricsReport",
    "ModelConfig",
    "SynthSpec",
    "build_sequences",
    "evaluate",
    "make_variant",
    "parse_csv",
    "split",
    "synth_generate",
    "train",
]

__version__ = "0.1.0"
