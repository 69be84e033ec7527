"""Joint dialogue-state tracker with masked global/local context fusion."""

from .data import (
    Dialogue,
    GenShape,
    Ontology,
    StateOp,
    Turn,
    Vocabulary,
    build_vocab,
    derive_state_ops,
    generate_corpus,
    load_corpus,
    repair_inheritance,
    save_corpus,
)
from .model import ModelConfig, StateTracker
from .training import TrainConfig, evaluate, grad_check, run_ablation, train

__all__ = [
    "Dialogue", "GenShape", "Ontology", "StateOp", "Turn", "Vocabulary",
    "build_vocab", "derive_state_ops", "generate_corpus", "load_corpus",
    "repair_inheritance", "save_corpus",
    "ModelConfig", "StateTracker",
    "TrainConfig", "evaluate", "grad_check", "run_ablation", "train",
]
