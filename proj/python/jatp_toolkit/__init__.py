"""Toolkit for training and evaluating input-preprocessing defenses
for image classifiers under adaptive attacks."""

try:
    from . import _jatp  # installed wheel layout
except ImportError:  # development tree: extension sits on sys.path directly
    import _jatp
    import sys as _sys

    _sys.modules[__name__ + "._jatp"] = _jatp

from ._jatp import (  # noqa: F401
    ArgumentError,
    AttackSpec,
    AugmentSpec,
    ConfigError,
    Dataset,
    DatasetSpec,
    EvalConfig,
    EvalRow,
    FeatureTap,
    IngestionError,
    LossWeights,
    NumericError,
    Objective,
    OptimizerConfig,
    PerturbationBudget,
    Preprocessor,
    ReportError,
    Scope,
    TapHost,
    TargetModel,
    TargetStrategy,
    TrainConfig,
    TrainVariant,
    bce_loss,
    combined_total,
    craft,
    derive_seed,
    evaluate,
    fooling_rate,
    fsm_loss,
    load_dataset,
    load_preprocessor,
    load_target,
    pixel_loss,
    save_preprocessor,
    save_target,
    train_defense,
    train_target,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
