"""Random forests with missing-value assignation inside the CART split search."""

from .data import Dataset, MechanismSpec, apply_mechanism, eval_friedman1, gen_friedman1, load_csv, save_csv
from .forest import Forest, ForestParams, predict_complete, predict_with_missing, train_forest

__all__ = [
    "Dataset",
    "Forest",
    "ForestParams",
    "MechanismSpec",
    "apply_mechanism",
    "eval_friedman1",
    "gen_friedman1",
    "load_csv",
    "predict_complete",
    "predict_with_missing",
    "save_csv",
    "train_forest",
]

__version__ = "0.1.0"
