"""Supervised transfer baselines that use labeled target windows.

* linear probe (LP): only the classifier head is retrained;
* fine tune (FT): every parameter is retrained;
* LP then FT (LPFT): a linear probe followed by a fine tune of the result.

Each starts from the source model moved to the target site (first convolution
re-initialized when the channel counts differ).
"""

from __future__ import annotations

from enum import Enum

from data.windows import LabeledWindows
from model.convlstm import ModelParams, classifier_names
from training.adapt import untrained_target
from training.config import TrainConfig
from training.supervised import train_supervised


class BaselineMethod(str, Enum):
    LP = "lp"
    FT = "ft"
    LPFT = "lpft"


def _on_target(source: ModelParams, data: LabeledWindows, config: TrainConfig) -> ModelParams:
    if len(data) == 0:
        raise ValueError("supervised baselines need labeled target windows")
    if data.windows.ndim != 3:
        raise ValueError(f"windows must be [N, C, T], got {data.windows.shape}")
    return untrained_target(source, data.num_channels, seed=config.seed)


def linear_probe(source: ModelParams, data: LabeledWindows, config: TrainConfig) -> ModelParams:
    """Retrain the head on target labels; the embedder stays bit-identical."""
    start = _on_target(source, data, config)
    model, _ = train_supervised(
        start, data, config, trainable=classifier_names(start.meta), desc="Linear probe"
    )
    return model


def fine_tune(source: ModelParams, data: LabeledWindows, config: TrainConfig) -> ModelParams:
    """Retrain every parameter on target labels, starting from ``source``."""
    start = _on_target(source, data, config)
    model, _ = train_supervised(start, data, config, desc="Fine tune")
    return model


def lp_ft(source: ModelParams, data: LabeledWindows, config: TrainConfig) -> ModelParams:
    return fine_tune(linear_probe(source, data, config), data, config)


def run_baseline(
    method: BaselineMethod, source: ModelParams, data: LabeledWindows, config: TrainConfig
) -> ModelParams:
    method = BaselineMethod(method)
    if method is BaselineMethod.LP:
        return linear_probe(source, data, config)
    if method is BaselineMethod.FT:
        return fine_tune(source, data, config)
    return lp_ft(source, data, config)
