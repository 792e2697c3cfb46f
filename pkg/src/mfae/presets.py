"""Named model configurations and the glue that trains and scores them."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .baselines import adamic_adar_scores, rwr_scores
from .graph import SparseGraph
from .models import ModelParams, Variant, init_params, score_matrix
from .numerics import STREAM_INIT, make_rng
from .training import TrainConfig, TrainReport, train

L2_WEIGHT_DECAY = 1e-5
DEFAULT_K = 100


@dataclass(frozen=True)
class Preset:
    name: str
    variant: Variant | None
    keep_hidden: float = 1.0
    keep_input: float = 1.0
    weight_decay: float = 0.0
    tied: bool = True

    @property
    def trainable(self) -> bool:
        return self.variant is not None


PRESETS: dict[str, Preset] = {
    "MF2": Preset("MF2", Variant.MF_LINEAR, 1.0, 1.0, L2_WEIGHT_DECAY),
    "AE2": Preset("AE2", Variant.AE, 1.0, 1.0, L2_WEIGHT_DECAY),
    "MFd": Preset("MFd", Variant.MF_LINEAR, 0.5, 1.0, 0.0),
    "AEd": Preset("AEd", Variant.AE, 0.5, 0.5, 0.0),
    "MF+AE": Preset("MF+AE", Variant.JOINT, 0.5, 0.5, 0.0),
    "AA": Preset("AA", None),
    "RW": Preset("RW", None),
}
TRAINABLE = tuple(k for k, v in PRESETS.items() if v.trainable)


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def preset_config(name: str, **overrides) -> TrainConfig:
    """TrainConfig carrying a preset's regularization, with explicit overrides applied."""
    pr = get_preset(name)
    if not pr.trainable:
        raise ValueError(f"{name} is a baseline and has no training phase")
    cfg = TrainConfig(keep_prob_hidden=pr.keep_hidden, keep_prob_input=pr.keep_input,
                      weight_decay=pr.weight_decay)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides)


def fit_preset(name: str, g_train: SparseGraph, cfg: TrainConfig, k: int = DEFAULT_K,
               tied: bool | None = None, init_seed: int | None = None,
               init_scale: float = 0.05, progress: bool = False) -> tuple[ModelParams, TrainReport]:
    pr = get_preset(name)
    tied = pr.tied if tied is None else tied
    seed = cfg.seed if init_seed is None else init_seed
    p0 = init_params(pr.variant, g_train.num_nodes, k, make_rng(seed, STREAM_INIT), tied=tied,
                     rho=cfg.rho, init_scale=init_scale)
    return train(p0, g_train, cfg, progress=progress)


def model_scorer(p: ModelParams, g_train: SparseGraph):
    S = score_matrix(p, g_train)
    return lambda i: S[i]


def baseline_scorer(name: str, g_train: SparseGraph, restart: float = 0.5):
    if name == "AA":
        return lambda i: adamic_adar_scores(g_train, i).scores
    if name == "RW":
        return lambda i: rwr_scores(g_train, i, restart=restart).scores
    raise ValueError(f"{name} is not a baseline")
