"""Per-node SGD with dropout, sampled non-links and cost-sensitive weighting."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .graph import SparseGraph, sample_non_links
from .models import (
    DropoutMasks,
    ModelParams,
    SparseGradient,
    Variant,
    _loss_from_trace,
    backward,
    example_gradient,
    example_loss,
    forward_example,
)
from .numerics import STREAM_TRAIN, bernoulli_mask, make_rng

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    """Parameters or loss became non-finite; usually the learning rate is too high."""

    def __init__(self, epoch: int, learning_rate: float, detail: str):
        super().__init__(f"training diverged at epoch {epoch} (learning_rate={learning_rate}): {detail}")
        self.epoch = epoch
        self.learning_rate = learning_rate
        self.detail = detail

    def diagnostic(self) -> dict:
        return {"error": "divergence", "epoch": self.epoch,
                "learning_rate": self.learning_rate, "detail": self.detail}


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    max_epochs: int = 500
    keep_prob_hidden: float = 0.5
    keep_prob_input: float = 0.5
    # None means neg_ratio * deg(i), capped by the number of non-links
    neg_samples_per_node: int | None = None
    neg_ratio: float = 5.0
    eta: str | float = "auto"
    weight_decay: float = 0.0
    seed: int = 0
    convergence_tol: float = 1e-4
    # epoch losses are averaged over this many epochs before the tolerance test
    convergence_window: int = 10
    rho: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        for name in ("keep_prob_hidden", "keep_prob_input"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.convergence_window < 1:
            raise ConfigError("convergence_window must be >= 1")
        if isinstance(self.eta, str):
            if self.eta.lower() != "auto":
                self.eta = float(self.eta)
            else:
                self.eta = "auto"
        if self.rho < 0:
            raise ConfigError("rho must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epochs_run: int = 0
    eta_used: float = 0.0
    converged: bool = False
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d


def compute_eta(num_links: int, num_nonlink_samples: int, policy: str | float = "auto") -> float:
    """Weight of the sampled negative terms.

    ``"auto"`` balances the two classes so that ``eta * #neg == #pos``; a
    number is returned unchanged.
    """
    if not isinstance(policy, str):
        return float(policy)
    if num_links <= 0 or num_nonlink_samples <= 0:
        raise ConfigError("compute_eta needs positive link and non-link counts")
    return num_links / num_nonlink_samples


def _neg_count(cfg: TrainConfig, deg: int, n: int) -> int:
    room = n - 1 - deg
    if cfg.neg_samples_per_node is not None:
        return min(cfg.neg_samples_per_node, room)
    return min(int(round(cfg.neg_ratio * deg)), room)


def _apply_step(p: ModelParams, sg: SparseGradient, lr: float, weight_decay: float) -> None:
    if weight_decay:
        shrink = 1.0 - lr * weight_decay
        p.W2 *= shrink
        if not p.tied:
            p.W1_untied *= shrink
    p.W2[sg.index] -= lr * sg.dW2_rows
    if len(sg.W1_cols):
        if p.tied:
            p.W2[sg.W1_cols] -= lr * sg.dW1_cols.T
        else:
            p.W1_untied[:, sg.W1_cols] -= lr * sg.dW1_cols
    p.b1 -= lr * sg.db1
    p.b3 -= lr * sg.db3
    p.b2[sg.index] -= lr * sg.db2_rows
    p.b4[sg.index] -= lr * sg.db4_rows


def draw_masks(p: ModelParams, cfg: TrainConfig, rng: np.random.Generator) -> DropoutMasks:
    """One hidden mask shared by both branches, plus an input mask for the AE branch."""
    xi_h = bernoulli_mask(p.K, cfg.keep_prob_hidden, rng)
    if p.variant.uses_ae:
        xi_in = bernoulli_mask(p.N, cfg.keep_prob_input, rng)
    else:
        xi_in = np.ones(p.N)
    return DropoutMasks(xi_h, xi_in)


def _run_epoch(p: ModelParams, g_train: SparseGraph, cfg: TrainConfig, rng: np.random.Generator,
               deg: np.ndarray, losses: list, etas: list) -> None:
    for i in rng.permutation(p.N):
        d = int(deg[i])
        if d == 0:
            continue
        neg = sample_non_links(g_train, int(i), _neg_count(cfg, d, p.N), rng)
        eta = compute_eta(d, len(neg), cfg.eta) if len(neg) else 1.0
        masks = draw_masks(p, cfg, rng)
        tr, ex = forward_example(p, g_train, int(i), neg, masks, eta, check=False)
        losses.append(_loss_from_trace(p, tr, ex))
        etas.append(eta)
        if cfg.learning_rate:
            _apply_step(p, backward(p, tr, ex, int(i)), cfg.learning_rate, cfg.weight_decay)


def train(params: ModelParams, g_train: SparseGraph, cfg: TrainConfig,
          progress: bool = False, on_epoch=None) -> tuple[ModelParams, TrainReport]:
    """Train a copy of ``params`` on ``g_train``.

    One SGD example per node per epoch, nodes visited in a seeded random
    order. Weight decay shrinks the weight matrices only, never the biases.
    Stops after ``cfg.max_epochs`` or once the mean loss of the last
    ``cfg.convergence_window`` epochs differs from the mean of the window
    before it by less than ``cfg.convergence_tol`` (relative). Dropout makes
    single-epoch losses noisy, so they are never compared directly.
    ``on_epoch(epoch, params, mean_loss)`` is called after every epoch.
    """
    if g_train.num_nodes != params.N:
        raise ConfigError(f"graph has {g_train.num_nodes} nodes, model expects {params.N}")
    if g_train.num_edges == 0:
        raise ConfigError("training graph has no edges")
    cfg.validate()
    p = params.copy()
    p.keep_hidden = cfg.keep_prob_hidden
    p.keep_input = cfg.keep_prob_input if p.variant.uses_ae else 1.0
    p.rho = cfg.rho
    rng = make_rng(cfg.seed, STREAM_TRAIN)
    report = TrainReport()
    start = time.perf_counter()
    deg = g_train.degree
    win = cfg.convergence_window
    for epoch in range(1, cfg.max_epochs + 1):
        losses, etas = [], []
        # overflow shows up as a non-finite loss or parameter, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            _run_epoch(p, g_train, cfg, rng, deg, losses, etas)
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingDiverged(epoch, cfg.learning_rate, "non-finite epoch loss")
        try:
            p.check_finite()
        except FloatingPointError as exc:
            raise TrainingDiverged(epoch, cfg.learning_rate, str(exc)) from None
        report.epoch_losses.append(mean_loss)
        report.eta_used = float(np.mean(etas))
        report.epochs_run = epoch
        if progress and (epoch == 1 or epoch % 10 == 0):
            log.info("epoch %d loss %.6f", epoch, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, p, mean_loss)
        hist = report.epoch_losses
        if len(hist) >= 2 * win:
            cur, prev = np.mean(hist[-win:]), np.mean(hist[-2 * win:-win])
            if abs(cur - prev) <= cfg.convergence_tol * abs(prev):
                report.converged = True
                break
    report.wall_time = time.perf_counter() - start
    return p, report


def gradient_check(p: ModelParams, g: SparseGraph, i: int, neg, masks: DropoutMasks,
                   eta: float = 1.0, epsilon: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between :func:`example_gradient` and central differences.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    ``floor`` keeps entries whose gradient is essentially zero (dropped
    units, unused biases) from dividing round-off by zero.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    analytic = example_gradient(p, g, i, neg, masks, eta).arrays()
    q = p.copy()
    worst = 0.0
    for name, arr in q.arrays().items():
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = example_loss(q, g, i, neg, masks, eta)
            flat[k] = orig - epsilon
            down = example_loss(q, g, i, neg, masks, eta)
            flat[k] = orig
            num = (up - down) / (2 * epsilon)
            err = abs(ga[k] - num) / max(abs(ga[k]), abs(num), floor)
            worst = max(worst, err)
    return worst


@dataclass
class CheckInstance:
    params: ModelParams
    graph: SparseGraph
    node: int
    neg: np.ndarray
    masks: DropoutMasks
    eta: float


def random_check_instance(variant: Variant | str, tied: bool, seed: int, k: int = 4, n: int = 8,
                          keep_hidden: float = 0.5, keep_input: float = 0.5,
                          margin: float = 1e-2, rho: float = 1.0) -> CheckInstance:
    """Random small model plus one fixed training example for gradient checks.

    Hidden biases are shifted so every ReLU pre-activation sits at least
    ``margin`` away from the kink.
    """
    from .models import _forward, Mode

    rng = np.random.default_rng(seed)
    variant = Variant(variant)
    W2 = rng.normal(0, 0.5, size=(n, k))
    W1 = None if tied else rng.normal(0, 0.5, size=(k, n))
    p = ModelParams(variant, W2, rng.normal(0, 0.3, k), rng.normal(0, 0.3, n),
                    rng.normal(0, 0.3, k), rng.normal(0, 0.3, n), tied, rho,
                    keep_hidden, keep_input, W1)
    upper = np.triu(rng.random((n, n)) < 0.45, 1)
    edges = np.argwhere(upper)
    g = SparseGraph.from_edges(n, edges)
    degrees = g.degree
    node = int(np.argmax((degrees > 0) & (degrees < n - 1)))
    pool = np.setdiff1d(np.arange(n), np.append(g.neighbors[node], node))
    neg = np.sort(rng.choice(pool, size=min(len(pool), 3), replace=False))
    masks = DropoutMasks(bernoulli_mask(k, keep_hidden, rng), bernoulli_mask(n, keep_input, rng))
    eta = float(rng.uniform(0.2, 2.0))
    tr = _forward(p, g.neighbors[node], node, None, masks, Mode.TRAIN)
    for z, b in ((tr.z1, p.b1), (tr.z2, p.b3)):
        if z is None:
            continue
        close = np.abs(z) < margin
        b[close] += np.where(z[close] >= 0, 2 * margin, -2 * margin)
    return CheckInstance(p, g, node, neg, masks, eta)
