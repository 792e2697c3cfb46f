"""MF, AE and the joint MF+AE model: parameters, forward passes and gradients.

Shapes follow the usual layout: ``W1`` is ``K x N`` (encoder), ``W2`` is
``N x K`` (decoder). With tied weights only ``W2`` is stored and ``W1`` is the
view ``W2.T``, so the two can never drift apart.

Every training example is one node ``i``: its training neighbors are the
positive outputs and a sampled set of non-neighbors the negative outputs.
Only those output coordinates are computed during training.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .graph import SparseGraph
from .numerics import check_finite, cross_entropy, relu, relu_grad, sigmoid


class Variant(str, enum.Enum):
    MF_LINEAR = "MF_LINEAR"
    AE = "AE"
    JOINT = "JOINT"

    @property
    def uses_ae(self) -> bool:
        return self is not Variant.MF_LINEAR

    @property
    def uses_mf(self) -> bool:
        return self is not Variant.AE


class Mode(str, enum.Enum):
    TRAIN = "TRAIN"
    INFER = "INFER"


@dataclass(eq=False)
class ModelParams:
    variant: Variant
    W2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    b4: np.ndarray
    tied: bool = True
    rho: float = 1.0
    keep_hidden: float = 1.0
    keep_input: float = 1.0
    W1_untied: np.ndarray | None = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        N, K = self.W2.shape
        if self.tied:
            self.W1_untied = None
        elif self.W1_untied is None or self.W1_untied.shape != (K, N):
            raise ValueError("untied model needs W1 of shape (K, N)")
        for name, size in (("b1", K), ("b2", N), ("b3", K), ("b4", N)):
            if getattr(self, name).shape != (size,):
                raise ValueError(f"{name} must have shape ({size},)")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")

    @property
    def W1(self) -> np.ndarray:
        return self.W2.T if self.tied else self.W1_untied

    @property
    def N(self) -> int:
        return self.W2.shape[0]

    @property
    def K(self) -> int:
        return self.W2.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        """Independent parameter arrays; a tied model has no separate ``W1``."""
        out = {"W2": self.W2, "b1": self.b1, "b2": self.b2, "b3": self.b3, "b4": self.b4}
        if not self.tied:
            out["W1"] = self.W1_untied
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.variant, self.W2.copy(), self.b1.copy(), self.b2.copy(), self.b3.copy(),
            self.b4.copy(), self.tied, self.rho, self.keep_hidden, self.keep_input,
            None if self.W1_untied is None else self.W1_untied.copy(),
        )

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            check_finite(name, arr)


def init_params(variant: Variant | str, num_nodes: int, k: int, rng: np.random.Generator, *,
                tied: bool = True, rho: float = 1.0, keep_hidden: float = 1.0,
                keep_input: float = 1.0, init_scale: float = 0.05) -> ModelParams:
    """Weights drawn from ``U(-init_scale, init_scale) / sqrt(K)``, biases zero."""
    scale = init_scale / np.sqrt(k)
    W2 = rng.uniform(-scale, scale, size=(num_nodes, k))
    W1 = None if tied else rng.uniform(-scale, scale, size=(k, num_nodes))
    zk, zn = np.zeros(k), np.zeros(num_nodes)
    return ModelParams(Variant(variant), W2, zk.copy(), zn.copy(), zk.copy(), zn.copy(),
                       tied, rho, keep_hidden, keep_input, W1)


@dataclass
class DropoutMasks:
    xi_h: np.ndarray
    xi_in: np.ndarray

    @classmethod
    def ones(cls, k: int, n: int) -> "DropoutMasks":
        return cls(np.ones(k), np.ones(n))


@dataclass
class ForwardTrace:
    """Activations of one example; reconstructions are restricted to ``index``."""

    index: np.ndarray
    xi_h: np.ndarray
    z1: np.ndarray | None = None
    h1: np.ndarray | None = None
    recon_ae: np.ndarray | None = None
    z2: np.ndarray | None = None
    h2: np.ndarray | None = None
    recon_mf: np.ndarray | None = None
    ae_inputs: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


@dataclass
class Gradients:
    """Dense gradient arrays; ``W1`` is ``None`` for a tied model."""

    W2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    b4: np.ndarray
    W1: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"W2": self.W2, "b1": self.b1, "b2": self.b2, "b3": self.b3, "b4": self.b4}
        if self.W1 is not None:
            out["W1"] = self.W1
        return out


def _forward(p: ModelParams, neighbors: np.ndarray, i: int | None, index: np.ndarray | None,
             masks: DropoutMasks | None, mode: Mode, branches=(True, True)) -> ForwardTrace:
    """Shared forward pass.

    ``neighbors`` are the nonzero coordinates of the AE input ``A_i`` and
    ``index`` selects output coordinates (``None`` for all ``N``).
    """
    W1, W2 = p.W1, p.W2
    W2_rows = W2 if index is None else W2[index]
    if mode is Mode.TRAIN:
        xi_h = masks.xi_h
    else:
        xi_h = np.full(p.K, p.keep_hidden)
    tr = ForwardTrace(index=np.arange(p.N) if index is None else index, xi_h=xi_h)
    want_ae, want_mf = branches
    if want_ae and p.variant.uses_ae:
        if mode is Mode.TRAIN:
            active = neighbors[masks.xi_in[neighbors] > 0]
            z1 = W1[:, active].sum(axis=1) + p.b1
        else:
            active = neighbors
            z1 = p.keep_input * W1[:, active].sum(axis=1) + p.b1
        tr.ae_inputs = active
        tr.z1 = z1
        tr.h1 = relu(z1)
        b2 = p.b2 if index is None else p.b2[index]
        tr.recon_ae = sigmoid(W2_rows @ (xi_h * tr.h1) + b2)
    if want_mf and p.variant.uses_mf:
        z2 = W1[:, i] + p.b3
        tr.z2 = z2
        tr.h2 = z2.copy() if p.variant is Variant.MF_LINEAR else relu(z2)
        b4 = p.b4 if index is None else p.b4[index]
        tr.recon_mf = sigmoid(W2_rows @ (xi_h * tr.h2) + b4)
    return tr


def _check_masks(p: ModelParams, masks: DropoutMasks | None, mode: Mode) -> None:
    if mode is Mode.TRAIN:
        if masks is None:
            raise ValueError("TRAIN mode requires dropout masks")
        if masks.xi_h.shape != (p.K,) or masks.xi_in.shape != (p.N,):
            raise ValueError("mask shapes do not match the model")


def ae_forward(p: ModelParams, a_i: np.ndarray, masks: DropoutMasks | None = None,
               mode: Mode | str = Mode.TRAIN) -> tuple[np.ndarray, np.ndarray]:
    """AE branch on a binary adjacency row; returns ``(h1, recon)`` over all N outputs."""
    mode = Mode(mode)
    a_i = np.asarray(a_i)
    if a_i.shape != (p.N,):
        raise ValueError(f"input row must have length {p.N}")
    _check_masks(p, masks, mode)
    if not p.variant.uses_ae:
        raise ValueError(f"{p.variant.value} model has no AE branch")
    tr = _forward(p, np.flatnonzero(a_i), None, None, masks, mode, (True, False))
    return tr.h1, tr.recon_ae


def mf_forward(p: ModelParams, i: int, masks: DropoutMasks | None = None,
               mode: Mode | str = Mode.TRAIN) -> tuple[np.ndarray, np.ndarray]:
    """MF branch for node ``i``; returns ``(h2, recon)`` over all N outputs."""
    mode = Mode(mode)
    if not 0 <= i < p.N:
        raise IndexError(f"node {i} out of range for N={p.N}")
    _check_masks(p, masks, mode)
    if not p.variant.uses_mf:
        raise ValueError("AE model has no MF branch")
    tr = _forward(p, np.zeros(0, np.int64), i, None, masks, mode, (False, True))
    return tr.h2, tr.recon_mf


class _Example(NamedTuple):
    index: np.ndarray
    target: np.ndarray
    weight: np.ndarray


def _example(g: SparseGraph, i: int, neg, eta: float, check: bool = True) -> _Example:
    pos = g.neighbors[i]
    neg = np.asarray(neg, dtype=np.int64)
    if check and np.intersect1d(pos, neg).size:
        raise ValueError(f"negative samples overlap the neighbors of node {i}")
    index = np.concatenate([pos, neg])
    target = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    weight = np.concatenate([np.ones(len(pos)), np.full(len(neg), float(eta))])
    return _Example(index, target, weight)


def _branch_weights(p: ModelParams) -> tuple[float, float]:
    if p.variant is Variant.JOINT:
        return 1.0, p.rho
    if p.variant is Variant.AE:
        return 1.0, 0.0
    return 0.0, 1.0


def _loss_from_trace(p: ModelParams, tr: ForwardTrace, ex: _Example) -> float:
    w_ae, w_mf = _branch_weights(p)
    total = 0.0
    if tr.recon_ae is not None:
        total += w_ae * float(np.dot(ex.weight, cross_entropy(ex.target, tr.recon_ae)))
    if tr.recon_mf is not None:
        total += w_mf * float(np.dot(ex.weight, cross_entropy(ex.target, tr.recon_mf)))
    return total


def forward_example(p: ModelParams, g_train: SparseGraph, i: int, neg, masks: DropoutMasks,
                    eta: float, check: bool = True) -> tuple[ForwardTrace, _Example]:
    """TRAIN-mode trace of node ``i`` restricted to its positive and negative outputs.

    ``check=False`` skips the argument validation; the training loop uses it
    because its negatives come straight from :func:`sample_non_links`.
    """
    if check:
        _check_masks(p, masks, Mode.TRAIN)
    ex = _example(g_train, i, neg, eta, check)
    tr = _forward(p, g_train.neighbors[i], i, ex.index, masks, Mode.TRAIN)
    return tr, ex


def example_loss(p: ModelParams, g_train: SparseGraph, i: int, neg, masks: DropoutMasks,
                 eta: float) -> float:
    """Cost-weighted cross entropy of one node, ``L_AE + rho * L_MF`` for the joint model."""
    tr, ex = forward_example(p, g_train, i, neg, masks, eta)
    return _loss_from_trace(p, tr, ex)


class SparseGradient(NamedTuple):
    """Gradient of one example, nonzero only on the touched rows/columns.

    ``dW2_rows`` holds rows ``index`` of the ``W2`` gradient, ``dW1_cols``
    columns ``W1_cols`` of the ``W1`` gradient (repeated columns accumulate).
    """

    index: np.ndarray
    dW2_rows: np.ndarray
    W1_cols: np.ndarray
    dW1_cols: np.ndarray
    db1: np.ndarray
    db2_rows: np.ndarray
    db3: np.ndarray
    db4_rows: np.ndarray


def backward(p: ModelParams, tr: ForwardTrace, ex: _Example, i: int) -> SparseGradient:
    """Manual backprop; sigmoid followed by cross entropy gives delta ``recon - target``."""
    w_ae, w_mf = _branch_weights(p)
    W2_rows = p.W2[ex.index]
    dW2 = np.zeros((len(ex.index), p.K))
    cols, col_grads = [], []
    zk = np.zeros(p.K)
    db1, db3 = zk, zk
    db2, db4 = np.zeros(len(ex.index)), np.zeros(len(ex.index))
    if tr.recon_ae is not None and w_ae:
        du = w_ae * ex.weight * (tr.recon_ae - ex.target)
        db2 = du
        dW2 += du[:, None] * (tr.xi_h * tr.h1)
        dz1 = tr.xi_h * (W2_rows.T @ du) * relu_grad(tr.z1)
        db1 = dz1
        cols.append(tr.ae_inputs)
        col_grads.append(np.repeat(dz1[:, None], len(tr.ae_inputs), axis=1))
    if tr.recon_mf is not None and w_mf:
        du = w_mf * ex.weight * (tr.recon_mf - ex.target)
        db4 = du
        dW2 += du[:, None] * (tr.xi_h * tr.h2)
        dh2 = tr.xi_h * (W2_rows.T @ du)
        dz2 = dh2 if p.variant is Variant.MF_LINEAR else dh2 * relu_grad(tr.z2)
        db3 = dz2
        cols.append(np.array([i]))
        col_grads.append(dz2[:, None])
    if cols:
        W1_cols = np.concatenate(cols)
        dW1 = np.concatenate(col_grads, axis=1)
    else:
        W1_cols, dW1 = np.zeros(0, np.int64), np.zeros((p.K, 0))
    return SparseGradient(ex.index, dW2, W1_cols, dW1, db1, db2, db3, db4)


def densify(p: ModelParams, sg: SparseGradient) -> Gradients:
    gW2 = np.zeros_like(p.W2)
    np.add.at(gW2, sg.index, sg.dW2_rows)
    gW1 = np.zeros((p.K, p.N))
    np.add.at(gW1.T, sg.W1_cols, sg.dW1_cols.T)
    gb2 = np.zeros(p.N)
    gb2[sg.index] = sg.db2_rows
    gb4 = np.zeros(p.N)
    gb4[sg.index] = sg.db4_rows
    if p.tied:
        return Gradients(gW2 + gW1.T, sg.db1.copy(), gb2, sg.db3.copy(), gb4)
    return Gradients(gW2, sg.db1.copy(), gb2, sg.db3.copy(), gb4, gW1)


def example_gradient(p: ModelParams, g_train: SparseGraph, i: int, neg, masks: DropoutMasks,
                     eta: float) -> Gradients:
    """Exact gradient of :func:`example_loss` with respect to every parameter."""
    tr, ex = forward_example(p, g_train, i, neg, masks, eta)
    return densify(p, backward(p, tr, ex, i))


def combine_predictions(recon_ae, recon_mf, rho: float):
    """Weighted geometric mean ``(ae * mf**rho) ** (1 / (1 + rho))``."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    recon_ae = np.asarray(recon_ae, dtype=np.float64)
    if rho == 0:
        return recon_ae.copy()
    recon_mf = np.asarray(recon_mf, dtype=np.float64)
    return np.exp((np.log(recon_ae) + rho * np.log(recon_mf)) / (1.0 + rho))


def score_node(p: ModelParams, g_train: SparseGraph, i: int) -> np.ndarray:
    """Inference-mode predictions of node ``i`` against every node."""
    tr = _forward(p, g_train.neighbors[i], i, None, None, Mode.INFER)
    return _combine_trace(p, tr)


def _combine_trace(p: ModelParams, tr: ForwardTrace) -> np.ndarray:
    if p.variant is Variant.AE:
        return tr.recon_ae
    if p.variant is Variant.MF_LINEAR:
        return tr.recon_mf
    return combine_predictions(tr.recon_ae, tr.recon_mf, p.rho)


def score_matrix(p: ModelParams, g_train: SparseGraph) -> np.ndarray:
    """All inference-mode predictions at once, row ``i`` being node ``i``'s scores."""
    if g_train.num_nodes != p.N:
        raise ValueError(f"graph has {g_train.num_nodes} nodes, model expects {p.N}")
    out_ae = out_mf = None
    if p.variant.uses_ae:
        A = g_train.adjacency()
        H1 = relu(p.keep_input * (A @ p.W1.T) + p.b1)
        out_ae = sigmoid((p.keep_hidden * H1) @ p.W2.T + p.b2)
    if p.variant.uses_mf:
        Z2 = p.W1.T + p.b3
        H2 = Z2 if p.variant is Variant.MF_LINEAR else relu(Z2)
        out_mf = sigmoid((p.keep_hidden * H2) @ p.W2.T + p.b4)
    if p.variant is Variant.AE:
        return out_ae
    if p.variant is Variant.MF_LINEAR:
        return out_mf
    return combine_predictions(out_ae, out_mf, p.rho)


# Checkpoint layout (version 1):
#   line 1: b"MFAE-CHECKPOINT 1\n"
#   line 2: UTF-8 JSON header terminated by b"\n"; keys variant, tied, rho,
#           keep_hidden, keep_input, arrays=[{name, shape}] in storage order
#   rest:   each array as little-endian float64, row-major, concatenated
_MAGIC = b"MFAE-CHECKPOINT 1\n"


def dumps_params(p: ModelParams) -> bytes:
    arrays = p.arrays()
    order = [k for k in ("W1", "W2", "b1", "b2", "b3", "b4") if k in arrays]
    header = {
        "variant": p.variant.value, "tied": p.tied, "rho": p.rho,
        "keep_hidden": p.keep_hidden, "keep_input": p.keep_input,
        "arrays": [{"name": k, "shape": list(arrays[k].shape)} for k in order],
    }
    body = b"".join(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes() for k in order)
    return _MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + body


def loads_params(data: bytes) -> ModelParams:
    if not data.startswith(_MAGIC):
        raise ValueError("not an mfae checkpoint (bad magic line)")
    rest = data[len(_MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode())
    body = memoryview(rest[nl + 1:])
    arrays, offset = {}, 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(body):
            raise ValueError("truncated checkpoint")
        arrays[entry["name"]] = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise ValueError("trailing bytes in checkpoint")
    return ModelParams(
        Variant(header["variant"]), arrays["W2"], arrays["b1"], arrays["b2"], arrays["b3"],
        arrays["b4"], header["tied"], header["rho"], header["keep_hidden"],
        header["keep_input"], arrays.get("W1"),
    )


def save_params(path, p: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_params(p))


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        return loads_params(fh.read())

