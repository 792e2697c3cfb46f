"""Exact dropout objectives versus their second-order surrogates.

Setting: bias-free models, sigmoid link, cross entropy summed over every
pair ``(i, j)``, keep probability 1/2. With ``xi`` Bernoulli(1/2) the
centered mask ``xi - e/2`` is symmetric, so the first-order term of the
expansion vanishes and the surrogate is

    base loss at half-scaled logits + (1/8) * sum of adaptively weighted squares.

Hidden-unit dropout in a linear-activation AE is the MF case with column
``i`` of ``W1`` replaced by ``W1 @ A_i``, i.e. call
``taylor_mf_objective(W1 @ A, W2, A)`` (and likewise for the exact value).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .numerics import cross_entropy, sigmoid

MAX_MF_LATENT = 20
MAX_AE_DEGREE = 20


@dataclass
class TaylorDiagnostics:
    surrogate_value: float
    base_loss: float
    penalty: float
    # MF: row i is lambda^i (length K). AE input: row j is lambda_j (length N).
    lambda_rows: np.ndarray


def all_masks(d: int) -> np.ndarray:
    """Every binary vector of length ``d`` as rows; row ``r`` holds the bits of ``r``."""
    r = np.arange(2 ** d)
    return ((r[:, None] >> np.arange(d)) & 1).astype(np.float64)


def _mask_mean(values: np.ndarray, d: int) -> np.ndarray:
    """Average over the leading ``2**d`` axis by marginalizing one mask bit at a time.

    Each step averages the two settings of the highest remaining bit, so a
    constant input comes back bit-for-bit unchanged.
    """
    for _ in range(d):
        half = values.shape[0] // 2
        values = 0.5 * (values[:half] + values[half:])
    return values[0]


def _check_binary(A: np.ndarray, n: int) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (n, n):
        raise ValueError(f"A must be {n} x {n}")
    if not np.all((A == 0) | (A == 1)):
        raise ValueError("A must be binary")
    return A


def exact_mf_dropout_objective(W1: np.ndarray, W2: np.ndarray, A: np.ndarray) -> float:
    """Expected cross entropy under hidden dropout, enumerating all ``2**K`` masks."""
    W1, W2 = np.asarray(W1, float), np.asarray(W2, float)
    K, N = W1.shape
    if W2.shape != (N, K):
        raise ValueError("W2 must be N x K")
    if K > MAX_MF_LATENT:
        raise ValueError(f"K={K} needs 2**{K} masks; refusing above K={MAX_MF_LATENT}")
    A = _check_binary(A, N)
    masks = all_masks(K)
    per_pair = np.empty((N, N))
    for i in range(N):
        logits = (masks * W1[:, i]) @ W2.T          # (2**K, N)
        per_pair[i] = _mask_mean(cross_entropy(A[i], sigmoid(logits)), K)
    return float(per_pair.sum())


def taylor_mf_objective(W1: np.ndarray, W2: np.ndarray, A: np.ndarray) -> TaylorDiagnostics:
    W1, W2 = np.asarray(W1, float), np.asarray(W2, float)
    K, N = W1.shape
    A = _check_binary(A, N)
    G = sigmoid(0.5 * (W2 @ W1).T)                   # G[i, j] = g(W2^j W1_i / 2)
    base = float(cross_entropy(A, G).sum())
    lam = (G * (1.0 - G)) @ (W2 ** 2)                # lam[i] = sum_j g(1-g) (W2^j)^2
    penalty = float(np.sum(lam * (W1.T ** 2)))
    return TaylorDiagnostics(base + penalty / 8.0, base, penalty, lam)


def exact_ae_input_dropout_objective(W: np.ndarray, A: np.ndarray) -> float:
    """Expected cross entropy of ``g(W (xi * A_i))`` over every input mask.

    Masking a zero coordinate changes nothing, so only the ``2**deg(i)``
    masks on the support of ``A_i`` are enumerated.
    """
    W = np.asarray(W, float)
    N = W.shape[0]
    if W.shape != (N, N):
        raise ValueError("W must be square")
    A = _check_binary(A, N)
    max_deg = int(A.sum(axis=1).max()) if N else 0
    if max_deg > MAX_AE_DEGREE:
        raise ValueError(f"row support {max_deg} needs 2**{max_deg} masks; "
                         f"refusing above {MAX_AE_DEGREE}")
    per_pair = np.empty((N, N))
    for i in range(N):
        support = np.flatnonzero(A[i])
        d = len(support)
        logits = all_masks(d) @ W[:, support].T      # (2**d, N)
        per_pair[i] = _mask_mean(cross_entropy(A[i], sigmoid(logits)), d)
    return float(per_pair.sum())


def taylor_ae_input_objective(W: np.ndarray, A: np.ndarray) -> TaylorDiagnostics:
    W = np.asarray(W, float)
    N = W.shape[0]
    A = _check_binary(A, N)
    G = sigmoid(0.5 * (A @ W.T))                     # G[i, j] = g(W^j A_i / 2)
    base = float(cross_entropy(A, G).sum())
    lam = (G * (1.0 - G)).T @ (A ** 2)               # lam[j] = sum_i g(1-g) (A_i)^2
    penalty = float(np.sum((W ** 2) * lam))
    return TaylorDiagnostics(base + penalty / 8.0, base, penalty, lam)


@dataclass
class GapRow:
    scale: float
    exact: float
    surrogate: float
    gap: float


def surrogate_gap_report(case: str, params, A: np.ndarray, scales) -> list[GapRow]:
    """Exact and surrogate objectives with every weight matrix multiplied by each scale.

    ``case`` is ``"MF"`` with ``params = (W1, W2)`` or ``"AE_INPUT"`` with
    ``params = W``.
    """
    scales = [float(s) for s in scales]
    if any(s > 1 for s in scales) or scales != sorted(scales, reverse=True):
        raise ValueError("scales must be sorted descending and each <= 1")
    case = case.upper()
    rows = []
    for s in scales:
        if case == "MF":
            W1, W2 = params
            exact = exact_mf_dropout_objective(s * W1, s * W2, A)
            sur = taylor_mf_objective(s * W1, s * W2, A).surrogate_value
        elif case in ("AE_INPUT", "AE"):
            exact = exact_ae_input_dropout_objective(s * params, A)
            sur = taylor_ae_input_objective(s * params, A).surrogate_value
        else:
            raise ValueError(f"unknown case {case!r}")
        rows.append(GapRow(s, exact, sur, abs(exact - sur)))
    return rows


def gap_report_csv(rows: list[GapRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scale", "exact", "surrogate", "gap"])
    for r in rows:
        w.writerow([repr(r.scale), repr(r.exact), repr(r.surrogate), repr(r.gap)])
    return buf.getvalue()


def random_instance(case: str, seed: int, n: int, k: int = 3, density: float = 0.4,
                    weight_std: float = 0.5, max_degree: int | None = None):
    """Random (params, A) pair with a symmetric zero-diagonal binary ``A``."""
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < density, 1)
    A = (upper | upper.T).astype(np.float64)
    if max_degree is not None:
        for i in range(n):
            extra = np.flatnonzero(A[i])[max_degree:]
            A[i, extra] = A[extra, i] = 0.0
    if case.upper() == "MF":
        return (rng.normal(0, weight_std, (k, n)), rng.normal(0, weight_std, (n, k))), A
    return rng.normal(0, weight_std, (n, n)), A
