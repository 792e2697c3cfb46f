"""Candidate-restricted ranking evaluation and adjacency rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.stats import rankdata

from .graph import SplitResult, two_hop_candidates


class UndefinedMetric(ValueError):
    """AUC needs at least one positive and one negative label."""


class EmptyEvaluation(ValueError):
    """No node had both a held-out link and a non-link among its candidates."""


@dataclass
class NodeResult:
    node: int
    candidates: int
    positives: int
    prec_at_k: float
    auc: float


@dataclass
class EvalReport:
    prec_at_k: float
    auc: float
    k: int
    nodes_evaluated: int
    per_node: list[NodeResult] | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.per_node is None:
            d.pop("per_node")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


CSV_FIELDS = ("dataset", "model", "prec@10", "auc", "nodes_evaluated", "seed")


def csv_row(report: EvalReport, dataset: str, model: str, seed: int) -> str:
    """One CSV line: dataset, model, prec@k, auc, nodes_evaluated, seed."""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(
        [dataset, model, repr(report.prec_at_k), repr(report.auc), report.nodes_evaluated, seed])
    return buf.getvalue()


def precision_at_k(ranked: Iterable[int], truth, k: int = 10) -> float:
    """Hits among the first ``k`` ranked items divided by ``k`` (always ``k``)."""
    if k <= 0:
        raise ValueError("k must be positive")
    ranked = list(ranked)[:k]
    truth = set(int(t) for t in truth)
    return sum(1 for r in ranked if int(r) in truth) / k


def auc_pairwise(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties counting one half.

    Computed through mid-ranks (Mann-Whitney U), which gives the same count
    as enumerating every pair.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC undefined without both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rank_candidates(candidates: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Candidates by descending score, ties by ascending node index."""
    return candidates[np.lexsort((candidates, -scores))]


def _as_vector(out) -> np.ndarray:
    return np.asarray(getattr(out, "scores", out), dtype=np.float64)


def evaluate(scorer: Callable[[int], object], split: SplitResult, k: int = 10,
             per_node: bool = False) -> EvalReport:
    """Mean Prec@k and AUC over nodes, scoring only each node's 2-hop train candidates.

    A node counts only if its candidates contain at least one held-out link
    and one non-link. ``scorer(i)`` returns length-N scores (or a
    ``ScoreVector``).
    """
    train, test = split.train, split.test
    precs, aucs, rows = [], [], []
    for i in range(train.num_nodes):
        cand = two_hop_candidates(train, i)
        if len(cand) == 0:
            continue
        labels = np.isin(cand, test.neighbors[i])
        n_pos = int(labels.sum())
        if n_pos == 0 or n_pos == len(cand):
            continue
        s = _as_vector(scorer(i))[cand]
        prec = precision_at_k(rank_candidates(cand, s), cand[labels], k)
        auc = auc_pairwise(s, labels)
        precs.append(prec)
        aucs.append(auc)
        if per_node:
            rows.append(NodeResult(i, len(cand), n_pos, prec, auc))
    if not precs:
        raise EmptyEvaluation("no evaluable node in this split")
    return EvalReport(math.fsum(precs) / len(precs), math.fsum(aucs) / len(aucs), k,
                      len(precs), rows if per_node else None)


def render_adjacency(scores, threshold: float = 0.5, stride: int = 5,
                     n: int | None = None) -> bytes:
    """Binary PGM (P5) of thresholded predictions, keeping every ``stride``-th row and column.

    ``scores`` is an ``N x N`` array or a callable returning row ``i``
    (then ``n`` is required). Entries above ``threshold`` are drawn black.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if callable(scores):
        if n is None:
            raise ValueError("n is required when scores is a row provider")
        rows = [np.asarray(scores(i))[::stride] for i in range(0, n, stride)]
        M = np.vstack(rows) if rows else np.zeros((0, 0))
    else:
        M = np.asarray(scores)[::stride, ::stride]
    h, w = M.shape
    pixels = np.where(M > threshold, 0, 255).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()
