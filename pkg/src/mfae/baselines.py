"""Training-free link scorers: Adamic-Adar and random walk with restart."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import SparseGraph


class ConvergenceError(ArithmeticError):
    pass


@dataclass
class ScoreVector:
    source: int
    scores: np.ndarray


def adamic_adar_scores(g: SparseGraph, i: int) -> ScoreVector:
    """Adamic-Adar similarity of ``i`` to every node.

    ``score(j) = sum over common neighbors n of 1 / ln(deg(n))``. Terms are
    accumulated in ascending order of ``n``. A common neighbor always has
    degree >= 2, so the logarithm is positive.
    """
    nb = g.neighbors[i]
    scores = np.zeros(g.num_nodes)
    if len(nb) == 0:
        return ScoreVector(i, scores)
    deg = g.degree
    targets = np.concatenate([g.neighbors[n] for n in nb])
    weights = np.concatenate([np.full(deg[n], 1.0 / np.log(deg[n]) if deg[n] > 1 else 0.0)
                              for n in nb])
    # unbuffered, applied in index order
    np.add.at(scores, targets, weights)
    return ScoreVector(i, scores)


def transition_matrix(g: SparseGraph, source: int) -> sp.csr_matrix:
    """Row-stochastic walk matrix; a dangling row jumps straight back to ``source``."""
    A = g.adjacency().tocsr()
    deg = g.degree.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    P = sp.diags(inv) @ A
    dangling = np.flatnonzero(deg == 0)
    if len(dangling):
        fix = sp.csr_matrix((np.ones(len(dangling)), (dangling, np.full(len(dangling), source))),
                            shape=A.shape)
        P = P + fix
    return sp.csr_matrix(P)


def rwr_scores(g: SparseGraph, i: int, restart: float = 0.5, tol: float = 1e-10,
               max_iter: int = 10_000) -> ScoreVector:
    """Stationary distribution of a walk from ``i`` that restarts with probability ``restart``.

    Solves ``pi = restart * e_i + (1 - restart) * P^T pi`` by power
    iteration until the L1 change drops below ``tol``.
    """
    if not 0.0 < restart <= 1.0:
        raise ValueError("restart must be in (0, 1]")
    n = g.num_nodes
    e = np.zeros(n)
    e[i] = 1.0
    if restart == 1.0 or g.degree[i] == 0:
        return ScoreVector(i, e)
    PT = transition_matrix(g, i).T.tocsr()
    pi = e.copy()
    for _ in range(max_iter):
        nxt = restart * e + (1.0 - restart) * (PT @ pi)
        delta = np.abs(nxt - pi).sum()
        pi = nxt
        if delta < tol:
            return ScoreVector(i, pi)
    raise ConvergenceError(f"random walk from {i} did not converge in {max_iter} iterations")
