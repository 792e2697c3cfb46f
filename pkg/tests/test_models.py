import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfae.graph import SparseGraph
from mfae.models import (
    DropoutMasks,
    Mode,
    ModelParams,
    Variant,
    ae_forward,
    combine_predictions,
    dumps_params,
    example_gradient,
    example_loss,
    forward_example,
    init_params,
    load_params,
    loads_params,
    mf_forward,
    save_params,
    score_matrix,
    score_node,
)
from mfae.numerics import make_rng
from mfae.training import random_check_instance

from conftest import random_graph


def scalar_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def scalar_ce(t, p):
    p = min(max(p, 1e-12), 1 - 1e-12)
    return -(t * math.log(p) + (1 - t) * math.log(1 - p))


def loop_ae(p, a, xi_h, xi_in, mode="TRAIN"):
    """Element-by-element AE forward pass."""
    K, N = p.K, p.N
    W1, W2 = p.W1, p.W2
    h = []
    for k in range(K):
        z = p.b1[k]
        for j in range(N):
            x = a[j] * (xi_in[j] if mode == "TRAIN" else p.keep_input)
            z += W1[k, j] * x
        h.append(max(z, 0.0) * (xi_h[k] if mode == "TRAIN" else p.keep_hidden))
    return [scalar_sigmoid(sum(W2[j, k] * h[k] for k in range(K)) + p.b2[j]) for j in range(N)]


def loop_mf(p, i, xi_h, mode="TRAIN", relu=False):
    K, N = p.K, p.N
    h = []
    for k in range(K):
        z = p.W1[k, i] + p.b3[k]
        if relu:
            z = max(z, 0.0)
        h.append(z * (xi_h[k] if mode == "TRAIN" else p.keep_hidden))
    return [scalar_sigmoid(sum(p.W2[j, k] * h[k] for k in range(K)) + p.b4[j]) for j in range(N)]


def rand_params(variant, n, k, seed, tied=True, **kw):
    rng = np.random.default_rng(seed)
    W1 = None if tied else rng.normal(0, 0.7, (k, n))
    return ModelParams(Variant(variant), rng.normal(0, 0.7, (n, k)), rng.normal(0, 0.3, k),
                       rng.normal(0, 0.3, n), rng.normal(0, 0.3, k), rng.normal(0, 0.3, n),
                       tied, W1_untied=W1, **kw)


def zero_params(variant, n, k, rho=1.0):
    return ModelParams(Variant(variant), np.zeros((n, k)), np.zeros(k), np.zeros(n),
                       np.zeros(k), np.zeros(n), True, rho)


def test_zero_params_give_one_half():
    p = zero_params("JOINT", 5, 3)
    m = DropoutMasks.ones(3, 5)
    assert np.all(ae_forward(p, np.array([1, 0, 1, 0, 0]), m)[1] == 0.5)
    assert np.all(mf_forward(p, 2, m)[1] == 0.5)


def test_ae_relu_cutoff_gives_sigmoid_bias():
    p = rand_params("AE", 4, 2, 0)
    p.W2[:] = -np.abs(p.W2)
    p.b1[:] = 0
    a = np.array([1, 1, 0, 0])
    h1, recon = ae_forward(p, a, DropoutMasks.ones(2, 4))
    assert np.all(h1 == 0)
    np.testing.assert_allclose(recon, 1 / (1 + np.exp(-p.b2)), rtol=1e-15)


def test_joint_mf_relu_cutoff():
    p = rand_params("JOINT", 4, 3, 1)
    p.W2[2] = -np.abs(p.W2[2])   # W1[:, 2] = W2[2] when tied
    p.b3[:] = 0
    h2, recon = mf_forward(p, 2, DropoutMasks.ones(3, 4))
    assert np.all(h2 == 0)
    np.testing.assert_allclose(recon, 1 / (1 + np.exp(-p.b4)), rtol=1e-15)


@pytest.mark.parametrize("tied", [True, False])
@pytest.mark.parametrize("seed", range(4))
def test_forward_matches_scalar_loops(tied, seed):
    rng = np.random.default_rng(100 + seed)
    n, k = 5, 3
    a = (rng.random(n) < 0.5).astype(float)
    xi_h = (rng.random(k) < 0.5).astype(float)
    xi_in = (rng.random(n) < 0.5).astype(float)
    masks = DropoutMasks(xi_h, xi_in)
    p = rand_params("JOINT", n, k, seed, tied, keep_hidden=0.5, keep_input=0.7)
    for mode in ("TRAIN", "INFER"):
        np.testing.assert_allclose(ae_forward(p, a, masks, mode)[1], loop_ae(p, a, xi_h, xi_in, mode),
                                   rtol=1e-12)
        np.testing.assert_allclose(mf_forward(p, 1, masks, mode)[1], loop_mf(p, 1, xi_h, mode, True),
                                   rtol=1e-12)
        lin = rand_params("MF_LINEAR", n, k, seed, tied, keep_hidden=0.5)
        np.testing.assert_allclose(mf_forward(lin, 1, masks, mode)[1], loop_mf(lin, 1, xi_h, mode, False),
                                   rtol=1e-12)


def test_ae_four_node_example_row():
    # A_0 = (0, 1, 1, 0); with W1 = W2^T, h1 = relu(W2[1] + W2[2] + b1)
    p = rand_params("AE", 4, 2, 9)
    a = np.array([0, 1, 1, 0])
    h1, _ = ae_forward(p, a, DropoutMasks.ones(2, 4))
    np.testing.assert_allclose(h1, np.maximum(p.W2[1] + p.W2[2] + p.b1, 0), rtol=1e-15)


def test_forward_errors():
    p = rand_params("AE", 4, 2, 0)
    with pytest.raises(ValueError):
        ae_forward(p, np.zeros(3), DropoutMasks.ones(2, 4))
    with pytest.raises(ValueError):
        ae_forward(p, np.zeros(4), DropoutMasks(np.ones(3), np.ones(4)))
    q = rand_params("MF_LINEAR", 4, 2, 0)
    with pytest.raises(IndexError):
        mf_forward(q, 4, DropoutMasks.ones(2, 4))


def test_infer_equals_train_with_unit_keep():
    p = rand_params("JOINT", 6, 3, 3)
    a = np.array([1, 0, 0, 1, 1, 0])
    ones = DropoutMasks.ones(3, 6)
    assert np.array_equal(ae_forward(p, a, ones, "TRAIN")[1], ae_forward(p, a, None, "INFER")[1])
    assert np.array_equal(mf_forward(p, 4, ones, "TRAIN")[1], mf_forward(p, 4, None, "INFER")[1])


def oracle_loss(p, g, i, neg, masks, eta):
    a = np.zeros(p.N)
    a[g.neighbors[i]] = 1
    pos = g.neighbors[i].tolist()
    parts = []
    if p.variant.uses_ae:
        r = loop_ae(p, a, masks.xi_h, masks.xi_in)
        parts.append((1.0, r))
    if p.variant.uses_mf:
        r = loop_mf(p, i, masks.xi_h, relu=p.variant is Variant.JOINT)
        parts.append((p.rho if p.variant is Variant.JOINT else 1.0, r))
    total = 0.0
    for w, r in parts:
        total += w * (sum(scalar_ce(1, r[j]) for j in pos) + eta * sum(scalar_ce(0, r[j]) for j in neg))
    return total


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("seed", range(3))
def test_example_loss_matches_scalar_oracle(variant, seed):
    inst = random_check_instance(variant, True, seed, k=3, n=7, rho=0.7)
    got = example_loss(inst.params, inst.graph, inst.node, inst.neg, inst.masks, inst.eta)
    want = oracle_loss(inst.params, inst.graph, inst.node, inst.neg, inst.masks, inst.eta)
    assert got == pytest.approx(want, rel=1e-12)


def test_zero_params_loss_is_closed_form(two_cliques):
    p = zero_params("JOINT", 10, 4)
    neg = [5, 6, 7]
    eta = 0.4
    d = two_cliques.degree[0]
    loss = example_loss(p, two_cliques, 0, neg, DropoutMasks.ones(4, 10), eta)
    assert loss == pytest.approx(2 * (d + eta * len(neg)) * math.log(2), rel=1e-14)


def test_saturated_params_give_zero_loss():
    g = SparseGraph.from_edges(3, [(0, 1)])
    p = zero_params("MF_LINEAR", 3, 1)
    p.b4[:] = [-50.0, 50.0, -50.0]
    assert example_loss(p, g, 0, [2], DropoutMasks.ones(1, 3), 1.0) < 1e-6


def test_overlapping_negatives_rejected(two_cliques):
    p = zero_params("AE", 10, 2)
    with pytest.raises(ValueError):
        example_loss(p, two_cliques, 0, [1, 7], DropoutMasks.ones(2, 10), 1.0)


def test_b4_gradient_by_hand():
    g = SparseGraph.from_edges(3, [(0, 1)])
    p = rand_params("MF_LINEAR", 3, 2, 4)
    eta = 0.6
    grad = example_gradient(p, g, 0, [2], DropoutMasks.ones(2, 3), eta)
    _, recon = mf_forward(p, 0, DropoutMasks.ones(2, 3))
    np.testing.assert_allclose(grad.b4, [0.0, recon[1] - 1.0, eta * recon[2]], rtol=1e-13)


def test_dropped_unit_has_no_gradient():
    inst = random_check_instance("JOINT", False, 5, k=4, n=8)
    inst.masks.xi_h[:] = [1, 0, 1, 0]
    grad = example_gradient(inst.params, inst.graph, inst.node, inst.neg, inst.masks, inst.eta)
    assert np.all(grad.W2[:, [1, 3]] == 0)
    assert np.all(grad.b1[[1, 3]] == 0) and np.all(grad.b3[[1, 3]] == 0)


def test_mask_sharing_between_branches():
    inst = random_check_instance("JOINT", True, 2, k=6, n=8)
    p, g, i = inst.params, inst.graph, inst.node
    tr, _ = forward_example(p, g, i, inst.neg, inst.masks, inst.eta)
    # the trace records exactly one hidden mask, and both reconstructions use it
    assert np.array_equal(tr.xi_h, inst.masks.xi_h)
    ex_idx = tr.index
    np.testing.assert_allclose(tr.recon_ae, 1 / (1 + np.exp(-(p.W2[ex_idx] @ (tr.xi_h * tr.h1) + p.b2[ex_idx]))))
    np.testing.assert_allclose(tr.recon_mf, 1 / (1 + np.exp(-(p.W2[ex_idx] @ (tr.xi_h * tr.h2) + p.b4[ex_idx]))))


def test_combine_predictions():
    assert combine_predictions(0.64, 0.25, 1.0) == pytest.approx(0.4, rel=1e-15)
    x = np.array([0.1, 0.9])
    assert np.array_equal(combine_predictions(x, np.array([0.3, 0.2]), 0.0), x)
    np.testing.assert_allclose(combine_predictions(x, x, 2.5), x, rtol=1e-14)


def test_score_node_properties(two_cliques):
    p = rand_params("JOINT", 10, 3, 8, keep_hidden=0.5, keep_input=0.5)
    s = score_node(p, two_cliques, 3)
    assert np.all((s > 0) & (s < 1))
    assert np.array_equal(s, score_node(p, two_cliques, 3))
    p0 = p.copy()
    p0.rho = 0.0
    ae = p0.copy()
    ae.variant = Variant.AE
    np.testing.assert_array_equal(score_node(p0, two_cliques, 3), score_node(ae, two_cliques, 3))


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("tied", [True, False])
def test_score_matrix_matches_rows(variant, tied, two_cliques):
    p = rand_params(variant, 10, 3, 11, tied, keep_hidden=0.5, keep_input=0.5, rho=1.3)
    M = score_matrix(p, two_cliques)
    for i in range(10):
        np.testing.assert_allclose(M[i], score_node(p, two_cliques, i), rtol=1e-12)


def test_init_params_contract():
    p = init_params("JOINT", 50, 16, make_rng(0))
    assert np.abs(p.W2).max() <= 0.05 / 4
    assert all(np.all(b == 0) for b in (p.b1, p.b2, p.b3, p.b4))
    assert p.W1.base is p.W2 or np.shares_memory(p.W1, p.W2)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(list(Variant)), st.booleans(), st.integers(0, 10**6))
def test_checkpoint_roundtrip_is_bit_exact(variant, tied, seed):
    p = rand_params(variant, 7, 3, seed, tied, rho=0.25, keep_hidden=0.5, keep_input=0.75)
    blob = dumps_params(p)
    q = loads_params(blob)
    assert dumps_params(q) == blob
    assert q.variant == p.variant and q.tied == tied and q.rho == 0.25
    for name, arr in p.arrays().items():
        assert np.array_equal(arr, q.arrays()[name])


def test_checkpoint_file_and_errors(tmp_path):
    p = rand_params("AE", 4, 2, 0)
    path = tmp_path / "m.ckpt"
    save_params(path, p)
    assert dumps_params(load_params(path)) == dumps_params(p)
    blob = path.read_bytes()
    with pytest.raises(ValueError):
        loads_params(b"junk" + blob)
    with pytest.raises(ValueError):
        loads_params(blob[:-8])
    with pytest.raises(ValueError):
        loads_params(blob + b"\0" * 8)
