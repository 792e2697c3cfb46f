from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfae.graph import (
    EdgeListParseError,
    SparseGraph,
    extract_dense_subgraph,
    format_edge_list,
    parse_edge_list,
    planted_partition,
    sample_non_links,
    split_train_test,
    two_hop_candidates,
)
from mfae.numerics import make_rng

from conftest import graph, random_graph


def edge_set(g):
    return {tuple(e) for e in g.edges().tolist()}


def test_parse_collapses_duplicates_and_reverses():
    g = parse_edge_list("# c\n0 1\n1 2\n2 1")
    assert g.num_nodes == 3 and g.num_edges == 2
    assert edge_set(g) == {(0, 1), (1, 2)}
    g.validate()


def test_parse_self_loop():
    g = parse_edge_list("5 5")
    assert g.num_nodes == 1 and g.num_edges == 0


def test_parse_first_appearance_order_and_whitespace():
    g = parse_edge_list(b"# header\n\n30\t10\n10   20\n")
    assert g.labels == (30, 10, 20)
    assert g.id_map == {30: 0, 10: 1, 20: 2}
    assert edge_set(g) == {(0, 1), (1, 2)}


@pytest.mark.parametrize("text,line", [("0 1\n1 x\n", 2), ("0 1 2\n", 1), ("# ok\n7\n", 2)])
def test_parse_errors_carry_line_number(text, line):
    with pytest.raises(EdgeListParseError) as err:
        parse_edge_list(text)
    assert err.value.lineno == line


def test_parse_with_fixed_id_map_keeps_isolated_nodes():
    g = parse_edge_list("7 9\n", id_map={9: 0, 8: 1, 7: 2})
    assert g.num_nodes == 3 and g.has_edge(0, 2) and g.degree[1] == 0
    with pytest.raises(KeyError):
        parse_edge_list("1 2\n", id_map={1: 0})


def test_format_roundtrip():
    g = parse_edge_list("4 2\n2 9\n9 4\n4 5\n")
    again = parse_edge_list(format_edge_list(g, "hdr"), id_map=g.id_map)
    assert edge_set(again) == edge_set(g)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.floats(0.0, 1.0), st.integers(0, 10**6))
def test_invariants_hold_for_random_graphs(n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    g.validate()
    assert g.num_edges == sum(len(nb) for nb in g.neighbors) // 2


def test_split_degenerate_fraction(two_cliques):
    s = split_train_test(two_cliques, 1.0, 3)
    assert edge_set(s.train) == edge_set(two_cliques) and s.test.num_edges == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 25), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_split_partition_and_determinism(n, frac, seed):
    g = random_graph(np.random.default_rng(seed), n, 0.4)
    s1, s2 = split_train_test(g, frac, seed), split_train_test(g, frac, seed)
    tr, te = edge_set(s1.train), edge_set(s1.test)
    assert not tr & te and tr | te == edge_set(g)
    assert len(tr) == int(np.floor(frac * g.num_edges + 0.5))
    assert tr == edge_set(s2.train)
    assert s1.train.num_nodes == g.num_nodes and s1.train.labels == g.labels


def test_split_count_matches_ten_percent_of_64674_edges():
    # same |E| as the DBLP subgraph: round(0.1 * 64674) = 6467
    rng = make_rng(0)
    n = 2958
    pairs = set()
    while len(pairs) < 64674:
        u, w = rng.integers(0, n, size=2)
        if u != w:
            pairs.add((min(u, w), max(u, w)))
    g = SparseGraph.from_edges(n, sorted(pairs))
    assert g.num_edges == 64674
    s = split_train_test(g, 0.1, 1)
    assert s.train.num_edges == 6467 and s.test.num_edges == 58207


def test_split_rejects_bad_fraction(triangle):
    for f in (0.0, 1.5):
        with pytest.raises(ValueError):
            split_train_test(triangle, f, 0)


def bfs_dist(g, s):
    dist = {s: 0}
    q = deque([s])
    while q:
        u = q.popleft()
        for w in g.neighbors[u]:
            if int(w) not in dist:
                dist[int(w)] = dist[u] + 1
                q.append(int(w))
    return dist


def test_two_hop_examples(path3, triangle, star5):
    assert two_hop_candidates(path3, 0).tolist() == [2]
    assert two_hop_candidates(triangle, 0).tolist() == []
    assert two_hop_candidates(star5, 1).tolist() == [2, 3, 4]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 25), st.floats(0.0, 0.5), st.integers(0, 1000))
def test_two_hop_matches_bfs(n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    for i in range(n):
        d = bfs_dist(g, i)
        expect = sorted(j for j, dj in d.items() if dj == 2)
        got = two_hop_candidates(g, i)
        assert got.tolist() == expect
        assert not set(got.tolist()) & (set(g.neighbors[i].tolist()) | {i})


def test_sample_non_links_contract():
    k3 = graph(3, [(0, 1), (1, 2), (0, 2)])
    assert sample_non_links(k3, 0, 5, make_rng(0)).tolist() == []
    rng = make_rng(1)
    g = SparseGraph.from_edges(100, [(0, k) for k in range(1, 11)])
    s = sample_non_links(g, 0, 20, rng)
    assert len(s) == 20 and len(set(s.tolist())) == 20
    assert not set(s.tolist()) & (set(range(1, 11)) | {0})
    assert sample_non_links(g, 0, 0, rng).tolist() == []
    assert len(sample_non_links(g, 0, 500, rng)) == 89


def test_sample_non_links_uniform():
    from scipy.stats import chisquare

    g = SparseGraph.from_edges(100, [(0, k) for k in range(1, 11)])
    rng = make_rng(2)
    counts = np.zeros(100)
    draws = 10**5
    for _ in range(draws // 5):
        counts[sample_non_links(g, 0, 5, rng)] += 1
    eligible = counts[11:]
    assert counts[:11].sum() == 0
    freq = eligible / draws
    # every node is hit with frequency 1/89 per draw; 4.5 sigma covers the max over 89 nodes
    sigma = np.sqrt((1 / 89) * (1 - 1 / 89) / draws)
    assert np.abs(freq - 1 / 89).max() < 4.5 * sigma
    assert chisquare(eligible).pvalue > 1e-3


def naive_core(g, k):
    alive = set(range(g.num_nodes))
    changed = True
    while changed:
        changed = False
        for u in sorted(alive):
            if sum(1 for w in g.neighbors[u] if int(w) in alive) < k:
                alive.discard(u)
                changed = True
    return alive


def test_dense_subgraph_triangle_plus_pendant():
    g = graph(4, [(0, 1), (1, 2), (0, 2), (2, 3)])
    sub = extract_dense_subgraph(g, 2)
    assert sub.num_nodes == 3 and sub.num_edges == 3 and sub.labels == (0, 1, 2)


def test_dense_subgraph_min_core_one_is_largest_component():
    g = graph(7, [(0, 1), (1, 2), (3, 4), (5, 5)])
    sub = extract_dense_subgraph(g, 1)
    assert sub.labels == (0, 1, 2) and sub.num_edges == 2


def test_dense_subgraph_empty_raises(path3):
    with pytest.raises(ValueError):
        extract_dense_subgraph(path3, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.floats(0.05, 0.5), st.integers(1, 4), st.integers(0, 1000))
def test_dense_subgraph_matches_naive_peeling(n, p, k, seed):
    from mfae.graph import connected_components, induced_subgraph

    g = random_graph(np.random.default_rng(seed), n, p)
    core = naive_core(g, k)
    if not core:
        with pytest.raises(ValueError):
            extract_dense_subgraph(g, k)
        return
    sub = extract_dense_subgraph(g, k)
    sub.validate()
    assert sub.degree.min() >= k
    core_graph = induced_subgraph(g, sorted(core))
    sizes = sorted(len(c) for c in connected_components(core_graph))
    assert sub.num_nodes == sizes[-1]
    assert set(sub.labels) <= core


def test_planted_partition_is_deterministic():
    a, b = planted_partition(60, 3, 0.5, 0.05, 4), planted_partition(60, 3, 0.5, 0.05, 4)
    assert edge_set(a) == edge_set(b)
    a.validate()
