import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resgae.checks import dense_normalized
from resgae.graph import (
    Graph,
    GraphFormatError,
    SplitError,
    load_citation_dataset,
    load_generic_graph,
    normalize,
    save_generic_graph,
    split_edges,
    split_quotas,
)

from .conftest import write_citation


def dense_oracle(n, edges):
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


@st.composite
def graphs(draw, max_nodes=20):
    n = draw(st.integers(1, max_nodes))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=60))
    return n, pairs


def test_graph_canonicalises_edges():
    g = Graph(4, [(1, 0), (0, 1), (2, 2), (3, 1)], np.zeros((4, 2)))
    assert g.edges.tolist() == [[0, 1], [1, 3]]


def test_graph_rejects_bad_input():
    with pytest.raises(GraphFormatError):
        Graph(3, [(0, 3)], np.zeros((3, 1)))
    with pytest.raises(GraphFormatError):
        Graph(3, [(0, 1)], np.zeros((2, 1)))


def test_graph_is_immutable():
    g = Graph(2, [(0, 1)], np.ones((2, 1)))
    with pytest.raises(ValueError):
        g.features[0, 0] = 5.0
    with pytest.raises(AttributeError):
        g.num_nodes = 3


def test_normalize_two_nodes():
    m = normalize(Graph(2, [(0, 1)], np.zeros((2, 1)))).dense()
    assert np.array_equal(m, np.full((2, 2), 0.5))


def test_normalize_single_node():
    m = normalize(Graph(1, np.empty((0, 2)), np.zeros((1, 1)))).dense()
    assert m.tolist() == [[1.0]]


def test_normalize_path_against_dense_reference():
    m = normalize(Graph(3, [(0, 1), (1, 2)], np.zeros((3, 1)))).dense()
    ref = dense_oracle(3, [(0, 1), (1, 2)])
    np.testing.assert_allclose(m, ref, rtol=0, atol=1e-15)
    assert m[0, 1] == pytest.approx(0.408248290463863, abs=1e-12)
    assert m[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert m[1, 1] == pytest.approx(1 / 3, abs=1e-15)


@settings(max_examples=150, deadline=None)
@given(graphs())
def test_normalize_matches_dense_oracle(case):
    n, pairs = case
    g = Graph(n, pairs, np.zeros((n, 1)))
    m = normalize(g).dense()
    assert np.abs(m - dense_oracle(n, g.edges.tolist())).max() <= 1e-12
    assert np.array_equal(m, m.T)
    assert (np.diag(m) > 0).all()
    stored = normalize(g).matrix.data
    assert ((stored > 0) & (stored <= 1)).all()


@settings(max_examples=50, deadline=None)
@given(graphs(), st.randoms(use_true_random=False))
def test_normalize_is_edge_order_invariant(case, rnd):
    n, pairs = case
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    shuffled = [(j, i) if rnd.random() < 0.5 else (i, j) for i, j in shuffled]
    a = normalize(Graph(n, pairs, np.zeros((n, 1)))).matrix
    b = normalize(Graph(n, shuffled, np.zeros((n, 1)))).matrix
    assert (a != b).nnz == 0
    assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.data, b.data)


def test_checks_dense_reference_agrees():
    g = Graph(5, [(0, 1), (1, 2), (3, 4), (0, 4)], np.zeros((5, 1)))
    np.testing.assert_allclose(dense_normalized(g), dense_oracle(5, g.edges.tolist()), atol=1e-15)


# ------------------------------------------------------------------ splits


def random_graph(n, m, seed):
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < m:
        i, j = sorted(rng.integers(0, n, 2).tolist())
        if i != j:
            pairs.add((i, j))
    return Graph(n, sorted(pairs), np.zeros((n, 1)))


def test_split_quotas_round_half_up():
    assert split_quotas(5429) == (271, 543)
    assert split_quotas(10) == (1, 1)  # 0.5 -> 1, 1.0 -> 1
    assert split_quotas(30) == (2, 3)  # 1.5 -> 2
    assert split_quotas(25) == (1, 3)  # 1.25 -> 1, 2.5 -> 3


def test_split_sizes_on_cora_sized_edge_set():
    g = random_graph(2708, 5429, 0)
    s = split_edges(g, 3)
    assert len(s.test_pos) == 543 and len(s.val_pos) == 271
    assert len(s.test_neg) == 543 and len(s.val_neg) == 271


def _check_split(g, s):
    full = g.edge_set()
    parts = [set(map(tuple, p.tolist())) for p in (s.train_graph.edges, s.val_pos, s.test_pos)]
    assert sum(map(len, parts)) == g.num_edges
    assert set().union(*parts) == full
    negs = [set(map(tuple, p.tolist())) for p in (s.val_neg, s.test_neg)]
    assert len(negs[0]) == len(s.val_neg) and len(negs[1]) == len(s.test_neg)
    assert not negs[0] & negs[1]
    for ns in negs:
        assert not ns & full
        assert all(i < j for i, j in ns)


def test_split_partition_many_seeds():
    for seed in range(100):
        g = random_graph(30 + seed % 7, 60 + seed % 11, seed)
        _check_split(g, split_edges(g, seed))


def test_split_is_deterministic():
    g = random_graph(50, 120, 1)
    a, b = split_edges(g, 7), split_edges(g, 7)
    for name in ("val_pos", "val_neg", "test_pos", "test_neg"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(a.train_graph.edges, b.train_graph.edges)
    assert not np.array_equal(split_edges(g, 8).test_pos, a.test_pos)


def test_split_too_small():
    with pytest.raises(SplitError):
        split_edges(Graph(3, [(0, 1), (1, 2)], np.zeros((3, 1))), 0)


# --------------------------------------------------------------- file I/O


def test_citation_minimal_fixture(tmp_path):
    (tmp_path / "t.content").write_text("a\t1\t0\tX\nb\t0\t1\tY\n")
    (tmp_path / "t.cites").write_text("a\tb\n")
    g = load_citation_dataset(tmp_path / "t.content", tmp_path / "t.cites")
    assert g.num_nodes == 2 and g.num_edges == 1 and g.num_features == 2
    assert g.features.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_citation_dedup_and_unknown_ids(tmp_path, caplog):
    (tmp_path / "t.content").write_text("a\t1\tX\nb\t0\tY\nc\t1\tY\n")
    (tmp_path / "t.cites").write_text("a\tb\nb\ta\na\tb\nc\tzz\nc\tc\nb\tc\n")
    g = load_citation_dataset(tmp_path / "t.content", tmp_path / "t.cites")
    assert g.edges.tolist() == [[0, 1], [1, 2]]
    assert g.stats["raw_citations"] == 6
    assert g.stats["skipped_unknown"] == 1
    assert g.stats["self_citations"] == 1
    assert g.stats["directed_edges"] == 3
    assert "skipped 1 citation" in caplog.text
    added = load_citation_dataset(tmp_path / "t.content", tmp_path / "t.cites", unknown="add")
    assert added.num_nodes == 4 and added.features[3].tolist() == [0.0]


def test_citation_parse_errors_carry_line_numbers(tmp_path):
    (tmp_path / "t.content").write_text("a\t1\t0\tX\nb\t0\tY\n")
    (tmp_path / "t.cites").write_text("")
    with pytest.raises(GraphFormatError, match=":2:"):
        load_citation_dataset(tmp_path / "t.content", tmp_path / "t.cites")
    (tmp_path / "t.content").write_text("a\t1\tX\n")
    (tmp_path / "t.cites").write_text("a\n")
    with pytest.raises(GraphFormatError, match=":1:"):
        load_citation_dataset(tmp_path / "t.content", tmp_path / "t.cites")


def test_citation_roundtrip_through_writer(tmp_path, cluster_graph):
    prefix = write_citation(tmp_path, cluster_graph)
    g = load_citation_dataset(f"{prefix}.content", f"{prefix}.cites")
    assert np.array_equal(g.edges, cluster_graph.edges)
    assert np.array_equal(g.features, cluster_graph.features)


def test_generic_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    g = Graph(6, [(0, 1), (2, 5), (3, 4)], rng.normal(size=(6, 3)))
    path = tmp_path / "g.txt"
    save_generic_graph(g, path)
    h = load_generic_graph(path)
    assert h.num_nodes == 6
    assert np.array_equal(h.features, g.features)
    assert np.array_equal(h.edges, g.edges)


@pytest.mark.parametrize(
    "text",
    [
        "graph 2 1\nnode 0 1.0\nedges 0\n",
        "graph 2 1\nnode 0 1.0\nnode 1 1.0 2.0\nedges 0\n",
        "graph 2 1\nnode 0 1.0\nnode 1 2.0\nedges 2\n0 1\n",
        "graf 2 1\n",
        "graph 2 1\nnode 1 1.0\nnode 0 2.0\nedges 0\n",
    ],
)
def test_generic_header_body_mismatch(tmp_path, text):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(GraphFormatError):
        load_generic_graph(path)
