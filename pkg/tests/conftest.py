import numpy as np
import pytest

from resgae.graph import Graph


def two_cluster_graph(n=20, seed=0, p_in=0.6, p_out=0.05):
    """Two dense blocks joined by a few edges; identity features."""
    rng = np.random.default_rng(seed)
    half = n // 2
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            same = (i < half) == (j < half)
            if rng.random() < (p_in if same else p_out):
                edges.append((i, j))
    return Graph(n, np.array(edges), np.eye(n))


def planted_partition(n=300, k=4, avg_deg=6, p_in=0.9, feats=120, seed=0):
    """Community graph with weakly informative sparse binary features."""
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, k, n)
    members = [np.flatnonzero(lab == c) for c in range(k)]
    edges = set()
    while len(edges) < n * avg_deg // 2:
        i = int(rng.integers(n))
        j = int(rng.choice(members[lab[i]])) if rng.random() < p_in else int(rng.integers(n))
        if i != j:
            edges.add((min(i, j), max(i, j)))
    x = (rng.random((n, feats)) < 0.02).astype(float)
    width = feats // (2 * k)
    for c in range(k):
        rows = members[c]
        x[np.ix_(rows, range(c * width, (c + 1) * width))] += rng.random((len(rows), width)) < 0.3
    return Graph(n, np.array(sorted(edges)), np.minimum(x, 1.0))


def write_citation(tmp_path, g: Graph, name="toy", ids=None):
    ids = ids or [f"p{k}" for k in range(g.num_nodes)]
    content = tmp_path / f"{name}.content"
    cites = tmp_path / f"{name}.cites"
    with content.open("w") as fh:
        for k, row in enumerate(g.features.tolist()):
            fh.write("\t".join([ids[k], *(str(int(v)) if float(v).is_integer() else repr(v) for v in row), "cls"]) + "\n")
    with cites.open("w") as fh:
        for i, j in g.edges.tolist():
            fh.write(f"{ids[i]}\t{ids[j]}\n")
    return tmp_path / name


@pytest.fixture
def cluster_graph():
    return two_cluster_graph()


@pytest.fixture
def small_community():
    return planted_partition(n=120, k=3, avg_deg=5, feats=60, seed=1)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
