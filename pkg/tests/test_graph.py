import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gais.errors import DataError
from gais.graph import MultiGraph, degree_profile, read_graph, write_graph


def arcs(g, view=0, level=0):
    a = g.arc_set(view, level)
    return set(zip(a.src.tolist(), a.dst.tolist()))


class TestAddUndirected:
    def test_both_arcs(self):
        g = MultiGraph(3).add_undirected(0, 0, 1, 2)
        assert arcs(g) == {(1, 2), (2, 1)}

    def test_duplicate_pair(self):
        g = MultiGraph(3).add_undirected(0, 0, 1, 2).add_undirected(0, 0, 2, 1)
        assert g.num_arcs() == 2

    def test_self_pair_counted(self):
        g = MultiGraph(4).add_undirected(0, 0, 0, 1)
        g.add_undirected(0, 0, 3, 3)
        assert g.num_arcs() == 2 and g.self_loops_rejected == 1

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            MultiGraph(3).add_undirected(0, 0, 0, 3)

    def test_sets_kept_apart(self):
        g = MultiGraph(2).add_undirected(0, 0, 0, 1).add_undirected(1, 2, 0, 1)
        assert [a.key for a in g.arc_sets] == [(0, 0), (1, 2)]
        assert g.num_arcs() == 4


class TestDegreeProfile:
    def test_path(self):
        g = MultiGraph(3).add_edges(0, 0, [0, 1], [1, 2])
        d_in, d_out = degree_profile(g)
        assert d_in.tolist() == [1, 2, 1] and d_out.tolist() == [1, 2, 1]

    def test_empty(self):
        d_in, d_out = degree_profile(MultiGraph(4))
        assert d_in.sum() == 0 and d_out.sum() == 0

    def test_summed_over_sets(self):
        g = MultiGraph(2).add_undirected(0, 0, 0, 1).add_undirected(0, 1, 0, 1)
        assert degree_profile(g)[0][0] == 2


class TestSubgraph:
    def test_induced(self):
        g = MultiGraph(4, node_ids=[10, 11, 12, 13]).add_edges(0, 0, [0, 1, 2], [1, 2, 3])
        sub = g.subgraph_nodes(np.array([1, 2, 3]))
        assert sub.node_ids.tolist() == [11, 12, 13]
        assert arcs(sub) == {(0, 1), (1, 0), (1, 2), (2, 1)}


class TestSerialization:
    def test_format(self, tmp_path):
        g = MultiGraph(3).add_undirected(0, 0, 0, 2)
        write_graph(g, tmp_path / "g.txt")
        assert (tmp_path / "g.txt").read_text() == "n 3 sets 1\nset 0 0 2\n0 2\n2 0\n"

    def test_bad_header(self, tmp_path):
        (tmp_path / "g.txt").write_text("nodes 3\n")
        with pytest.raises(DataError, match="bad graph header"):
            read_graph(tmp_path / "g.txt")

    def test_empty_set_roundtrip(self, tmp_path):
        g = MultiGraph(2)
        g.ensure_set(1, 0)
        write_graph(g, tmp_path / "g.txt")
        h = read_graph(tmp_path / "g.txt")
        assert [a.key for a in h.arc_sets] == [(1, 0)] and h.num_arcs() == 0

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(1, 12),
        edges=st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.integers(0, 11), st.integers(0, 11)),
                       max_size=40),
    )
    def test_roundtrip_and_symmetry(self, tmp_path_factory, n, edges):
        g = MultiGraph(n)
        for v, m, a, b in edges:
            if a < n and b < n:
                g.add_undirected(v, m, a, b)
        for a in g.arc_sets:
            fwd = set(zip(a.src.tolist(), a.dst.tolist()))
            assert fwd == {(d, s) for s, d in fwd}
            assert all(s != d for s, d in fwd)
        path = tmp_path_factory.mktemp("g") / "g.txt"
        write_graph(g, path)
        h = read_graph(path)
        assert h.n == g.n
        assert [a.key for a in h.arc_sets] == [a.key for a in g.arc_sets]
        for a, b in zip(g.arc_sets, h.arc_sets):
            np.testing.assert_array_equal(a.src, b.src)
            np.testing.assert_array_equal(a.dst, b.dst)
