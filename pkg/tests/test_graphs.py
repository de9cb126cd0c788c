import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfid.graphs import Graph, build_2d_regular, build_3d_stack, build_complete, build_ring


def test_ring_4_edges():
    g = build_ring(4)
    assert set(g.edges) == {(0, 1), (1, 2), (2, 3), (0, 3)}
    assert g.descriptor == "1d-cluster:4"


def test_ring_6_degree_two():
    assert build_ring(6).degrees == [2] * 6


@pytest.mark.parametrize("n", [5, 2, 3, 0])
def test_ring_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        build_ring(n)


def test_square_4x4():
    g = build_2d_regular(4, 4, 4)
    assert len(g.edges) == 32
    assert g.is_regular(4)


def _hand_triangular_edges(nx, ny):
    # right, up and one diagonal per plaquette, written out independently
    out = set()
    for y in range(ny):
        for x in range(nx):
            v = x + nx * y
            for dx, dy in ((1, 0), (0, 1), (1, 1)):
                w = (x + dx) % nx + nx * ((y + dy) % ny)
                out.add((min(v, w), max(v, w)))
    return out


def test_triangular_4x4_matches_hand_count():
    g = build_2d_regular(6, 4, 4)
    assert len(g.edges) == 48
    assert g.is_regular(6)
    assert set(g.edges) == _hand_triangular_edges(4, 4)


def test_odd_degree_needs_even_nx():
    with pytest.raises(ValueError, match="even"):
        build_2d_regular(3, 5, 4)


def test_stack_degrees():
    assert build_3d_stack(4, 3, 3, 3).is_regular(6)
    assert build_3d_stack(3, 4, 4, 4).is_regular(5)
    with pytest.raises(ValueError):
        build_3d_stack(4, 4, 4, 2)


@pytest.mark.parametrize("n,m", [(3, 3), (5, 10), (1, 0)])
def test_complete(n, m):
    g = build_complete(n)
    assert len(g.edges) == m
    assert g.is_regular(n - 1)


def test_graph_validation():
    with pytest.raises(ValueError):
        Graph(3, ((0, 0),))
    with pytest.raises(ValueError):
        Graph(3, ((0, 1), (1, 0)))
    with pytest.raises(ValueError):
        Graph(3, ((0, 3),))


def test_descriptor_records_layout():
    assert build_2d_regular(6, 16, 16).descriptor == "2d-regular:d=6:16x16:periodic:triangular"
    assert build_3d_stack(3, 4, 4, 4).descriptor.startswith("3d-regular:d=5:4x4x4:periodic:")


def test_vertex_order_is_row_major():
    g = build_2d_regular(4, 5, 4)
    # vertex (x=1, y=0) is 1, its upper neighbor (1, 1) is 1 + nx
    assert 6 in g.neighbors[1] and 2 in g.neighbors[1]


def test_edge_list_text():
    text = build_ring(4).edge_list_text()
    assert text.splitlines()[1:] == ["0 1", "0 3", "1 2", "2 3"]


@settings(max_examples=60, deadline=None)
@given(d=st.integers(3, 8), nx=st.integers(3, 9), ny=st.integers(3, 9))
def test_2d_regular_and_edge_count(d, nx, ny):
    if d % 2 and nx % 2:
        nx += 1
    g = build_2d_regular(d, nx, ny)
    assert g.is_regular(d)
    assert len(g.edges) == g.n * d // 2
    assert build_2d_regular(d, nx, ny).edges == g.edges


@settings(max_examples=25, deadline=None)
@given(d2=st.integers(3, 6), nx=st.integers(3, 6), ny=st.integers(3, 6), nz=st.integers(3, 5))
def test_3d_regular_and_edge_count(d2, nx, ny, nz):
    if d2 % 2 and nx % 2:
        nx += 1
    g = build_3d_stack(d2, nx, ny, nz)
    assert g.is_regular(d2 + 2)
    assert len(g.edges) == g.n * (d2 + 2) // 2


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 40).map(lambda k: 2 * k))
def test_ring_regular(n):
    g = build_ring(n)
    assert g.is_regular(2) and len(g.edges) == n
