import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stencilcomm.mapping import (
    MappingScheme,
    build_topology,
    inter_node_face_count,
    locality_summary,
    morton_decode,
    morton_decode_array,
    morton_decode_grid,
    morton_encode,
    morton_encode_array,
    node_block_shape,
    partition_from_count,
    write_topology_csv,
)


def decode_by_string(i, d=3, bits=8):
    """De-interleave via a binary string: bit k of i belongs to axis k mod d."""
    s = format(i, f"0{d * bits}b")[::-1]
    return tuple(int(s[a::d][::-1], 2) for a in range(d))


def test_encode_examples():
    assert morton_encode((0, 0, 0)) == 0
    assert morton_encode((1, 1, 1)) == 7
    assert morton_encode((0, 1, 1)) == 6


def test_decode_examples():
    assert morton_decode(0) == (0, 0, 0)
    assert morton_decode(6) == (0, 1, 1)
    assert morton_decode(63) == (3, 3, 3)


@given(st.integers(0, 2**24 - 1))
def test_decode_matches_string_oracle(i):
    assert morton_decode(i) == decode_by_string(i)
    assert morton_encode(morton_decode(i)) == i


def test_round_trip_2d():
    idx = np.arange(2**20, dtype=np.uint64)
    coords = morton_decode_array(idx, d=2)
    for i in (0, 1, 2, 3, 12345, 2**20 - 1):
        assert tuple(coords[i]) == morton_decode(i, 2)
        assert morton_encode(tuple(int(c) for c in coords[i])) == i


def test_array_round_trip_sample():
    idx = np.arange(0, 2**24, 97, dtype=np.uint64)
    assert np.array_equal(morton_encode_array(morton_decode_array(idx)), idx)


def test_partition_from_count():
    assert partition_from_count(1) == (1, 1, 1)
    assert partition_from_count(8) == (2, 2, 2)
    assert partition_from_count(32) == (4, 4, 2)
    with pytest.raises(ValueError):
        partition_from_count(12)


def test_decode_grid_is_bijection_on_cuboids():
    for grid in [(2, 2, 2), (4, 2, 1), (8, 4, 2), (1, 1, 16)]:
        total = grid[0] * grid[1] * grid[2]
        coords = {morton_decode_grid(i, grid) for i in range(total)}
        assert len(coords) == total
        assert all(all(0 <= c < g for c, g in zip(co, grid)) for co in coords)


def test_small_topology_single_node():
    t = build_topology((2, 2, 2), 8, "zorder")
    assert t.rank_to_coord == tuple(morton_decode(i) for i in range(8))
    assert set(t.node_of(k) for k in range(8)) == {0}
    assert inter_node_face_count(t) == [0] * 8


def test_node_blocks():
    z = build_topology((8, 8, 8), 8, MappingScheme.ZORDER)
    row = build_topology((8, 8, 8), 8, MappingScheme.ROWWISE)
    assert all(node_block_shape(z, k) == (2, 2, 2) for k in range(64))
    assert all(node_block_shape(row, k) == (1, 1, 8) for k in range(64))


def test_locality_counts():
    z = build_topology((8, 8, 8), 8, "zorder")
    row = build_topology((8, 8, 8), 8, "rowwise")
    assert set(inter_node_face_count(z)) == {3}
    assert set(inter_node_face_count(row)) <= {4, 5}
    assert locality_summary(z)["mean"] < locality_summary(row)["mean"]


def test_topology_bijective_and_neighbors():
    for scheme in MappingScheme:
        t = build_topology((4, 2, 8), 4, scheme)
        assert sorted(t.coord_to_rank.values()) == list(range(64))
        for k in range(64):
            assert t.coord_to_rank[t.rank_to_coord[k]] == k
            back = t.neighbor(t.neighbor(k, (1, -1, 1)), (-1, 1, -1))
            assert back == k


def test_topology_errors():
    with pytest.raises(ValueError):
        build_topology((3, 2, 2), 4, "zorder")
    with pytest.raises(ValueError):
        build_topology((2, 2, 2), 3, "rowwise")
    build_topology((3, 2, 2), 4, "rowwise")


def test_topology_csv():
    fh = io.StringIO()
    write_topology_csv(build_topology((2, 2, 2), 4, "zorder"), fh, comment="config-sha256=x")
    lines = fh.getvalue().splitlines()
    assert lines[0] == "# config-sha256=x"
    assert lines[1] == "rank,c0,c1,c2,node,inter_node_faces"
    assert len(lines) == 10
