import numpy as np
import pytest

from euclid_qft.errors import GeometryError
from euclid_qft.lattice import (
    Boundary,
    Reflection,
    Region,
    Translation,
    apply_isometry,
    box_region,
    geometry_from_config,
    geometry_to_config,
    inverse,
    make_geometry,
    site_map,
    split_by_hyperplane,
)


@pytest.mark.parametrize(
    "dim, extents, spacing, boundary",
    [
        (3, [4, 4, 4], 1.0, "periodic"),
        (2, [4], 1.0, "periodic"),
        (1, [1], 1.0, "periodic"),
        (1, [4], 0.0, "periodic"),
        (1, [4], 1.0, "open"),
        (2, [2**16, 2**16], 1.0, "periodic"),
    ],
)
def test_make_geometry_rejects_invalid(dim, extents, spacing, boundary):
    with pytest.raises(GeometryError):
        make_geometry(dim, extents, spacing, boundary)


def test_geometry_basics(torus_4x4):
    assert torus_4x4.n_sites == 16
    assert torus_4x4.time_axis == 1
    assert torus_4x4.boundary is Boundary.PERIODIC
    assert torus_4x4.index((1, 2)) == 6
    assert torus_4x4.coords(6) == (1, 2)


def test_index_out_of_range(torus_4x4):
    with pytest.raises(GeometryError):
        torus_4x4.index((4, 0))
    with pytest.raises(GeometryError):
        torus_4x4.coords(16)


def test_neighbor_wraps_on_torus_and_stops_at_dirichlet_wall(torus_4x4, box_8x8):
    assert torus_4x4.neighbor(torus_4x4.index((3, 0)), 0, 1) == torus_4x4.index((0, 0))
    assert box_8x8.neighbor(box_8x8.index((7, 0)), 0, 1) is None
    assert box_8x8.neighbor(box_8x8.index((3, 3)), 1, -1) == box_8x8.index((3, 2))


def test_slice_sites_follow_time_axis(torus_4x4):
    sites = torus_4x4.slice_sites(2)
    assert all(torus_4x4.coords(s)[1] == 2 for s in sites)
    assert len(sites) == 4


def test_geometry_config_block_restores_geometry(box_8x8):
    block = geometry_to_config(box_8x8)
    assert block["boundary"] == "dirichlet"
    assert geometry_from_config(block) == box_8x8


def test_geometry_config_missing_key():
    with pytest.raises(GeometryError, match="missing"):
        geometry_from_config({"dim": "1", "extents": "4"})


def test_region_set_algebra(torus_4x4):
    a = Region.from_sites(torus_4x4, [0, 1, 2, 3])
    b = Region.from_sites(torus_4x4, [3, 4, 5])
    assert len(a.union(b)) == 6
    assert list(a.intersection(b).sites) == [3]
    assert list(a.difference(b).sites) == [0, 1, 2]
    assert 2 in a and 4 not in a
    assert Region.from_sites(torus_4x4, [3, 2, 1, 0, 0]) == a
    assert hash(Region.from_sites(torus_4x4, [1, 0, 2, 3])) == hash(a)


def test_region_rejects_foreign_sites(torus_4x4):
    with pytest.raises(GeometryError):
        Region.from_sites(torus_4x4, [16])


def test_region_rejects_mixed_geometries(torus_4x4, box_8x8):
    with pytest.raises(GeometryError):
        Region.full(torus_4x4).union(Region.full(box_8x8))


def test_box_region_is_inclusive(box_8x8):
    box = box_region(box_8x8, (1, 2), (3, 3))
    assert len(box) == 6


def test_split_by_hyperplane_covers_lattice(box_8x8):
    a, b, sigma = split_by_hyperplane(box_8x8, 0, 3)
    assert a.union(b) == Region.full(box_8x8)
    assert a.intersection(b) == sigma
    assert len(sigma) == 8


def test_split_rejects_plane_outside_axis(box_8x8):
    with pytest.raises(GeometryError):
        split_by_hyperplane(box_8x8, 0, 8)


def test_translation_moves_field():
    g = make_geometry(1, [5], 1.0)
    phi = np.zeros(5)
    phi[0] = 1.0
    moved = apply_isometry(g, Translation(0, 2), phi)
    assert moved[2] == 1.0
    back = apply_isometry(g, inverse(Translation(0, 2)), moved)
    np.testing.assert_array_equal(back, phi)


@pytest.mark.parametrize("plane", [0, 1.5, 2])
def test_periodic_reflection_is_an_involution(torus_4x4, plane):
    perm = site_map(torus_4x4, Reflection(1, plane))
    np.testing.assert_array_equal(perm[perm], np.arange(torus_4x4.n_sites))


def test_dirichlet_allows_only_centre_reflection(box_8x8):
    perm = site_map(box_8x8, Reflection(0, 3.5))
    assert perm[box_8x8.index((0, 5))] == box_8x8.index((7, 5))
    with pytest.raises(GeometryError):
        site_map(box_8x8, Reflection(0, 2))
    with pytest.raises(GeometryError):
        site_map(box_8x8, Translation(0, 1))


def test_reflection_plane_must_be_half_integer(torus_4x4):
    with pytest.raises(GeometryError):
        site_map(torus_4x4, Reflection(0, 0.25))


def test_field_length_is_checked(torus_4x4):
    with pytest.raises(GeometryError):
        apply_isometry(torus_4x4, Translation(0, 1), np.zeros(15))
