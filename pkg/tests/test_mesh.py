import json

import numpy as np
import pytest

from levee.mesh import (CrossSectionGeometry, GeometryError, OutsideDomain, ParseError,
                        ValidationError, generate_cross_section, load_geometry, load_mesh,
                        locate_point, save_geometry, save_mesh)

from conftest import rect_geometry


def shoelace(poly):
    x, y = np.asarray(poly, float).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def edge_lengths(mesh):
    p = mesh.nodes[mesh.triangles]
    return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)


@pytest.fixture(scope="module")
def boston_mesh(boston_geometry):
    return generate_cross_section(boston_geometry, 0.5)


def test_unit_square():
    mesh = generate_cross_section(rect_geometry(1.0, 0.0, 1.0), 0.5)
    assert mesh.n_triangles >= 8
    assert mesh.areas().sum() == pytest.approx(1.0, abs=1e-9)
    mesh.validate()


def test_boston_element_count_and_area(boston_geometry, boston_mesh):
    assert 3000 <= boston_mesh.n_triangles <= 30000
    assert boston_mesh.areas().sum() == pytest.approx(shoelace(boston_geometry.outer), abs=1e-6)
    assert edge_lengths(boston_mesh).max() <= 2 * 0.5 + 1e-12
    boston_mesh.validate()


def test_boston_reference_levels(boston_geometry):
    ys = np.asarray(boston_geometry.outer)[:, 1]
    assert ys.max() == 6.0
    assert min(y for y in ys if y > -10) == -2.0
    assert len(boston_geometry.strata) == 5


def test_two_strata_conformity():
    geom = rect_geometry(4.0, 0.0, 2.0, interfaces=[[[0.0, 0.7], [4.0, 0.7]]],
                         strata=("upper", "lower"))
    mesh = generate_cross_section(geom, 0.3)
    for tri, s in zip(mesh.triangles, mesh.stratum):
        ys = mesh.nodes[tri, 1]
        if s == 0:
            assert np.all(ys >= 0.7 - 1e-12)
        else:
            assert np.all(ys <= 0.7 + 1e-12)


def test_boston_triangles_inside_one_stratum(boston_geometry, boston_mesh):
    c = boston_mesh.centroids()
    got = np.array([int(boston_geometry.stratum_at(x, y)) for x, y in c])
    np.testing.assert_array_equal(got, boston_mesh.stratum)
    # vertices nudged toward the centroid fall in the same stratum
    p = boston_mesh.nodes[boston_mesh.triangles]
    for i in range(3):
        q = p[:, i] + 1e-6 * (c - p[:, i])
        side = np.array([int(boston_geometry.stratum_at(x, y)) for x, y in q])
        np.testing.assert_array_equal(side, boston_mesh.stratum)


def test_bad_h():
    with pytest.raises(GeometryError):
        generate_cross_section(rect_geometry(1.0, 0.0, 1.0), 0.0)


def test_self_intersecting_outline():
    with pytest.raises(GeometryError):
        CrossSectionGeometry(outer=[[0, 0], [1, 1], [1, 0], [0, 1]], tags=["Impervious"] * 4,
                             interfaces=[], strata=["s"], land_anchor_x=1.0,
                             land_heads={"s": 0.0})


def test_unordered_interfaces():
    with pytest.raises(GeometryError):
        rect_geometry(4.0, 0.0, 3.0, interfaces=[[[0, 1.0], [4, 1.0]], [[0, 2.0], [4, 2.0]]],
                      strata=("a", "b", "c"))


def test_round_trip(tmp_path, boston_mesh, boston_geometry):
    path = tmp_path / "mesh.json"
    save_mesh(boston_mesh, path)
    assert load_mesh(path) == boston_mesh
    gpath = tmp_path / "geom.json"
    save_geometry(boston_geometry, gpath)
    assert load_geometry(gpath).to_dict() == boston_geometry.to_dict()


def _small_mesh_file(tmp_path, mutate):
    mesh = generate_cross_section(rect_geometry(1.0, 0.0, 1.0), 0.5)
    data = mesh.to_dict()
    mutate(data)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    return path


def test_degenerate_triangle_named(tmp_path):
    def collapse(d):
        a, b, _, s = d["triangles"][3]
        d["triangles"][3] = [a, b, b, s]
    with pytest.raises(ValidationError, match="triangle 3"):
        load_mesh(_small_mesh_file(tmp_path, collapse))


def test_unknown_stratum(tmp_path):
    def bump(d):
        d["triangles"][0][3] = 7
    with pytest.raises(ValidationError, match="stratum"):
        load_mesh(_small_mesh_file(tmp_path, bump))


def test_malformed_file(tmp_path):
    path = tmp_path / "x.json"
    path.write_text('{"nodes": [[0, 0],\n ]')
    with pytest.raises(ParseError, match="line"):
        load_mesh(path)
    path.write_text('{"nodes": []}')
    with pytest.raises(ParseError):
        load_mesh(path)


def test_locate_vertex_and_centroid(boston_mesh):
    tri = boston_mesh.triangles[17]
    k, bary = locate_point(boston_mesh, *boston_mesh.nodes[tri[1]])
    assert tri[1] in boston_mesh.triangles[k]
    assert bary.max() == pytest.approx(1.0, abs=1e-12)
    k, bary = locate_point(boston_mesh, *boston_mesh.centroids()[17])
    assert k == 17
    np.testing.assert_allclose(bary, 1 / 3, atol=1e-12)


def test_locate_every_centroid():
    mesh = generate_cross_section(rect_geometry(3.0, 0.0, 2.0), 0.4)
    for k, c in enumerate(mesh.centroids()):
        assert locate_point(mesh, *c)[0] == k


def test_locate_outside(boston_mesh):
    with pytest.raises(OutsideDomain):
        locate_point(boston_mesh, 43.0, 7.0)
    with pytest.raises(OutsideDomain):
        locate_point(boston_mesh, -1.0, -5.0)


def test_refinement_conserves_tags(boston_geometry):
    coarse = generate_cross_section(boston_geometry, 1.0)
    fine = generate_cross_section(boston_geometry, 0.5)
    assert set(coarse.boundary_tags) == set(fine.boundary_tags)
    for tag in set(coarse.boundary_tags):
        assert fine.boundary_length(tag) == pytest.approx(coarse.boundary_length(tag), rel=1e-9)


def test_corner_takes_counterclockwise_next_tag(boston_geometry, boston_mesh):
    tags = boston_mesh.node_tags()
    outer = np.asarray(boston_geometry.outer)
    for i, corner in enumerate(outer):
        node = int(np.argmin(np.linalg.norm(boston_mesh.nodes - corner, axis=1)))
        assert np.allclose(boston_mesh.nodes[node], corner)
        assert tags[node] == boston_geometry.tags[i]


def test_boundary_edges_counterclockwise(boston_mesh):
    # each boundary edge runs with the domain on its left
    for a, b in boston_mesh.boundary_edges:
        mid = 0.5 * (boston_mesh.nodes[a] + boston_mesh.nodes[b])
        d = boston_mesh.nodes[b] - boston_mesh.nodes[a]
        inward = mid + 1e-4 * np.array([-d[1], d[0]]) / np.hypot(*d)
        locate_point(boston_mesh, *inward)


def test_generation_is_deterministic(boston_geometry):
    assert generate_cross_section(boston_geometry, 1.0) == generate_cross_section(boston_geometry, 1.0)
