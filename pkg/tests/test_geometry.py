import numpy as np
import pytest

from shaperecon.geometry import (
    PhantomConfig,
    ShapeModel,
    SurfaceMesh,
    deform,
    load_mesh,
    load_model,
    make_phantom,
    save_mesh,
    save_model,
)


def single_vertex_model(v, mu, u):
    # one real triangle is required, so pad with two dummy vertices
    verts = np.array([v, [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    mesh = SurfaceMesh(verts, np.array([[0, 1, 2]]))
    disp = np.array([u, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    return ShapeModel(mesh, np.array(mu), disp)


def test_deform_zero_weight_adds_only_mean_displacement():
    m = single_vertex_model([10, 0, 0], [-2, 0, 0], [4, 0, 0])
    out = deform(m, 0.0)
    assert np.array_equal(out.vertices[0], [8.0, 0.0, 0.0])


def test_deform_unit_weight_adds_mean_and_field():
    m = single_vertex_model([10, 0, 0], [-2, 0, 0], [4, 0, 0])
    out = deform(m, 1.0)
    assert np.array_equal(out.vertices[0], [12.0, 0.0, 0.0])


def test_deform_identity_when_model_is_trivial():
    mesh = make_phantom(PhantomConfig()).base
    model = ShapeModel(mesh, np.zeros(3), np.zeros((mesh.n_vertices, 3)))
    for w in (0.0, 0.5, 2.0, -1.0):
        out = deform(model, w)
        assert np.array_equal(out.vertices, mesh.vertices)
        assert np.array_equal(out.triangles, mesh.triangles)


def test_deform_is_affine_in_weight():
    model = make_phantom(PhantomConfig(seed=3))
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = rng.uniform(-2, 2, size=2)
        mid = deform(model, (a + b) / 2).vertices
        avg = (deform(model, a).vertices + deform(model, b).vertices) / 2
        assert np.abs(mid - avg).max() < 1e-12


def test_deform_difference_is_weight_times_field():
    model = make_phantom(PhantomConfig(seed=1))
    for w in (0.25, 1.0, 1.7):
        diff = deform(model, w).vertices - deform(model, 0.0).vertices
        assert np.allclose(diff, w * model.disp_field, rtol=0, atol=1e-9)


def test_phantom_vertex_and_triangle_counts():
    model = make_phantom(PhantomConfig(rings=21, segments=20))
    assert model.base.n_vertices == 402
    assert model.base.n_triangles == 800


def test_phantom_is_deterministic():
    a = make_phantom(PhantomConfig(seed=7))
    b = make_phantom(PhantomConfig(seed=7))
    assert np.array_equal(a.base.vertices, b.base.vertices)
    assert np.array_equal(a.base.triangles, b.base.triangles)
    assert np.array_equal(a.mean_disp, b.mean_disp)
    assert np.array_equal(a.disp_field, b.disp_field)


def test_phantom_seed_changes_shape_not_topology():
    a = make_phantom(PhantomConfig(seed=0))
    b = make_phantom(PhantomConfig(seed=1))
    assert np.array_equal(a.base.triangles, b.base.triangles)
    assert not np.array_equal(a.base.vertices, b.base.vertices)


def test_displacement_field_bound():
    cfg = PhantomConfig(radii=(60, 50, 40), collapse_scale=0.3)
    model = make_phantom(cfg)
    v = model.base.vertices
    dist = np.linalg.norm(v - v.mean(axis=0), axis=1)
    # brute-force max over vertices against the analytic bound
    assert np.linalg.norm(model.disp_field, axis=1).max() <= 0.3 * 2.0 * dist.max() + 1e-12


def test_phantom_is_watertight():
    model = make_phantom(PhantomConfig())
    edges = {}
    for tri in model.base.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    assert set(edges.values()) == {2}


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(rings=2),
        dict(segments=2),
        dict(radii=(0.0, 1.0, 1.0)),
        dict(collapse_scale=0.0),
        dict(collapse_scale=1.0),
    ],
)
def test_invalid_phantom_config_rejected(kwargs):
    with pytest.raises(ValueError):
        PhantomConfig(**kwargs)


def test_mesh_invariants_enforced():
    with pytest.raises(ValueError):
        SurfaceMesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError):
        SurfaceMesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))
    with pytest.raises(ValueError):
        SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))


def test_mesh_file_round_trip(tmp_path):
    model = make_phantom(PhantomConfig(seed=5))
    p = tmp_path / "m.shm"
    save_mesh(model.base, p)
    back = load_mesh(p)
    assert np.array_equal(back.vertices, model.base.vertices)
    assert np.array_equal(back.triangles, model.base.triangles)


def test_model_file_round_trip_and_rewrite_identical(tmp_path):
    model = make_phantom(PhantomConfig(seed=5))
    p1, p2 = tmp_path / "a.shm", tmp_path / "b.shm"
    save_model(model, p1)
    back = load_model(p1)
    assert np.array_equal(back.base.vertices, model.base.vertices)
    assert np.array_equal(back.mean_disp, model.mean_disp)
    assert np.array_equal(back.disp_field, model.disp_field)
    save_model(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
