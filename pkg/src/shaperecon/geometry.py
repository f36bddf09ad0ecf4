"""Surface meshes, the phantom shape model, and the collapse deformation.

The shape model is a base (aerated) mesh plus a mean displacement and a
per-vertex displacement field; a single scalar weight blends the field:

    deformed_vertex_i = v_i + mean_disp + weight * disp_field_i

All coordinates are millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SurfaceMesh",
    "ShapeModel",
    "PhantomConfig",
    "deform",
    "make_phantom",
    "save_model",
    "load_model",
    "save_mesh",
    "load_mesh",
]


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangle mesh: vertices (n, 3) float64 mm, triangles (m, 3) int indices."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] == 0:
            raise ValueError("vertices must be a non-empty (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be an (m, 3) array")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise ValueError("triangle index out of range")
        if t.size and (np.diff(np.sort(t, axis=1), axis=1) == 0).any():
            raise ValueError("triangle repeats a vertex index")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True)
class ShapeModel:
    """Base mesh with a mean displacement and a per-vertex displacement field."""

    base: SurfaceMesh
    mean_disp: np.ndarray  # (3,) mm
    disp_field: np.ndarray  # (n, 3) mm, one vector per base vertex

    def __post_init__(self):
        mu = np.ascontiguousarray(np.asarray(self.mean_disp, dtype=np.float64))
        u = np.ascontiguousarray(np.asarray(self.disp_field, dtype=np.float64))
        if mu.shape != (3,):
            raise ValueError("mean_disp must have shape (3,)")
        if u.shape != (self.base.n_vertices, 3):
            raise ValueError("disp_field must have one 3-vector per base vertex")
        mu.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "mean_disp", mu)
        object.__setattr__(self, "disp_field", u)


@dataclass(frozen=True)
class PhantomConfig:
    """Procedural phantom: an ellipsoid with a directional collapse field.

    ``seed`` jitters the semi-axes (within +/-10%) and rotates the body
    about the z axis, so different seeds give distinct phantom variants
    with identical topology.
    """

    rings: int = 21
    segments: int = 20
    radii: tuple[float, float, float] = (60.0, 50.0, 40.0)
    collapse_scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.rings < 3 or self.segments < 3:
            raise ValueError("rings and segments must both be >= 3")
        if len(self.radii) != 3 or min(self.radii) <= 0:
            raise ValueError("radii must be three positive semi-axes")
        if not 0.0 < self.collapse_scale < 1.0:
            raise ValueError("collapse_scale must lie in (0, 1)")


# Axis along which the collapse field is doubled; perpendicular to the
# default view direction so the weight is identifiable from silhouettes.
COLLAPSE_AXIS = 1

# Fixed mean displacement of the collapsed shape (mm, along the collapse axis).
MEAN_COLLAPSE_SHIFT = -5.0


def deform(model: ShapeModel, weight: float) -> SurfaceMesh:
    """Apply the collapse deformation with the given weight.

    weight < 1 is a milder, weight > 1 a stronger collapse than the mean.
    Topology is shared with the base mesh.
    """
    v = model.base.vertices + model.mean_disp + weight * model.disp_field
    return SurfaceMesh(v, model.base.triangles)


def _uv_sphere(rings: int, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit UV sphere: (rings-1)*segments + 2 vertices, 2*segments*(rings-1) triangles."""
    verts = [np.array([0.0, 1.0, 0.0])]  # north pole on +y
    for j in range(1, rings):
        phi = np.pi * j / rings
        y = np.cos(phi)
        r = np.sin(phi)
        for k in range(segments):
            th = 2.0 * np.pi * k / segments
            verts.append(np.array([r * np.cos(th), y, r * np.sin(th)]))
    verts.append(np.array([0.0, -1.0, 0.0]))
    south = len(verts) - 1

    def ring_vertex(j, k):
        return 1 + (j - 1) * segments + (k % segments)

    tris = []
    for k in range(segments):
        tris.append((0, ring_vertex(1, k + 1), ring_vertex(1, k)))
    for j in range(1, rings - 1):
        for k in range(segments):
            a = ring_vertex(j, k)
            b = ring_vertex(j, k + 1)
            c = ring_vertex(j + 1, k)
            d = ring_vertex(j + 1, k + 1)
            tris.append((a, b, d))
            tris.append((a, d, c))
    for k in range(segments):
        tris.append((south, ring_vertex(rings - 1, k), ring_vertex(rings - 1, k + 1)))
    return np.array(verts), np.array(tris, dtype=np.int64)


def make_phantom(cfg: PhantomConfig) -> ShapeModel:
    """Build the phantom shape model deterministically from its config."""
    unit, tris = _uv_sphere(cfg.rings, cfg.segments)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    jitter = rng.uniform(0.9, 1.1, size=3)
    angle = rng.uniform(0.0, 2.0 * np.pi)

    v = unit * (np.asarray(cfg.radii, dtype=np.float64) * jitter)
    c, s = np.cos(angle), np.sin(angle)
    rot_z = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    v = v @ rot_z.T

    centroid = v.mean(axis=0)
    axis_scale = np.ones(3)
    axis_scale[COLLAPSE_AXIS] = 2.0
    disp = -cfg.collapse_scale * (v - centroid) * axis_scale

    mean_disp = np.zeros(3)
    mean_disp[COLLAPSE_AXIS] = MEAN_COLLAPSE_SHIFT
    return ShapeModel(SurfaceMesh(v, tris), mean_disp, disp)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_mesh(mesh: SurfaceMesh, path) -> None:
    """Write a mesh as `v x y z` / `f i j k` lines (0-based indices)."""
    with open(path, "w") as fh:
        fh.write(_mesh_text(mesh))


def _mesh_text(mesh: SurfaceMesh) -> str:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    for t in mesh.triangles:
        lines.append(f"f {t[0]} {t[1]} {t[2]}")
    return "\n".join(lines) + "\n"


def save_model(model: ShapeModel, path) -> None:
    """Mesh lines plus one `mu x y z` line and per-vertex `u x y z` lines."""
    mu = model.mean_disp
    lines = [_mesh_text(model.base).rstrip("\n")]
    lines.append(f"mu {_fmt(mu[0])} {_fmt(mu[1])} {_fmt(mu[2])}")
    for u in model.disp_field:
        lines.append(f"u {_fmt(u[0])} {_fmt(u[1])} {_fmt(u[2])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_lines(path):
    verts, tris, mu, us = [], [], None, []
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag, rest = parts[0], parts[1:]
            if tag == "v":
                verts.append([float(x) for x in rest])
            elif tag == "f":
                tris.append([int(x) for x in rest])
            elif tag == "mu":
                mu = np.array([float(x) for x in rest])
            elif tag == "u":
                us.append([float(x) for x in rest])
            else:
                raise ValueError(f"{path}:{ln}: unknown record {tag!r}")
    return verts, tris, mu, us


def load_mesh(path) -> SurfaceMesh:
    verts, tris, _, _ = _parse_lines(path)
    return SurfaceMesh(np.array(verts), np.array(tris, dtype=np.int64))


def load_model(path) -> ShapeModel:
    verts, tris, mu, us = _parse_lines(path)
    if mu is None:
        raise ValueError(f"{path}: missing mu record, not a shape model file")
    mesh = SurfaceMesh(np.array(verts), np.array(tris, dtype=np.int64))
    return ShapeModel(mesh, mu, np.array(us))
