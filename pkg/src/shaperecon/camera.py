"""Five-parameter camera model and projection math.

A camera is a 3D position plus a 2D focus point on the world plane z=0;
it looks from its position toward the focus point with world +y as up.
View transforms are rigid (mm in, mm out); the perspective matrix maps
the frustum to normalized device coordinates in [-1, 1]^3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CameraParams",
    "Intrinsics",
    "DEFAULT_INTRINSICS",
    "view_axes",
    "view_matrix",
    "view_transform",
    "perspective_matrix",
    "projection_matrix",
    "project_to_pixels",
]


@dataclass(frozen=True)
class CameraParams:
    position: tuple[float, float, float]
    focus: tuple[float, float]  # (x, y) on the world plane z = 0

    def target(self) -> np.ndarray:
        return np.array([self.focus[0], self.focus[1], 0.0])


@dataclass(frozen=True)
class Intrinsics:
    vertical_fov: float = 60.0  # degrees
    width: int = 180
    height: int = 120
    near: float = 1.0
    far: float = 1000.0

    def __post_init__(self):
        if not 0.0 < self.vertical_fov < 180.0:
            raise ValueError("vertical_fov must lie in (0, 180) degrees")
        if not 0.0 < self.near < self.far:
            raise ValueError("need 0 < near < far")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


DEFAULT_INTRINSICS = Intrinsics()


def view_axes(cam: CameraParams):
    """Right-handed camera basis (x, y, z) in world coordinates.

    z points from the focus target back toward the camera, so the view
    direction is -z. Up is world +y, or +x when the view direction is
    (nearly) parallel to y.
    """
    eye = np.asarray(cam.position, dtype=np.float64)
    d = eye - cam.target()
    r = np.linalg.norm(d)
    if r == 0.0:
        raise ValueError("camera position coincides with the focus point")
    z = d / r
    up = np.array([0.0, 1.0, 0.0])
    if abs(z @ up) > 1.0 - 1e-9:
        up = np.array([1.0, 0.0, 0.0])
    xr = np.cross(up, z)
    x = xr / np.linalg.norm(xr)
    y = np.cross(z, x)
    return x, y, z


def view_matrix(cam: CameraParams) -> np.ndarray:
    """4x4 rigid world-to-camera matrix (row-major, column-vector convention)."""
    x, y, z = view_axes(cam)
    eye = np.asarray(cam.position, dtype=np.float64)
    m = np.eye(4)
    m[0, :3] = x
    m[1, :3] = y
    m[2, :3] = z
    m[:3, 3] = -(m[:3, :3] @ eye)
    return m


def view_transform(cam: CameraParams, points: np.ndarray) -> np.ndarray:
    """Map world points (..., 3) into camera coordinates (camera at origin)."""
    x, ya, z = view_axes(cam)
    eye = np.asarray(cam.position, dtype=np.float64)
    rel = np.asarray(points, dtype=np.float64) - eye
    return rel @ np.stack([x, ya, z], axis=1)


def perspective_matrix(k: Intrinsics) -> np.ndarray:
    """Standard right-handed perspective matrix, NDC z in [-1, 1]."""
    f = 1.0 / np.tan(np.deg2rad(k.vertical_fov) / 2.0)
    aspect = k.width / k.height
    n, fa = k.near, k.far
    m = np.zeros((4, 4))
    m[0, 0] = f / aspect
    m[1, 1] = f
    m[2, 2] = (fa + n) / (n - fa)
    m[2, 3] = 2.0 * fa * n / (n - fa)
    m[3, 2] = -1.0
    return m


def projection_matrix(cam: CameraParams, k: Intrinsics) -> np.ndarray:
    """Full 4x4 projection: perspective composed with the view transform."""
    return perspective_matrix(k) @ view_matrix(cam)


def project_to_pixels(points: np.ndarray, m: np.ndarray, k: Intrinsics):
    """Project world points to pixel coordinates.

    Returns ``(pix, depth, valid)``: pix (..., 2) with x right and y down,
    depth as positive distance along the view axis, and a validity mask
    that is False for points at or behind the camera plane (w ~ 0 is
    flagged invalid, never raised).
    """
    p = np.asarray(points, dtype=np.float64)
    homo = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    clip = homo @ m.T
    w = clip[..., 3]
    valid = w > 1e-9
    safe_w = np.where(valid, w, 1.0)
    ndc = clip[..., :3] / safe_w[..., None]
    px = (ndc[..., 0] + 1.0) / 2.0 * k.width
    py = (1.0 - ndc[..., 1]) / 2.0 * k.height
    pix = np.stack([px, py], axis=-1)
    return pix, w, valid
