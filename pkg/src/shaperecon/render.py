"""Software rendering of meshes to binary masks, contours, and shaded images.

Coverage rule: a pixel belongs to the mask iff its center is inside some
projected triangle, with ties on edges resolved by the top-left rule, so
shared edges are never double-counted and never dropped. Triangles with
any vertex closer than the near plane are rejected outright.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraParams, Intrinsics, project_to_pixels, projection_matrix
from .geometry import SurfaceMesh
from .images import check_image, is_binary

__all__ = [
    "PerturbConfig",
    "rasterize_mask",
    "rasterize_triangles_2d",
    "rasterize_with_depth",
    "contour_extract",
    "render_pseudo_real",
]


@dataclass(frozen=True)
class PerturbConfig:
    """Perturbations that turn a clean rendering into a pseudo-real image."""

    shading_strength: float = 0.6
    noise_sigma: float = 0.08
    background_gradient: float = 0.35
    blur_radius: int = 1
    occluder_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.shading_strength <= 1.0:
            raise ValueError("shading_strength must lie in [0, 1]")
        if not 0.0 <= self.noise_sigma <= 0.3:
            raise ValueError("noise_sigma must lie in [0, 0.3]")
        if not 0.0 <= self.background_gradient <= 1.0:
            raise ValueError("background_gradient must lie in [0, 1]")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")
        if not 0.0 <= self.occluder_fraction <= 0.5:
            raise ValueError("occluder_fraction must lie in [0, 0.5]")


def _is_top_left(ax, ay, bx, by) -> bool:
    # Edge a->b of a positively oriented triangle (y down): accept ties on
    # horizontal edges pointing right (top) and on edges pointing up (left).
    dy = by - ay
    return dy < 0.0 or (dy == 0.0 and bx - ax > 0.0)


def _tri_setup(p0, p1, p2, width, height):
    """Bounding box and per-pixel coverage of one screen-space triangle.

    Returns None for degenerate or fully off-screen triangles, otherwise
    ``(y0, y1, x0, x1, inside, bary, area)`` with barycentric edge values
    ordered opposite vertex 0, 1, 2 of the (possibly swapped) triangle.
    """
    area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
    if area == 0.0:
        return None
    swapped = area < 0.0
    if swapped:
        p1, p2 = p2, p1
        area = -area

    xs = (p0[0], p1[0], p2[0])
    ys = (p0[1], p1[1], p2[1])
    x0 = max(0, int(np.ceil(min(xs) - 0.5)))
    x1 = min(width - 1, int(np.floor(max(xs) - 0.5)))
    y0 = max(0, int(np.ceil(min(ys) - 0.5)))
    y1 = min(height - 1, int(np.floor(max(ys) - 0.5)))
    if x1 < x0 or y1 < y0:
        return None

    cx = np.arange(x0, x1 + 1) + 0.5
    cy = (np.arange(y0, y1 + 1) + 0.5)[:, None]

    inside = None
    bary = []
    for (ax, ay), (bx, by) in ((p1, p2), (p2, p0), (p0, p1)):
        e = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        ok = (e > 0.0) | ((e == 0.0) & _is_top_left(ax, ay, bx, by))
        inside = ok if inside is None else (inside & ok)
        bary.append(e)
    return y0, y1, x0, x1, inside, bary, area, swapped


def rasterize_triangles_2d(triangles, width: int, height: int) -> np.ndarray:
    """Coverage mask of screen-space triangles given directly in pixel coords.

    Each triangle is three (x, y) pairs. This is the same coverage rule the
    mesh rasterizer applies after projection.
    """
    mask = np.zeros((height, width), dtype=bool)
    for tri in triangles:
        p0, p1, p2 = ((float(x), float(y)) for x, y in tri)
        got = _tri_setup(p0, p1, p2, width, height)
        if got is None:
            continue
        y0, y1, x0, x1, inside, _, _, _ = got
        sub = mask[y0 : y1 + 1, x0 : x1 + 1]
        np.logical_or(sub, inside, out=sub)
    return mask.astype(np.float64)


def _raster_core(mesh: SurfaceMesh, cam: CameraParams, k: Intrinsics, want_depth: bool):
    mask = np.zeros((k.height, k.width), dtype=bool)
    depth = np.full((k.height, k.width), np.inf) if want_depth else None
    if mesh.n_triangles == 0:
        return mask, depth

    m = projection_matrix(cam, k)
    pix, w, _ = project_to_pixels(mesh.vertices, m, k)

    # Vectorized per-triangle setup; the paint loop below only touches
    # triangles that survive rejection and clipping.
    tp = pix[mesh.triangles]  # (T, 3, 2)
    td = w[mesh.triangles]  # (T, 3)
    keep = (td >= k.near).all(axis=1)

    area = ((tp[:, 1, 0] - tp[:, 0, 0]) * (tp[:, 2, 1] - tp[:, 0, 1])
            - (tp[:, 1, 1] - tp[:, 0, 1]) * (tp[:, 2, 0] - tp[:, 0, 0]))
    swap = area < 0.0
    tp[swap] = tp[swap][:, [0, 2, 1]]
    td[swap] = td[swap][:, [0, 2, 1]]
    area = np.abs(area)
    keep &= area != 0.0

    x0 = np.maximum(0, np.ceil(tp[:, :, 0].min(axis=1) - 0.5)).astype(np.int64)
    x1 = np.minimum(k.width - 1, np.floor(tp[:, :, 0].max(axis=1) - 0.5)).astype(np.int64)
    y0 = np.maximum(0, np.ceil(tp[:, :, 1].min(axis=1) - 0.5)).astype(np.int64)
    y1 = np.minimum(k.height - 1, np.floor(tp[:, :, 1].max(axis=1) - 0.5)).astype(np.int64)
    keep &= (x1 >= x0) & (y1 >= y0)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return mask, depth

    cols = np.arange(k.width) + 0.5
    rows = (np.arange(k.height) + 0.5)[:, None]
    corners = tp[idx].tolist()
    depths = td[idx].tolist()
    areas = area[idx].tolist()
    boxes = np.stack([y0[idx], y1[idx], x0[idx], x1[idx]], axis=1).tolist()

    for t in range(len(corners)):
        (p0, p1, p2) = corners[t]
        by0, by1, bx0, bx1 = boxes[t]
        cx = cols[bx0 : bx1 + 1]
        cy = rows[by0 : by1 + 1]
        inside = None
        bary = []
        for (ax, ay), (bx, by) in ((p1, p2), (p2, p0), (p0, p1)):
            e = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            ok = (e > 0.0) | ((e == 0.0) & _is_top_left(ax, ay, bx, by))
            inside = ok if inside is None else (inside & ok)
            if want_depth:
                bary.append(e)
        sub = mask[by0 : by1 + 1, bx0 : bx1 + 1]
        np.logical_or(sub, inside, out=sub)
        if want_depth:
            d0, d1, d2 = depths[t]
            inv = (bary[0] / d0 + bary[1] / d1 + bary[2] / d2) / areas[t]
            dsub = depth[by0 : by1 + 1, bx0 : bx1 + 1]
            cand = np.where(inside & (inv > 0.0), 1.0 / np.maximum(inv, 1e-300), np.inf)
            np.minimum(dsub, cand, out=dsub)
    return mask, depth


def rasterize_mask(mesh: SurfaceMesh, cam: CameraParams, k: Intrinsics) -> np.ndarray:
    """Binary silhouette of the mesh as seen by the camera."""
    mask, _ = _raster_core(mesh, cam, k, want_depth=False)
    return mask.astype(np.float64)


def rasterize_with_depth(mesh: SurfaceMesh, cam: CameraParams, k: Intrinsics):
    """Mask plus nearest-surface depth (mm, inf outside the mask)."""
    mask, depth = _raster_core(mesh, cam, k, want_depth=True)
    return mask.astype(np.float64), depth


def _shift_or(acc, m, dy, dx, op):
    h, w = m.shape
    src = m[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
    dst = acc[max(0, dy) : h - max(0, -dy), max(0, dx) : w - max(0, -dx)]
    op(dst, src, out=dst)


def contour_extract(mask: np.ndarray) -> np.ndarray:
    """Morphological gradient of a binary mask with a 3x3 cross element.

    Pixels outside the image count as background for both the dilation
    and the erosion.
    """
    mask = check_image(mask)
    if not is_binary(mask):
        raise ValueError("contour_extract expects a binary mask")
    m = mask.astype(bool)
    dil = m.copy()
    ero = m.copy()
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        _shift_or(dil, m, dy, dx, np.logical_or)
        _shift_or(ero, m, dy, dx, np.logical_and)
    # erosion by a cross reaching past the border always fails there
    ero[0, :] = ero[-1, :] = False
    ero[:, 0] = ero[:, -1] = False
    return np.clip(dil.astype(np.float64) - ero.astype(np.float64), 0.0, 1.0)


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return img
    size = 2 * radius + 1
    out = np.pad(img, radius, mode="edge")
    for axis in (0, 1):
        c = np.cumsum(out, axis=axis)
        zero = np.zeros_like(np.take(c, [0], axis=axis))
        c = np.concatenate([zero, c], axis=axis)
        n = out.shape[axis] - size + 1
        out = (np.take(c, np.arange(size, size + n), axis=axis)
               - np.take(c, np.arange(0, n), axis=axis)) / size
    return out


def render_pseudo_real(mesh: SurfaceMesh, cam: CameraParams, k: Intrinsics,
                       p: PerturbConfig) -> np.ndarray:
    """Shaded, blurred, noisy, partially occluded rendering of the mesh.

    Stands in for a camera frame of the same scene the binary mask
    describes; deterministic in the config seed.
    """
    mask, depth = rasterize_with_depth(mesh, cam, k)
    inside = mask > 0.0
    img = np.zeros((k.height, k.width))
    # Separate streams so disabling one perturbation leaves the others alone.
    appearance_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((p.seed, 0))))
    noise_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((p.seed, 1))))
    occ_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((p.seed, 2))))

    # per-image appearance jitter: configured strengths are midpoints
    shade = p.shading_strength * appearance_rng.uniform(0.6, 1.4)
    bg = p.background_gradient * appearance_rng.uniform(0.5, 1.5)
    tissue = 1.0 - min(shade, 1.0) * appearance_rng.uniform(0.0, 0.3)
    if k.height > 1 and bg > 0.0:
        ramp = np.linspace(0.0, min(bg, 1.0), k.height)
        img += ramp[:, None]
    if inside.any():
        d = depth[inside]
        lo, hi = d.min(), d.max()
        dn = (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
        img[inside] = tissue * (1.0 - min(shade, 1.0) * dn)
    img = _box_blur(img, p.blur_radius)
    if p.noise_sigma > 0.0:
        img = img + noise_rng.normal(0.0, p.noise_sigma, size=img.shape)
    if p.occluder_fraction > 0.0:
        side = int(occ_rng.integers(4))
        dim = k.width if side < 2 else k.height
        thick = int(occ_rng.uniform(0.4, 1.0) * p.occluder_fraction * dim)
        fill = occ_rng.uniform(0.05, 0.3)
        if thick > 0:
            if side == 0:
                img[:, :thick] = fill
            elif side == 1:
                img[:, -thick:] = fill
            elif side == 2:
                img[:thick, :] = fill
            else:
                img[-thick:, :] = fill
    return np.clip(img, 0.0, 1.0)
