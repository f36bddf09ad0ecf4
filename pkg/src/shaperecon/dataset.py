"""Parameter sampling and paired image dataset generation.

A sample couples a 6-vector of scene parameters (camera position, focus
point, collapse weight) with the images rendered from it: a simulated
contour image always, and for "real" samples also a pseudo-real rendering
of the identical scene. Per-sample RNG streams are derived from
(seed, kind, index) so generation order cannot change the result.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .camera import CameraParams, Intrinsics
from .geometry import PhantomConfig, ShapeModel, deform
from .images import from_u8, to_u8, write_pgm, read_pgm
from .render import PerturbConfig, contour_extract, rasterize_mask, render_pseudo_real

__all__ = [
    "ParamVector",
    "ParamRanges",
    "Sample",
    "Dataset",
    "default_ranges",
    "sample_parameters",
    "normalize_params",
    "denormalize_params",
    "build_dataset",
    "save_dataset",
    "load_dataset",
]

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ParamVector:
    """The six regressed scalars: camera position, focus point, collapse weight."""

    cam_pos: tuple[float, float, float]
    focus: tuple[float, float]
    collapse_weight: float

    def as_array(self) -> np.ndarray:
        return np.array([*self.cam_pos, *self.focus, self.collapse_weight])

    @staticmethod
    def from_array(a) -> "ParamVector":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (6,):
            raise ValueError("parameter vector must have 6 entries")
        return ParamVector((a[0], a[1], a[2]), (a[3], a[4]), float(a[5]))

    def camera(self) -> CameraParams:
        return CameraParams(self.cam_pos, self.focus)


@dataclass(frozen=True)
class ParamRanges:
    """Box ranges: center vector and per-dimension half widths."""

    center: ParamVector
    half_widths: tuple[float, ...]

    def __post_init__(self):
        hw = tuple(float(x) for x in self.half_widths)
        if len(hw) != 6 or min(hw) < 0.0:
            raise ValueError("half_widths must be 6 non-negative scalars")
        object.__setattr__(self, "half_widths", hw)

    def low(self) -> np.ndarray:
        return self.center.as_array() - np.array(self.half_widths)

    def high(self) -> np.ndarray:
        return self.center.as_array() + np.array(self.half_widths)


def default_ranges() -> ParamRanges:
    """Default sampling box: wide lateral camera motion, narrower in depth.

    The camera looks down +z from ~170 mm; depth varies by +/-15 mm, the
    two lateral directions by +/-25 mm, the focus point by +/-15 mm, and
    the collapse weight by +/-0.3 around the mean collapse.
    """
    center = ParamVector((0.0, 0.0, 170.0), (0.0, 0.0), 1.0)
    return ParamRanges(center, (25.0, 25.0, 15.0, 15.0, 15.0, 0.3))


def compact_ranges() -> ParamRanges:
    """Narrow preset: 10 mm on all camera axes and the focus point."""
    center = ParamVector((0.0, 0.0, 170.0), (0.0, 0.0), 1.0)
    return ParamRanges(center, (10.0, 10.0, 10.0, 10.0, 10.0, 0.3))


def sample_parameters(r: ParamRanges, n: int, seed: int) -> list[ParamVector]:
    """Draw n parameter vectors uniformly and independently inside the box."""
    if n <= 0:
        raise ValueError("need at least one sample")
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = r.low(), r.high()
    draws = rng.uniform(0.0, 1.0, size=(n, 6))
    vals = lo + draws * (hi - lo)
    return [ParamVector.from_array(v) for v in vals]


def normalize_params(p: ParamVector, r: ParamRanges) -> np.ndarray:
    """Map a parameter vector into the unit box [-1, 1]^6."""
    hw = np.array(r.half_widths)
    if (hw == 0.0).any():
        raise ValueError("cannot normalize with a zero half width")
    return (p.as_array() - r.center.as_array()) / hw


def denormalize_params(y, r: ParamRanges) -> ParamVector:
    y = np.asarray(y, dtype=np.float64)
    return ParamVector.from_array(r.center.as_array() + y * np.array(r.half_widths))


@dataclass(frozen=True)
class Sample:
    params: ParamVector
    sim_u8: np.ndarray  # contour image, uint8
    real_u8: np.ndarray | None = None  # pseudo-real image, uint8

    @property
    def sim(self) -> np.ndarray:
        return from_u8(self.sim_u8)

    @property
    def real(self) -> np.ndarray | None:
        return None if self.real_u8 is None else from_u8(self.real_u8)


@dataclass(frozen=True)
class Dataset:
    ranges: ParamRanges
    seed: int
    n_sim: int
    n_real: int
    perturb: PerturbConfig
    intrinsics: Intrinsics
    phantom: PhantomConfig | None
    model_digest: str
    samples: tuple[Sample, ...]

    def sim_samples(self):
        return self.samples[: self.n_sim]

    def real_samples(self):
        return self.samples[self.n_sim :]


def real_subset(ds: Dataset, indices) -> Dataset:
    """Dataset with all simulated samples but only the selected real samples.

    Indices address the real-sample list (0-based) and keep their order.
    """
    reals = ds.real_samples()
    picked = tuple(reals[i] for i in indices)
    return Dataset(ds.ranges, ds.seed, ds.n_sim, len(picked), ds.perturb,
                   ds.intrinsics, ds.phantom, ds.model_digest,
                   ds.samples[: ds.n_sim] + picked)


def model_digest(model: ShapeModel) -> str:
    h = hashlib.sha256()
    h.update(model.base.vertices.tobytes())
    h.update(model.base.triangles.tobytes())
    h.update(model.mean_disp.tobytes())
    h.update(model.disp_field.tobytes())
    return h.hexdigest()


def _sample_stream(seed: int, kind: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, kind, index))))


def _draw_params(rng, r: ParamRanges) -> ParamVector:
    lo, hi = r.low(), r.high()
    return ParamVector.from_array(lo + rng.uniform(0.0, 1.0, size=6) * (hi - lo))


def render_contour(model: ShapeModel, p: ParamVector, k: Intrinsics) -> np.ndarray:
    mesh = deform(model, p.collapse_weight)
    return contour_extract(rasterize_mask(mesh, p.camera(), k))


def build_dataset(model: ShapeModel, r: ParamRanges, n_sim: int, n_real: int,
                  perturb: PerturbConfig, k: Intrinsics, seed: int,
                  phantom: PhantomConfig | None = None) -> Dataset:
    """Render n_sim contour-only samples plus n_real paired samples."""
    if n_sim < 0 or n_real < 0 or n_sim + n_real == 0:
        raise ValueError("need a positive number of samples")
    samples = []
    for i in range(n_sim):
        rng = _sample_stream(seed, 0, i)
        p = _draw_params(rng, r)
        samples.append(Sample(p, to_u8(render_contour(model, p, k))))
    for j in range(n_real):
        rng = _sample_stream(seed, 1, j)
        p = _draw_params(rng, r)
        mesh = deform(model, p.collapse_weight)
        contour = contour_extract(rasterize_mask(mesh, p.camera(), k))
        pseudo_seed = int(rng.integers(0, 2**63))
        real = render_pseudo_real(mesh, p.camera(), k, replace(perturb, seed=pseudo_seed))
        samples.append(Sample(p, to_u8(contour), to_u8(real)))
    return Dataset(r, seed, n_sim, n_real, perturb, k, phantom,
                   model_digest(model), tuple(samples))


# --- persistence -------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _manifest_text(ds: Dataset) -> str:
    c = ds.ranges.center
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"seed = {ds.seed}",
        f"n_sim = {ds.n_sim}",
        f"n_real = {ds.n_real}",
        "center = " + ",".join(_fmt(v) for v in c.as_array()),
        "half_widths = " + ",".join(_fmt(v) for v in ds.ranges.half_widths),
        f"width = {ds.intrinsics.width}",
        f"height = {ds.intrinsics.height}",
        f"vertical_fov = {_fmt(ds.intrinsics.vertical_fov)}",
        f"near = {_fmt(ds.intrinsics.near)}",
        f"far = {_fmt(ds.intrinsics.far)}",
        f"shading_strength = {_fmt(ds.perturb.shading_strength)}",
        f"noise_sigma = {_fmt(ds.perturb.noise_sigma)}",
        f"background_gradient = {_fmt(ds.perturb.background_gradient)}",
        f"blur_radius = {ds.perturb.blur_radius}",
        f"occluder_fraction = {_fmt(ds.perturb.occluder_fraction)}",
        f"perturb_seed = {ds.perturb.seed}",
        f"model_digest = {ds.model_digest}",
    ]
    if ds.phantom is not None:
        ph = ds.phantom
        lines += [
            f"phantom_rings = {ph.rings}",
            f"phantom_segments = {ph.segments}",
            "phantom_radii = " + ",".join(_fmt(v) for v in ph.radii),
            f"phantom_collapse_scale = {_fmt(ph.collapse_scale)}",
            f"phantom_seed = {ph.seed}",
        ]
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, outdir) -> None:
    from pathlib import Path

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest").write_text(_manifest_text(ds))

    hw = np.array(ds.ranges.half_widths)
    center = ds.ranges.center.as_array()
    rows = ["index,cam_x,cam_y,cam_z,focus_x,focus_y,weight,"
            "ncam_x,ncam_y,ncam_z,nfocus_x,nfocus_y,nweight"]
    for i, s in enumerate(ds.samples):
        a = s.params.as_array()
        norm = np.where(hw > 0.0, (a - center) / np.where(hw > 0.0, hw, 1.0), 0.0)
        rows.append(f"{i}," + ",".join(_fmt(v) for v in a) + ","
                    + ",".join(_fmt(v) for v in norm))
    (out / "params.csv").write_text("\n".join(rows) + "\n")

    for i, s in enumerate(ds.samples):
        write_pgm(s.sim_u8, out / f"sim_{i:05d}.pgm")
        if s.real_u8 is not None:
            write_pgm(s.real_u8, out / f"real_{i:05d}.pgm")


def _parse_manifest(text: str) -> dict:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def load_dataset(path) -> Dataset:
    from pathlib import Path

    root = Path(path)
    mf = _parse_manifest((root / "manifest").read_text())
    if int(mf["format_version"]) != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format version {mf['format_version']}")
    center = ParamVector.from_array([float(x) for x in mf["center"].split(",")])
    ranges = ParamRanges(center, tuple(float(x) for x in mf["half_widths"].split(",")))
    k = Intrinsics(float(mf["vertical_fov"]), int(mf["width"]), int(mf["height"]),
                   float(mf["near"]), float(mf["far"]))
    perturb = PerturbConfig(float(mf["shading_strength"]), float(mf["noise_sigma"]),
                            float(mf["background_gradient"]), int(mf["blur_radius"]),
                            float(mf["occluder_fraction"]), int(mf["perturb_seed"]))
    phantom = None
    if "phantom_rings" in mf:
        phantom = PhantomConfig(int(mf["phantom_rings"]), int(mf["phantom_segments"]),
                                tuple(float(x) for x in mf["phantom_radii"].split(",")),
                                float(mf["phantom_collapse_scale"]), int(mf["phantom_seed"]))
    n_sim, n_real = int(mf["n_sim"]), int(mf["n_real"])

    params = []
    with open(root / "params.csv") as fh:
        header = fh.readline()
        for line in fh:
            cells = line.strip().split(",")
            params.append(ParamVector.from_array([float(x) for x in cells[1:7]]))
    if len(params) != n_sim + n_real:
        raise ValueError("params.csv row count does not match manifest")

    samples = []
    for i, p in enumerate(params):
        sim = to_u8(read_pgm(root / f"sim_{i:05d}.pgm"))
        real_path = root / f"real_{i:05d}.pgm"
        real = to_u8(read_pgm(real_path)) if i >= n_sim else None
        samples.append(Sample(p, sim, real))
    return Dataset(ranges, int(mf["seed"]), n_sim, n_real, perturb, k, phantom,
                   mf["model_digest"], tuple(samples))
