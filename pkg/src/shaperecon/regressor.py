"""CNN regressor from a single image to the six scene parameters, trained
with a projected-vertex alignment loss plus a normalized parameter loss.

The alignment loss compares mesh vertices in the two camera frames:

    L_R = mean_i || view(cam)(deform(w).v_i) - view(cam')(deform(w').v_i) ||

in millimeters. Its gradient with respect to the six parameters is
computed analytically (the deformation is linear in the weight, and the
look-at construction is differentiated by the chain rule); a central
finite-difference fallback cross-checks the analytic path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraParams, view_axes
from .dataset import Dataset, ParamRanges, ParamVector, denormalize_params, normalize_params
from .geometry import ShapeModel, deform
from .images import check_image
from .nn import (
    Adam,
    AvgPool2,
    Conv2d,
    Dense,
    Dropout,
    Net,
    ReLU,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "RegressorModel",
    "RegressorHyper",
    "TRAIN_MODES",
    "build_regressor",
    "predict_params",
    "loss_reconstruction",
    "loss_parameter",
    "loss_total",
    "grad_reconstruction",
    "grad_reconstruction_fd",
    "train_regressor",
    "save_regressor",
    "load_regressor",
]

TRAIN_MODES = ("real_only", "virtual", "proposed")


@dataclass
class RegressorModel:
    net: Net
    width: int
    height: int


@dataclass(frozen=True)
class RegressorHyper:
    batch_size: int = 60
    epochs: int = 500
    lr: float = 1e-3
    dropout: float = 0.5
    param_loss_weight: float = 0.5
    seed: int = 0
    analytic_gradients: bool = True  # False switches to the finite-difference path


def build_regressor(width: int = 180, height: int = 120, dropout: float = 0.5,
                    seed: int = 0, chans: tuple[int, ...] = (6, 12, 24, 32),
                    head: int = 128, dtype=np.float64) -> RegressorModel:
    """Pooling front end, four stride-2 conv blocks, two dense layers."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0))))
    h, w = height // 2, width // 2
    layers = [AvgPool2()]
    c_in = 1
    for c_out in chans:
        layers += [Conv2d(c_in, c_out, kernel=3, stride=2, pad=1, rng=rng,
                          dtype=dtype), ReLU()]
        h = (h + 2 - 3) // 2 + 1
        w = (w + 2 - 3) // 2 + 1
        c_in = c_out
    layers += [Dense(h * w * c_in, head, rng=rng, dtype=dtype), ReLU(),
               Dropout(dropout), Dense(head, 6, rng=rng, dtype=dtype)]
    return RegressorModel(Net(layers), width, height)


def predict_params(model: RegressorModel, image: np.ndarray, r: ParamRanges) -> ParamVector:
    """Eval-mode forward pass, denormalized through the sampling ranges."""
    img = check_image(image)
    if img.shape != (model.height, model.width):
        raise ValueError(f"expected a {model.height}x{model.width} image, got {img.shape}")
    y = model.net.forward(img[None, :, :])[0]
    return denormalize_params(y, r)


# --- losses ------------------------------------------------------------------

def camera_space_vertices(model: ShapeModel, p: ParamVector) -> np.ndarray:
    mesh = deform(model, p.collapse_weight)
    x, y, z = view_axes(p.camera())
    rel = mesh.vertices - np.asarray(p.cam_pos, dtype=np.float64)
    return rel @ np.stack([x, y, z], axis=1)


def loss_reconstruction(pred: ParamVector, true: ParamVector, model: ShapeModel) -> float:
    """Mean vertex distance (mm) between the two camera-frame meshes."""
    a = camera_space_vertices(model, true)
    b = camera_space_vertices(model, pred)
    return float(np.linalg.norm(b - a, axis=1).mean())


def loss_parameter(pred: ParamVector, true: ParamVector, r: ParamRanges) -> float:
    """Mean squared difference of the normalized parameter vectors."""
    d = normalize_params(true, r) - normalize_params(pred, r)
    return float(np.mean(d * d))


def loss_total(pred: ParamVector, true: ParamVector, model: ShapeModel,
               r: ParamRanges, param_loss_weight: float = 0.5) -> float:
    return loss_reconstruction(pred, true, model) \
        + param_loss_weight * loss_parameter(pred, true, r)


# --- analytic gradient of the alignment loss ---------------------------------

def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _axis_jacobians(cam: CameraParams):
    """Camera axes and their derivatives w.r.t. the five camera scalars.

    Returns (R, dR) with R = rows (x, y, z) and dR of shape (5, 3, 3);
    parameter order: position x, y, z, focus x, focus y.
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
    xr = _cross(up, z)
    ell = np.linalg.norm(xr)
    x = xr / ell
    y = _cross(z, x)
    R = np.stack([x, y, z])

    dR = np.zeros((5, 3, 3))
    for a in range(5):
        dd = np.zeros(3)
        if a < 3:
            dd[a] = 1.0
        else:
            dd[a - 3] = -1.0
        dz = (dd - z * (z @ dd)) / r
        dxr = _cross(up, dz)
        dx = (dxr - x * (x @ dxr)) / ell
        dy = _cross(dz, x) + _cross(z, dx)
        dR[a] = np.stack([dx, dy, dz])
    return R, dR


def _loss_and_grad_against(pred: ParamVector, true_cam: np.ndarray,
                           model: ShapeModel) -> tuple[float, np.ndarray]:
    """Alignment loss and its gradient given precomputed true-frame vertices."""
    loss, grad = _loss_and_grad_batch(pred.as_array()[None, :], true_cam[None], model)
    return float(loss[0]), grad[0]


def _cross_rows(a, b):
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _loss_and_grad_batch(pred_rows: np.ndarray, true_cams: np.ndarray,
                         model: ShapeModel):
    """Alignment losses and gradients for a whole batch of predictions.

    pred_rows is (B, 6) denormalized parameters, true_cams (B, n, 3)
    precomputed camera-frame targets. Returns (losses (B,), grads (B, 6)).
    """
    bsz = pred_rows.shape[0]
    eye = pred_rows[:, 0:3]
    target = np.concatenate([pred_rows[:, 3:5], np.zeros((bsz, 1))], axis=1)
    weight = pred_rows[:, 5]

    d = eye - target
    r = np.linalg.norm(d, axis=1)
    if (r == 0.0).any():
        raise ValueError("camera position coincides with the focus point")
    z = d / r[:, None]
    up = np.tile(np.array([0.0, 1.0, 0.0]), (bsz, 1))
    fallback = np.abs(z[:, 1]) > 1.0 - 1e-9
    up[fallback] = (1.0, 0.0, 0.0)
    xr = _cross_rows(up, z)
    ell = np.linalg.norm(xr, axis=1)
    x = xr / ell[:, None]
    y = _cross_rows(z, x)
    R = np.stack([x, y, z], axis=1)  # (B, 3, 3) rows x, y, z

    # axis derivatives for the five camera scalars
    dR = np.empty((bsz, 5, 3, 3))
    for a in range(5):
        dd = np.zeros((bsz, 3))
        if a < 3:
            dd[:, a] = 1.0
        else:
            dd[:, a - 3] = -1.0
        dz = (dd - z * (z * dd).sum(axis=1)[:, None]) / r[:, None]
        dxr = _cross_rows(up, dz)
        dx = (dxr - x * (x * dxr).sum(axis=1)[:, None]) / ell[:, None]
        dy = _cross_rows(dz, x) + _cross_rows(z, dx)
        dR[:, a, 0] = dx
        dR[:, a, 1] = dy
        dR[:, a, 2] = dz

    verts = model.base.vertices + model.mean_disp  # (n, 3)
    u = model.disp_field
    w_verts = verts[None, :, :] + weight[:, None, None] * u[None, :, :]
    rel = w_verts - eye[:, None, :]  # (B, n, 3)
    b = rel @ R.transpose(0, 2, 1)
    diff = b - true_cams
    norms = np.sqrt((diff * diff).sum(axis=2))  # (B, n)
    n = norms.shape[1]
    losses = norms.mean(axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    ghat = np.where(norms[:, :, None] > 0.0, diff / safe[:, :, None], 0.0)

    grads = np.empty((bsz, 6))
    db = rel[:, None, :, :] @ dR.transpose(0, 1, 3, 2)  # (B, 5, n, 3)
    for a in range(3):
        db[:, a] -= R[:, :, a][:, None, :]  # d(rel)/d eye_a = -e_a, rotated
    grads[:, :5] = np.einsum("bvi,bavi->ba", ghat, db, optimize=True) / n
    db_w = u @ R.transpose(0, 2, 1)
    grads[:, 5] = np.einsum("bvi,bvi->b", ghat, db_w, optimize=True) / n
    return losses, grads


def grad_reconstruction(pred: ParamVector, true: ParamVector,
                        model: ShapeModel) -> np.ndarray:
    """d loss_reconstruction / d pred, a 6-vector (3 position, 2 focus, weight)."""
    _, grad = _loss_and_grad_against(pred, camera_space_vertices(model, true), model)
    return grad


def grad_reconstruction_fd(pred: ParamVector, true: ParamVector, model: ShapeModel,
                           h: float = 1e-5) -> np.ndarray:
    """Central-difference cross-check of grad_reconstruction."""
    base = pred.as_array()
    out = np.zeros(6)
    for i in range(6):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        out[i] = (loss_reconstruction(ParamVector.from_array(up), true, model)
                  - loss_reconstruction(ParamVector.from_array(down), true, model)) / (2 * h)
    return out


# --- training ----------------------------------------------------------------

def _training_images(data: Dataset, mode: str, translator) -> tuple[np.ndarray, list]:
    if mode not in TRAIN_MODES:
        raise ValueError(f"unknown training mode {mode!r}")
    if mode == "real_only":
        samples = list(data.real_samples())
        if not samples:
            raise ValueError("real_only training needs pseudo-real samples")
        imgs = np.stack([s.real_u8 for s in samples]).astype(np.float32) / 255.0
        return imgs, [s.params for s in samples]
    samples = list(data.sim_samples())
    if not samples:
        raise ValueError(f"{mode} training needs simulated samples")
    if mode == "virtual":
        imgs = np.stack([s.sim_u8 for s in samples]).astype(np.float32) / 255.0
        return imgs, [s.params for s in samples]
    if translator is None:
        raise ValueError("proposed training needs a trained translator")
    from .vae import translate_batch

    k = data.intrinsics
    imgs = np.empty((len(samples), k.height, k.width), dtype=np.float32)
    for start in range(0, len(samples), 64):
        chunk = samples[start : start + 64]
        flat = np.stack([s.sim_u8.reshape(-1) for s in chunk]).astype(np.float64) / 255.0
        imgs[start : start + len(chunk)] = translate_batch(translator, flat) \
            .reshape(len(chunk), k.height, k.width)
    return imgs, [s.params for s in samples]


def train_regressor(data: Dataset, model: ShapeModel, r: ParamRanges, mode: str,
                    translator=None, hyper: RegressorHyper = RegressorHyper()):
    """Minibatch Adam on the combined loss; returns (regressor, history).

    History rows are (epoch, align_mm, param_mse, total), averaged per epoch.
    """
    imgs, params = _training_images(data, mode, translator)
    k = data.intrinsics
    # float32 net for training throughput; checkpoints serialize as float64
    reg = build_regressor(k.width, k.height, hyper.dropout, seed=hyper.seed,
                          dtype=np.float32)
    targets_norm = np.stack([normalize_params(p, r) for p in params])
    true_cams = np.stack([camera_space_vertices(model, p) for p in params])
    hw = np.array(r.half_widths)
    center = r.center.as_array()

    opt = Adam(reg.net.params(), lr=hyper.lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((hyper.seed, 1))))
    drop_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((hyper.seed, 2))))
    n = len(params)
    history = []
    for epoch in range(1, hyper.epochs + 1):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(2)
        batches = 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            x = imgs[idx]
            opt.zero_grad()
            y = reg.net.forward(x, train=True, rng=drop_rng)
            y64 = y.astype(np.float64)
            pred_rows = center + y64 * hw
            if hyper.analytic_gradients:
                aligns, g_align = _loss_and_grad_batch(pred_rows, true_cams[idx], model)
            else:
                aligns = np.empty(len(idx))
                g_align = np.empty((len(idx), 6))
                for row, i in enumerate(idx):
                    pred = ParamVector.from_array(pred_rows[row])
                    aligns[row] = loss_reconstruction(pred, params[i], model)
                    g_align[row] = grad_reconstruction_fd(pred, params[i], model)
            d_norm = y64 - targets_norm[idx]
            dy = (g_align * hw + hyper.param_loss_weight * 2.0 * d_norm / 6.0) / len(idx)
            reg.net.backward(dy.astype(y.dtype), need_input_grad=False)
            opt.step()
            sums += (aligns.mean(), float(np.mean(d_norm * d_norm)))
            batches += 1
        align, pmse = sums / batches
        history.append((epoch, align, pmse, align + hyper.param_loss_weight * pmse))
    return reg, history


def history_csv(history) -> str:
    rows = ["epoch,align_mm,param_mse,total"]
    for epoch, align, pmse, total in history:
        rows.append(f"{epoch},{align!r},{pmse!r},{total!r}")
    return "\n".join(rows) + "\n"


def save_regressor(model: RegressorModel, path, extra_meta: dict | None = None) -> None:
    meta = {"width": str(model.width), "height": str(model.height),
            "model": "param-regressor"}
    meta.update(extra_meta or {})
    save_checkpoint(path, {"net": model.net}, meta)


def load_regressor(path) -> RegressorModel:
    nets, meta = load_checkpoint(path)
    if meta.get("model") != "param-regressor":
        raise ValueError(f"{path}: not a regressor checkpoint")
    return RegressorModel(nets["net"], int(meta["width"]), int(meta["height"]))
