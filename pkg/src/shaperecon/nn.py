"""Minimal trainable network core on float64 numpy arrays.

Sequential nets of dense / conv / relu / sigmoid / dropout / avgpool
layers, exact reverse-mode gradients, Adam, finite-difference gradient
checking, and a binary checkpoint format. Batches are leading-axis:
dense inputs are (batch, features), conv inputs (batch, height, width)
or (batch, height, width, channels).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Param",
    "Layer",
    "Dense",
    "Conv2d",
    "ReLU",
    "Sigmoid",
    "Dropout",
    "AvgPool2",
    "Net",
    "glorot_uniform",
    "adam_step",
    "Adam",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class Param:
    """Trainable tensor with its gradient and Adam moment buffers."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value)
        if self.value.dtype not in (np.float32, np.float64):
            self.value = self.value.astype(np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)


def glorot_uniform(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy, need_dx=True):
        raise NotImplementedError

    def params(self) -> list[tuple[str, Param]]:
        return []

    def spec(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=np.float64):
        self.n_in, self.n_out = n_in, n_out
        w = (glorot_uniform(rng, n_in, n_out, (n_in, n_out)) if rng is not None
             else np.zeros((n_in, n_out)))
        self.w = Param(w.astype(dtype))
        self.b = Param(np.zeros(n_out, dtype=dtype))
        self._x = None
        self._shape = None

    def forward(self, x, train=False, rng=None):
        if x.ndim > 2:
            self._shape = x.shape
            x = x.reshape(x.shape[0], -1)
        else:
            self._shape = None
        if x.shape[1] != self.n_in:
            raise ValueError(f"dense layer expects {self.n_in} features, got {x.shape[1]}")
        self._x = x if train else None
        return x @ self.w.value + self.b.value

    def backward(self, dy, need_dx=True):
        if self._x is None:
            raise RuntimeError("backward without a cached training forward")
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        if not need_dx:
            return None
        dx = dy @ self.w.value.T
        if self._shape is not None:
            dx = dx.reshape(self._shape)
        return dx

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def spec(self):
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out}


class Conv2d(Layer):
    """3x3-style convolution, channels-last, zero padding."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 2,
                 pad: int = 1, rng=None, dtype=np.float64):
        if kernel <= 0 or stride <= 0 or pad < 0:
            raise ValueError("kernel and stride must be positive, pad non-negative")
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        kk = kernel * kernel
        fan_in, fan_out = kk * c_in, kk * c_out
        w = (glorot_uniform(rng, fan_in, fan_out, (kk * c_in, c_out)) if rng is not None
             else np.zeros((kk * c_in, c_out)))
        self.w = Param(w.astype(dtype))  # rows ordered (ky, kx, c_in)
        self.b = Param(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def _out_hw(self, h, w):
        ho = (h + 2 * self.pad - self.kernel) // self.stride + 1
        wo = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ValueError("conv output would be empty")
        return ho, wo

    def forward(self, x, train=False, rng=None):
        squeezed = x.ndim == 3
        if squeezed:
            x = x[..., None]
        b, h, w, c = x.shape
        if c != self.c_in:
            raise ValueError(f"conv layer expects {self.c_in} channels, got {c}")
        ho, wo = self._out_hw(h, w)
        ks, st, p = self.kernel, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        cols = np.empty((b, ho, wo, ks * ks * c), dtype=self.w.value.dtype)
        for ky in range(ks):
            for kx in range(ks):
                patch = xp[:, ky : ky + st * ho : st, kx : kx + st * wo : st, :]
                cols[:, :, :, (ky * ks + kx) * c : (ky * ks + kx + 1) * c] = patch
        flat = cols.reshape(b * ho * wo, ks * ks * c)
        y = flat @ self.w.value + self.b.value
        if train:
            self._cache = (flat, (b, h, w, c), squeezed)
        else:
            self._cache = None
        return y.reshape(b, ho, wo, self.c_out)

    def backward(self, dy, need_dx=True):
        if self._cache is None:
            raise RuntimeError("backward without a cached training forward")
        flat, (b, h, w, c), squeezed = self._cache
        ho, wo = self._out_hw(h, w)
        ks, st, p = self.kernel, self.stride, self.pad
        dy_flat = dy.reshape(b * ho * wo, self.c_out)
        self.w.grad += flat.T @ dy_flat
        self.b.grad += dy_flat.sum(axis=0)
        if not need_dx:
            return None
        dcols = (dy_flat @ self.w.value.T).reshape(b, ho, wo, ks * ks * c)
        dxp = np.zeros((b, h + 2 * p, w + 2 * p, c), dtype=self.w.value.dtype)
        for ky in range(ks):
            for kx in range(ks):
                view = dxp[:, ky : ky + st * ho : st, kx : kx + st * wo : st, :]
                view += dcols[:, :, :, (ky * ks + kx) * c : (ky * ks + kx + 1) * c]
        dx = dxp[:, p : p + h, p : p + w, :] if p else dxp
        return dx[..., 0] if squeezed else dx

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def spec(self):
        return {"kind": "conv2d", "c_in": self.c_in, "c_out": self.c_out,
                "kernel": self.kernel, "stride": self.stride, "pad": self.pad}


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0.0 if train else None
        return np.maximum(x, 0.0)

    def backward(self, dy, need_dx=True):
        if self._mask is None:
            raise RuntimeError("backward without a cached training forward")
        return dy * self._mask

    def spec(self):
        return {"kind": "relu"}


class Sigmoid(Layer):
    def __init__(self):
        self._y = None

    def forward(self, x, train=False, rng=None):
        y = 1.0 / (1.0 + np.exp(-x))
        self._y = y if train else None
        return y

    def backward(self, dy, need_dx=True):
        if self._y is None:
            raise RuntimeError("backward without a cached training forward")
        return dy * self._y * (1.0 - self._y)

    def spec(self):
        return {"kind": "sigmoid"}


class Dropout(Layer):
    """Inverted dropout: scales kept activations at train time."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = np.array(1.0) if train else None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * self._mask

    def backward(self, dy, need_dx=True):
        if self._mask is None:
            raise RuntimeError("backward without a cached training forward")
        return dy * self._mask

    def spec(self):
        return {"kind": "dropout", "rate": self.rate}


class AvgPool2(Layer):
    """2x2 mean pooling with stride 2 (parameter-free downsampling)."""

    def __init__(self):
        self._shape = None

    def forward(self, x, train=False, rng=None):
        squeezed = x.ndim == 3
        if squeezed:
            x = x[..., None]
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError("avgpool2 needs even spatial dimensions")
        y = x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
        self._shape = (x.shape, squeezed) if train else None
        return y[..., 0] if squeezed else y

    def backward(self, dy, need_dx=True):
        if self._shape is None:
            raise RuntimeError("backward without a cached training forward")
        (b, h, w, c), squeezed = self._shape
        if dy.ndim == 3:
            dy = dy[..., None]
        up = np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) / 4.0
        return up[..., 0] if squeezed else up

    def spec(self):
        return {"kind": "avgpool2"}


class Net:
    """Plain sequential network."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, train=False, rng=None):
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train, rng=rng)
            except ValueError as e:
                raise ValueError(f"layer {i} ({layer.spec()['kind']}): {e}") from e
        return x

    def backward(self, dy, need_input_grad=True):
        # A layer's input gradient is needed only when something earlier
        # holds parameters (or the caller wants the net's input gradient).
        need = []
        seen = need_input_grad
        for layer in self.layers:
            need.append(seen)
            seen = seen or bool(layer.params())
        for layer, need_dx in zip(reversed(self.layers), reversed(need)):
            dy = layer.backward(dy, need_dx=need_dx)
            if not need_dx:
                break
        return dy

    def params(self) -> list[tuple[str, Param]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                out.append((f"{i}.{layer.spec()['kind']}.{name}", p))
        return out

    def zero_grad(self):
        for _, p in self.params():
            p.grad[...] = 0.0


def adam_step(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One bias-corrected Adam update; t is the 1-based step index.

    Equivalent to the textbook form
        m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
        w <- w - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    but written in place; the gradient buffer doubles as scratch, so
    gradients are consumed by the step.
    """
    if t < 1:
        raise ValueError("step index t starts at 1")
    c1 = 1.0 - beta1**t
    root_c2 = np.sqrt(1.0 - beta2**t)
    chunk = 1 << 18  # sweep large tensors in cache-sized chunks
    for _, p in params:
        gf = p.grad.reshape(-1)
        mf = p.m.reshape(-1)
        vf = p.v.reshape(-1)
        wf = p.value.reshape(-1)
        for lo in range(0, gf.size, chunk):
            g = gf[lo : lo + chunk]
            m = mf[lo : lo + chunk]
            v = vf[lo : lo + chunk]
            w = wf[lo : lo + chunk]
            m *= beta1
            g *= 1.0 - beta1
            m += g
            g *= g  # now (1-beta1)^2 g^2; rescale to (1-beta2) g^2
            g *= (1.0 - beta2) / (1.0 - beta1) ** 2
            v *= beta2
            v += g
            # denominator and update, computed in the dead gradient buffer:
            # lr/c1 * m / (sqrt(v)/root_c2 + eps) == s*m / (sqrt(v) + eps*root_c2)
            np.sqrt(v, out=g)
            g += eps * root_c2
            np.divide(m, g, out=g)
            g *= lr * root_c2 / c1
            w -= g


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0

    def step(self):
        self.t += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.t)

    def zero_grad(self):
        for _, p in self.params:
            p.grad[...] = 0.0


def grad_check(params, loss_fn, h=1e-4, limit=10_000) -> float:
    """Max relative error of analytic gradients vs central differences.

    ``loss_fn(want_grads)`` must run a deterministic forward pass (reseed
    any rng it uses), return the scalar loss, and populate ``p.grad`` for
    every parameter when ``want_grads`` is true.
    """
    params = list(params)
    total = sum(p.value.size for _, p in params)
    if total > limit:
        raise ValueError(f"{total} parameters exceed the grad_check limit {limit}")
    for _, p in params:
        p.grad[...] = 0.0
    loss_fn(True)
    analytic_grads = [p.grad.copy() for _, p in params]
    worst = 0.0
    for (_, p), saved in zip(params, analytic_grads):
        flat = p.value.reshape(-1)
        grad = saved.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn(False)
            flat[i] = keep - h
            down = loss_fn(False)
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            analytic = grad[i]
            denom = max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# --- checkpoints -------------------------------------------------------------

MAGIC = b"SRCK"
CKPT_VERSION = 1

_KIND_IDS = {"dense": 1, "conv2d": 2, "relu": 3, "sigmoid": 4, "dropout": 5,
             "avgpool2": 6}
_ID_KINDS = {v: k for k, v in _KIND_IDS.items()}


def _build_layer(spec: dict) -> Layer:
    kind = spec["kind"]
    if kind == "dense":
        return Dense(spec["n_in"], spec["n_out"])
    if kind == "conv2d":
        return Conv2d(spec["c_in"], spec["c_out"], spec["kernel"], spec["stride"],
                      spec["pad"])
    if kind == "relu":
        return ReLU()
    if kind == "sigmoid":
        return Sigmoid()
    if kind == "dropout":
        return Dropout(spec["rate"])
    if kind == "avgpool2":
        return AvgPool2()
    raise ValueError(f"unknown layer kind {kind!r}")


def _write_str(fh, s: str):
    raw = s.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", fh.read(4))
    return fh.read(n).decode("utf-8")


def save_checkpoint(path, nets: dict[str, Net], meta: dict[str, str] | None = None):
    """Binary format: magic, version, metadata, layer specs, f64 LE tensors."""
    meta = meta or {}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(meta)))
        for key in meta:
            _write_str(fh, key)
            _write_str(fh, str(meta[key]))
        fh.write(struct.pack("<I", len(nets)))
        for name, net in nets.items():
            _write_str(fh, name)
            fh.write(struct.pack("<I", len(net.layers)))
            for layer in net.layers:
                spec = layer.spec()
                fh.write(struct.pack("<I", _KIND_IDS[spec["kind"]]))
                if spec["kind"] == "dense":
                    fh.write(struct.pack("<II", spec["n_in"], spec["n_out"]))
                elif spec["kind"] == "conv2d":
                    fh.write(struct.pack("<IIIII", spec["c_in"], spec["c_out"],
                                         spec["kernel"], spec["stride"], spec["pad"]))
                elif spec["kind"] == "dropout":
                    fh.write(struct.pack("<d", spec["rate"]))
            for pname, p in net.params():
                _write_str(fh, pname)
                fh.write(struct.pack("<I", p.value.ndim))
                fh.write(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
                fh.write(np.ascontiguousarray(p.value.astype(np.float64), dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, Net], dict[str, str]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (n_meta,) = struct.unpack("<I", fh.read(4))
        meta = {}
        for _ in range(n_meta):
            key = _read_str(fh)
            meta[key] = _read_str(fh)
        (n_nets,) = struct.unpack("<I", fh.read(4))
        nets = {}
        for _ in range(n_nets):
            name = _read_str(fh)
            (n_layers,) = struct.unpack("<I", fh.read(4))
            layers = []
            for _ in range(n_layers):
                (kind_id,) = struct.unpack("<I", fh.read(4))
                kind = _ID_KINDS[kind_id]
                spec = {"kind": kind}
                if kind == "dense":
                    spec["n_in"], spec["n_out"] = struct.unpack("<II", fh.read(8))
                elif kind == "conv2d":
                    (spec["c_in"], spec["c_out"], spec["kernel"], spec["stride"],
                     spec["pad"]) = struct.unpack("<IIIII", fh.read(20))
                elif kind == "dropout":
                    (spec["rate"],) = struct.unpack("<d", fh.read(8))
                layers.append(_build_layer(spec))
            net = Net(layers)
            for pname, p in net.params():
                got = _read_str(fh)
                if got != pname:
                    raise ValueError(f"{path}: expected tensor {pname}, found {got}")
                (ndim,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                count = int(np.prod(shape)) if ndim else 1
                raw = fh.read(8 * count)
                p.value[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
            nets[name] = net
        return nets, meta
