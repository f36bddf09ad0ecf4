"""Image-to-image translator: a fully connected VAE trained so that both
pseudo-real and simulated inputs decode to the simulated-style image of
the same scene. The usual autoencoding mode (each domain reconstructs
itself) is available as a baseline flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .images import check_image
from .nn import Adam, Dense, Net, ReLU, Sigmoid, load_checkpoint, save_checkpoint

__all__ = [
    "VaeModel",
    "VaeHyper",
    "build_vae",
    "encode",
    "reparameterize",
    "kld",
    "vae_loss",
    "train_translator",
    "translate",
    "save_vae",
    "load_vae",
]


@dataclass
class VaeModel:
    encoder: Net
    mu_head: Net
    logvar_head: Net
    decoder: Net
    latent_dim: int
    width: int
    height: int

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def all_params(self):
        out = []
        for name, net in (("encoder", self.encoder), ("mu_head", self.mu_head),
                          ("logvar_head", self.logvar_head), ("decoder", self.decoder)):
            out += [(f"{name}.{k}", p) for k, p in net.params()]
        return out


@dataclass(frozen=True)
class VaeHyper:
    """Training hyperparameters.

    kl_weight follows the summed-loss convention; training rescales it by
    latent_dim / n_pixels to match the per-pixel-mean reconstruction term,
    so the stock value keeps the latent space informative instead of
    collapsing it.
    """

    batch_size: int = 60
    epochs: int = 500
    lr: float = 1e-3
    kl_weight: float = 5.0
    seed: int = 0
    autoencode_baseline: bool = False  # reconstruct each domain instead of translating


def build_vae(width: int = 180, height: int = 120, latent_dim: int = 64,
              hidden: tuple[int, int] = (96, 96), seed: int = 0,
              dtype=np.float64) -> VaeModel:
    """Three dense layers on each side, with mean / log-variance heads."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0))))
    pixels = width * height
    h1, h2 = hidden
    d = dtype
    enc = Net([Dense(pixels, h1, rng=rng, dtype=d), ReLU(),
               Dense(h1, h2, rng=rng, dtype=d), ReLU()])
    mu_head = Net([Dense(h2, latent_dim, rng=rng, dtype=d)])
    logvar_head = Net([Dense(h2, latent_dim, rng=rng, dtype=d)])
    dec = Net([Dense(latent_dim, h2, rng=rng, dtype=d), ReLU(),
               Dense(h2, h1, rng=rng, dtype=d), ReLU(),
               Dense(h1, pixels, rng=rng, dtype=d), Sigmoid()])
    return VaeModel(enc, mu_head, logvar_head, dec, latent_dim, width, height)


def _flatten(model: VaeModel, image: np.ndarray) -> np.ndarray:
    img = check_image(image)
    if img.shape != (model.height, model.width):
        raise ValueError(f"expected a {model.height}x{model.width} image, got {img.shape}")
    return img.reshape(1, -1)


def encode(model: VaeModel, image: np.ndarray):
    """Deterministic posterior parameters (mu, logvar) for one image."""
    h = model.encoder.forward(_flatten(model, image))
    mu = model.mu_head.forward(h)[0]
    logvar = model.logvar_head.forward(h)[0]
    return mu, logvar


def reparameterize(mu, logvar, rng) -> np.ndarray:
    """Sample z = mu + sigma * eps with eps standard normal."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have equal shapes")
    return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)


def kld(mu, logvar) -> float:
    """Closed-form KL divergence to the standard normal, per latent dimension."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have equal shapes")
    per_dim = mu * mu + np.exp(logvar) - logvar - 1.0
    return float(0.5 * per_dim.sum(axis=-1).mean() / mu.shape[-1])


def _forward_train(model: VaeModel, x: np.ndarray, rng):
    h = model.encoder.forward(x, train=True)
    mu = model.mu_head.forward(h, train=True)
    logvar = model.logvar_head.forward(h, train=True)
    eps = rng.standard_normal(mu.shape).astype(mu.dtype)
    z = mu + np.exp(0.5 * logvar) * eps
    xhat = model.decoder.forward(z, train=True)
    return mu, logvar, eps, xhat


def _loss_terms(xhat, target, mu, logvar):
    recon = float(np.mean((xhat - target) ** 2))
    k = kld(mu, logvar)
    return recon, k


def _backward_train(model: VaeModel, x, target, mu, logvar, eps, xhat, kl_weight):
    batch, pixels = xhat.shape
    latent = mu.shape[1]
    dxhat = 2.0 * (xhat - target) / (batch * pixels)
    dz = model.decoder.backward(dxhat)
    dmu = dz + kl_weight * mu / (latent * batch)
    dlogvar = dz * eps * 0.5 * np.exp(0.5 * logvar) \
        + kl_weight * (np.exp(logvar) - 1.0) / (2.0 * latent * batch)
    dh = model.mu_head.backward(dmu) + model.logvar_head.backward(dlogvar)
    model.encoder.backward(dh, need_input_grad=False)


def vae_loss(input_image, target_image, model: VaeModel, kl_weight: float, rng):
    """Training loss (reconstruction + weighted KL) with gradients.

    The target need not equal the input: pseudo-real inputs are paired
    with the simulated image of the same scene. Gradients accumulate
    into the model parameters; returns (total, recon, kld).
    """
    x = _flatten(model, input_image)
    t = _flatten(model, target_image)
    mu, logvar, eps, xhat = _forward_train(model, x, rng)
    recon, k = _loss_terms(xhat, t, mu, logvar)
    _backward_train(model, x, t, mu, logvar, eps, xhat, kl_weight)
    return recon + kl_weight * k, recon, k


def translate(model: VaeModel, image: np.ndarray) -> np.ndarray:
    """Decode the posterior mean; deterministic, no sampling."""
    mu, _ = encode(model, image)
    out = model.decoder.forward(mu[None, :])
    return out.reshape(model.height, model.width)


def translate_batch(model: VaeModel, flat: np.ndarray) -> np.ndarray:
    h = model.encoder.forward(flat)
    mu = model.mu_head.forward(h)
    return model.decoder.forward(mu)


def _training_pairs(data: Dataset, autoencode: bool):
    pairs = []  # (input_u8, target_u8)
    for s in data.samples:
        pairs.append((s.sim_u8.reshape(-1), s.sim_u8.reshape(-1)))
    for s in data.real_samples():
        target = s.real_u8 if autoencode else s.sim_u8
        pairs.append((s.real_u8.reshape(-1), target.reshape(-1)))
    return pairs


def train_translator(data: Dataset, hyper: VaeHyper = VaeHyper(),
                     latent_dim: int = 64, hidden: tuple[int, int] = (96, 96)):
    """Minibatch Adam training; returns (model, history).

    History rows are (epoch, recon, kld, total), averaged per epoch.
    """
    if len(data.samples) == 0:
        raise ValueError("dataset has no samples")
    k = data.intrinsics
    # float32 training keeps the desk-scale benchmark inside its CPU budget;
    # checkpoints are serialized as float64 either way
    model = build_vae(k.width, k.height, latent_dim, hidden, seed=hyper.seed,
                      dtype=np.float32)
    pairs = _training_pairs(data, hyper.autoencode_baseline)
    n = len(pairs)
    xs = (np.stack([p[0] for p in pairs]) / np.float32(255.0)).astype(np.float32)
    ts = (np.stack([p[1] for p in pairs]) / np.float32(255.0)).astype(np.float32)

    opt = Adam(model.all_params(), lr=hyper.lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((hyper.seed, 1))))
    eps_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((hyper.seed, 2))))
    kl_eff = hyper.kl_weight * model.latent_dim / model.n_pixels
    history = []
    for epoch in range(1, hyper.epochs + 1):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(2)
        batches = 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            x, t = xs[idx], ts[idx]
            opt.zero_grad()
            mu, logvar, eps, xhat = _forward_train(model, x, eps_rng)
            recon, kl = _loss_terms(xhat, t, mu, logvar)
            _backward_train(model, x, t, mu, logvar, eps, xhat, kl_eff)
            opt.step()
            sums += (recon, kl)
            batches += 1
        recon, kl = sums / batches
        history.append((epoch, recon, kl, recon + kl_eff * kl))
    return model, history


def history_csv(history) -> str:
    rows = ["epoch,recon,kld,total"]
    for epoch, recon, kl, total in history:
        rows.append(f"{epoch},{recon!r},{kl!r},{total!r}")
    return "\n".join(rows) + "\n"


def save_vae(model: VaeModel, path, extra_meta: dict | None = None) -> None:
    meta = {"latent_dim": str(model.latent_dim), "width": str(model.width),
            "height": str(model.height), "model": "translator-vae"}
    meta.update(extra_meta or {})
    save_checkpoint(path, {"encoder": model.encoder, "mu_head": model.mu_head,
                           "logvar_head": model.logvar_head, "decoder": model.decoder},
                    meta)


def load_vae(path) -> VaeModel:
    nets, meta = load_checkpoint(path)
    if meta.get("model") != "translator-vae":
        raise ValueError(f"{path}: not a translator checkpoint")
    return VaeModel(nets["encoder"], nets["mu_head"], nets["logvar_head"],
                    nets["decoder"], int(meta["latent_dim"]), int(meta["width"]),
                    int(meta["height"]))
