"""Variational autoencoders whose latent space is a quotient of R^d.

The encoder predicts a Gaussian on the cover ``R^d`` (mean plus the
row-major lower-triangular entries of its scale factor); a sample
``mu + L eps`` is pushed to the latent manifold by the covering map's
projection.  The KL term is the closed-form Gaussian KL on the cover, which
upper-bounds the KL of the pushforwards on the base because the covering is
sheet-wise measure preserving.

Presets:

* ``ablation``: one hidden layer of 64 units, batch 1024, lr 1e-2,
  200 epochs, KL weight 1e-3.
* ``demo``: encoder 900-1024-512-128-32-out (decoder mirrored), batch 1024,
  lr 1e-3, 50 epochs, KL weight 1e-2.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .covering import CoveringMap
from .density import GaussianParams, GridSpec, WrappedDensity, kl_gaussian_analytic, kl_numeric_base

LEAKY_SLOPE = 0.01
SCALE_FLOOR = 1e-4

CKPT_MAGIC = b"KVAE"
CKPT_VERSION = 1

PRESETS = {
    "ablation": dict(hidden=(64,), batch_size=1024, lr=1e-2, epochs=200, kl_weight=1e-3),
    "demo": dict(hidden=(1024, 512, 128, 32), batch_size=1024, lr=1e-3, epochs=50, kl_weight=1e-2),
}


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss; the model holds the last good weights."""


class CheckpointError(ValueError):
    pass


# ----------------------------------------------------------------- latents

@dataclass(frozen=True)
class LatentSpec:
    kind: str  # "euclidean" | "torus" | "klein"
    dim: int

    def __post_init__(self):
        if self.kind not in ("euclidean", "torus", "klein"):
            raise ValueError(f"unknown latent kind {self.kind!r}")
        if self.kind in ("torus", "klein") and self.dim != 2:
            raise ValueError(f"{self.kind} latents are 2-dimensional")
        if self.kind == "euclidean" and self.dim not in (2, 3, 4):
            raise ValueError("euclidean latents have dimension 2, 3 or 4")

    @classmethod
    def euclidean(cls, dim: int = 2) -> "LatentSpec":
        return cls("euclidean", dim)

    @classmethod
    def torus(cls) -> "LatentSpec":
        return cls("torus", 2)

    @classmethod
    def klein(cls) -> "LatentSpec":
        return cls("klein", 2)

    @classmethod
    def parse(cls, name: str) -> "LatentSpec":
        """``klein``, ``torus``, ``euc2``, ``euc3`` or ``euc4``."""
        if name == "klein":
            return cls.klein()
        if name == "torus":
            return cls.torus()
        if name.startswith("euc") and name[3:].isdigit():
            return cls.euclidean(int(name[3:]))
        raise ValueError(f"unknown latent {name!r}")

    @property
    def name(self) -> str:
        return f"euc{self.dim}" if self.kind == "euclidean" else self.kind

    @property
    def covering(self) -> CoveringMap:
        if self.kind == "torus":
            return CoveringMap.torus((1.0, 1.0))
        if self.kind == "klein":
            return CoveringMap.klein()
        return CoveringMap.identity(self.dim)

    @property
    def n_outputs(self) -> int:
        return self.dim + self.dim * (self.dim + 1) // 2

    def tril_index(self) -> list[tuple[int, int]]:
        """Row-major positions of the lower-triangular entries."""
        return [(i, j) for i in range(self.dim) for j in range(i + 1)]

    def project_graph(self, z: list[Tensor]) -> list[Tensor]:
        """Covering projection as autodiff ops on latent columns."""
        if self.kind == "euclidean":
            return z
        if self.kind == "torus":
            return [ad.mod_periodic(c, 1.0) for c in z]
        x = ad.mod_periodic(z[0], 2.0)
        y = ad.mod_periodic(z[1], 1.0)
        flip_x = ad.select_by_threshold(x, 1.0, ad.add_const(x, -1.0), x)
        flip_y = ad.select_by_threshold(x, 1.0, ad.mod_periodic(ad.neg(y), 1.0), y)
        return [flip_x, flip_y]


# -------------------------------------------------------------------- MLPs

class MLP:
    """Fully connected net, LeakyReLU between layers, linear output."""

    def __init__(self, widths, rng: np.random.Generator, name: str, slope: float = LEAKY_SLOPE):
        self.widths = tuple(int(w) for w in widths)
        self.slope = slope
        self.params: list[Parameter] = []
        for k, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            self.params.append(Parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), f"{name}.{k}.weight"))
            self.params.append(Parameter(rng.uniform(-bound, bound, fan_out), f"{name}.{k}.bias"))

    def __call__(self, x) -> Tensor:
        h = x
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = ad.add(ad.matmul(h, self.params[2 * k]), self.params[2 * k + 1])
            if k < n_layers - 1:
                h = ad.leaky_relu(h, self.slope)
        return h

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k].value + self.params[2 * k + 1].value
            if k < n_layers - 1:
                h = np.where(h > 0, h, self.slope * h)
        return h


@dataclass
class VaeModel:
    encoder: MLP
    decoder: MLP
    latent: LatentSpec
    prior: GaussianParams
    kl_weight: float
    preset: str = "custom"

    @property
    def params(self) -> list[Parameter]:
        return self.encoder.params + self.decoder.params

    @property
    def n_pixels(self) -> int:
        return self.encoder.widths[0]

    def descriptor(self) -> dict:
        return {
            "latent": self.latent.name,
            "encoder": list(self.encoder.widths),
            "decoder": list(self.decoder.widths),
            "prior_mu": self.prior.mu.tolist(),
            "prior_cov": self.prior.cov.tolist(),
            "kl_weight": self.kl_weight,
            "leaky_slope": self.encoder.slope,
            "scale_floor": SCALE_FLOOR,
            "preset": self.preset,
        }


def default_prior(latent: LatentSpec) -> GaussianParams:
    """Centre of the unit square, covariance 0.1 I; shared by every latent kind."""
    return GaussianParams.from_cov(np.full(latent.dim, 0.5), 0.1 * np.eye(latent.dim))


def build_model(latent: LatentSpec, n_pixels: int = 900, preset: str = "ablation", seed=0,
                hidden=None, kl_weight: float | None = None, prior: GaussianParams | None = None) -> VaeModel:
    cfg = PRESETS.get(preset, PRESETS["ablation"])
    hidden = tuple(cfg["hidden"] if hidden is None else hidden)
    rng = np.random.default_rng(seed)
    enc = MLP((n_pixels, *hidden, latent.n_outputs), rng, "encoder")
    dec = MLP((latent.dim, *hidden[::-1], n_pixels), rng, "decoder")
    return VaeModel(enc, dec, latent, prior or default_prior(latent),
                    cfg["kl_weight"] if kl_weight is None else kl_weight, preset)


# ------------------------------------------------------------ graph pieces

@dataclass
class EncodedGraph:
    mu: list[Tensor]  # d columns of shape (B,)
    L: dict[tuple[int, int], Tensor]  # lower-triangular entries, each (B,)


def _encode_graph(model: VaeModel, x) -> EncodedGraph:
    out = model.encoder(x)
    d = model.latent.dim
    mu = [ad.column(out, k) for k in range(d)]
    L = {}
    for k, (i, j) in enumerate(model.latent.tril_index()):
        raw = ad.column(out, d + k)
        L[(i, j)] = ad.add_const(ad.softplus(raw), SCALE_FLOOR) if i == j else raw
    return EncodedGraph(mu, L)


def _reparameterize_graph(model: VaeModel, enc: EncodedGraph, eps: np.ndarray) -> list[Tensor]:
    d = model.latent.dim
    z = []
    for i in range(d):
        acc = enc.mu[i]
        for j in range(i + 1):
            acc = ad.add(acc, ad.mul(enc.L[(i, j)], Tensor(eps[:, j])))
        z.append(acc)
    return model.latent.project_graph(z)


def _kl_graph(model: VaeModel, enc: EncodedGraph) -> Tensor:
    """Per-item closed-form KL(q || prior) on the cover, shape (B,)."""
    d = model.latent.dim
    Pinv = np.linalg.inv(model.prior.scale_lower)
    terms = []
    # trace term: || Lp^{-1} Lq ||_F^2
    for i in range(d):
        for k in range(d):
            acc = None
            for j in range(k, d):
                if Pinv[i, j] == 0.0:
                    continue
                t = ad.scale(enc.L[(j, k)], Pinv[i, j])
                acc = t if acc is None else ad.add(acc, t)
            if acc is not None:
                terms.append(ad.mul(acc, acc))
    # Mahalanobis term: || Lp^{-1} (mu_p - mu_q) ||^2
    for i in range(d):
        acc = None
        for j in range(d):
            if Pinv[i, j] == 0.0:
                continue
            t = ad.scale(ad.add_const(ad.neg(enc.mu[j]), model.prior.mu[j]), Pinv[i, j])
            acc = t if acc is None else ad.add(acc, t)
        if acc is not None:
            terms.append(ad.mul(acc, acc))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    for k in range(d):
        total = ad.add(total, ad.scale(ad.log(enc.L[(k, k)]), -2.0))
    total = ad.add_const(total, model.prior.log_det_cov - d)
    return ad.scale(total, 0.5)


def elbo(model: VaeModel, batch, eps: np.ndarray):
    """Negative weighted ELBO of a batch and its parts.

    Returns ``(loss, parts)`` where ``loss = -(recon - kl_weight * kl)``
    averaged over the batch; ``recon`` is the Bernoulli log-likelihood of the
    pixels and ``kl`` the cover KL to the prior.
    """
    x = np.asarray(batch, dtype=np.float64).reshape(len(batch), -1)
    if x.shape[1] != model.n_pixels:
        raise ValueError(f"expected {model.n_pixels} pixels per image, got {x.shape[1]}")
    eps = np.asarray(eps, dtype=np.float64).reshape(len(x), model.latent.dim)
    enc = _encode_graph(model, Tensor(x))
    z = ad.stack_columns(_reparameterize_graph(model, enc, eps))
    logits = model.decoder(z)
    nll = ad.sum(ad.bce_with_logits(logits, x), axis=1)  # (B,)
    kl = _kl_graph(model, enc)
    loss = ad.mean(ad.add(nll, ad.scale(kl, model.kl_weight)))
    recon = -float(np.mean(nll.value))
    kl_mean = float(np.mean(kl.value))
    for name, value in (("recon", recon), ("kl", kl_mean), ("loss", float(loss.value))):
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite {name} term")
    return loss, {"recon": recon, "kl": kl_mean, "elbo": -float(loss.value)}


# ------------------------------------------------------------ numpy helpers

def _encode_np(model: VaeModel, images) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    if x.shape[1] != model.n_pixels:
        raise ValueError(f"expected {model.n_pixels} pixels per image, got {x.shape[1]}")
    out = model.encoder.forward_np(x)
    d = model.latent.dim
    L = np.zeros((len(x), d, d))
    for k, (i, j) in enumerate(model.latent.tril_index()):
        raw = out[:, d + k]
        L[:, i, j] = np.logaddexp(0.0, raw) + SCALE_FLOOR if i == j else raw
    return out[:, :d], L


def encode(model: VaeModel, images) -> list[GaussianParams]:
    mu, L = _encode_np(model, images)
    return [GaussianParams(m, l) for m, l in zip(mu, L)]


def reparameterize(params: GaussianParams, latent: LatentSpec, eps) -> np.ndarray:
    """``project(mu + L eps)`` under the latent's covering map."""
    eps = np.asarray(eps, dtype=float).reshape(latent.dim)
    return latent.covering.project(params.mu + params.scale_lower @ eps)


def latent_means(model: VaeModel, images) -> np.ndarray:
    return _encode_np(model, images)[0]


def latent_variance(model: VaeModel, images) -> float:
    """Mean over coordinates of the population variance of the encoded means (on the cover)."""
    if len(images) < 2:
        raise ValueError("need at least two items")
    return float(np.mean(np.var(latent_means(model, images), axis=0)))


def decode(model: VaeModel, z) -> np.ndarray:
    logits = model.decoder.forward_np(np.asarray(z, dtype=np.float64).reshape(-1, model.latent.dim))
    return ad._sigmoid(logits)


def reconstruct(model: VaeModel, images) -> np.ndarray:
    """Decoder mean at ``project(mu)``; same shape as ``images``."""
    images = np.asarray(images)
    mu = latent_means(model, images)
    z = model.latent.covering.project(mu)
    return decode(model, z).reshape(images.shape)


# ------------------------------------------------------------------ training

@dataclass
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 200
    lr: float = 1e-2
    kl_weight: float = 1e-3
    seed: int = 0
    scheduler_factor: float = 0.99
    scheduler_patience: int = 10
    preset: str = "ablation"
    surrogate_check_rate: float = 0.01
    init: str = "uniform_fan_in"

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr", "scheduler_factor", "scheduler_patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be non-negative")

    @classmethod
    def from_preset(cls, preset: str, seed: int = 0, **overrides) -> "TrainConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        p = PRESETS[preset]
        base = dict(batch_size=p["batch_size"], epochs=p["epochs"], lr=p["lr"], kl_weight=p["kl_weight"],
                    seed=seed, preset=preset)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    log: list[dict]
    lr_reductions: list[int] = field(default_factory=list)
    surrogate_checks: int = 0
    surrogate_violations: int = 0


def _snapshot(model: VaeModel) -> list[np.ndarray]:
    return [p.value.copy() for p in model.params]


def _restore(model: VaeModel, snap: list[np.ndarray]) -> None:
    for p, v in zip(model.params, snap):
        p.value = v.copy()
        p.zero_grad()


def _surrogate_check(model: VaeModel, x_item: np.ndarray, grid_cache: dict) -> bool | None:
    """Numerical base KL <= cover KL for one item; None when the grid cannot resolve q."""
    cmap = model.latent.covering
    if cmap.kind == "identity":
        return None
    q = encode(model, x_item[None])[0]
    if np.min(np.linalg.svd(q.scale_lower, compute_uv=False)) < 0.05:
        return None
    wq = WrappedDensity(q, cmap)
    if wq.window > 8:  # mean far out on the cover: costly and the bound is loose anyway
        return None
    grid = grid_cache.setdefault("grid", GridSpec(200, cmap))
    numeric = kl_numeric_base(wq, WrappedDensity(model.prior, cmap), grid)
    return numeric <= kl_gaussian_analytic(q, model.prior) + 1e-3


def train(model: VaeModel, images, config: TrainConfig, log_path=None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam + plateau scheduler over shuffled mini-batches.

    One log record per epoch: ``{epoch, elbo, recon, kl, lr, latent_var}``
    with batch-size-weighted means, ``lr`` being the rate used in that
    epoch.  On a non-finite loss the model is rolled back to the weights at
    the end of the last finished epoch and :class:`DivergenceError` is raised.
    """
    x_all = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    if len(x_all) == 0:
        raise ValueError("empty dataset")
    model.kl_weight = config.kl_weight
    rng = np.random.default_rng((config.seed, 1))
    sched = ad.PlateauState(config.lr, config.scheduler_factor, config.scheduler_patience)
    result = TrainResult([])
    grid_cache: dict = {}
    params = model.params
    ad.zero_grad(params)
    good = _snapshot(model)
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            lr = sched.lr
            order = rng.permutation(len(x_all))
            sums = {"elbo": 0.0, "recon": 0.0, "kl": 0.0}
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                eps = rng.standard_normal((len(idx), model.latent.dim))
                try:
                    loss, parts = elbo(model, x_all[idx], eps)
                    ad.backward(loss)
                    ad.adam_step(params, lr)
                except (DivergenceError, ad.NonFiniteGradient) as exc:
                    _restore(model, good)
                    raise DivergenceError(f"epoch {epoch}: {exc}") from exc
                for k in sums:
                    sums[k] += parts[k] * len(idx)
                if config.surrogate_check_rate > 0 and rng.random() < config.surrogate_check_rate:
                    ok = _surrogate_check(model, x_all[idx[0]], grid_cache)
                    if ok is not None:
                        result.surrogate_checks += 1
                        if not ok:
                            result.surrogate_violations += 1
                            warnings.warn("numerical base KL exceeded the cover KL on a spot check")
            record = {"epoch": epoch, **{k: v / len(x_all) for k, v in sums.items()}, "lr": lr,
                      "latent_var": latent_variance(model, x_all) if len(x_all) > 1 else 0.0}
            ad.reduce_lr_on_plateau(sched, -record["elbo"])
            result.log.append(record)
            good = _snapshot(model)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if on_epoch:
                on_epoch(record)
    finally:
        if log_fh:
            log_fh.close()
    result.lr_reductions = list(sched.reductions)
    return result


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: VaeModel, path) -> None:
    desc = json.dumps(model.descriptor()).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(desc)) + desc)
        for p in model.params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())


def load_checkpoint(path) -> VaeModel:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    if len(blob) < 12:
        raise CheckpointError("truncated header")
    version, n = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        desc = json.loads(blob[12:12 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad architecture descriptor: {exc}") from exc
    latent = LatentSpec.parse(desc["latent"])
    rng = np.random.default_rng(0)
    enc = MLP(desc["encoder"], rng, "encoder", desc.get("leaky_slope", LEAKY_SLOPE))
    dec = MLP(desc["decoder"], rng, "decoder", desc.get("leaky_slope", LEAKY_SLOPE))
    prior = GaussianParams.from_cov(desc["prior_mu"], desc["prior_cov"])
    model = VaeModel(enc, dec, latent, prior, float(desc["kl_weight"]), desc.get("preset", "custom"))
    offset = 12 + n
    for p in model.params:
        size = p.value.size * 4
        if offset + size > len(blob):
            raise CheckpointError(f"truncated weights for {p.name}")
        p.value = np.frombuffer(blob, dtype="<f4", count=p.value.size, offset=offset).astype(np.float64).reshape(p.shape)
        p.adam_m = np.zeros_like(p.value)
        p.adam_v = np.zeros_like(p.value)
        p.zero_grad()
        offset += size
    if offset != len(blob):
        raise CheckpointError("trailing bytes after weights")
    return model
