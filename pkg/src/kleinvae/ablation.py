"""Train a family of VAEs under one config and compare their latent topology.

For each latent kind the harness records the training curve, the latent
variance, and the bottleneck distances (per homology dimension and their
l2 norm) between the persistence diagrams of held-out images and of their
reconstructions, over Z2 and Z3.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tda import bottleneck, klein_signature, rips_ph_points
from .vae import LatentSpec, TrainConfig, build_model, latent_variance, reconstruct, train

DEFAULT_LATENTS = ("euc2", "euc3", "euc4", "torus", "klein")
FIELDS = (2, 3)
DIMS = (0, 1, 2)


def cloud_diagrams(points, max_dim: int = 2, fields=FIELDS) -> dict:
    X = np.asarray(points, dtype=float).reshape(len(points), -1)
    return {p: rips_ph_points(X, max_dim=max_dim, field_char=p) for p in fields}


def compare_diagrams(reference: dict, other: dict, dims=DIMS) -> dict:
    """Per-dimension bottleneck distances and their l2 norm, for every field."""
    out = {}
    for p in reference:
        per_dim = {d: bottleneck(reference[p], other[p], d) for d in dims}
        out[p] = {"per_dim": per_dim, "l2": float(np.sqrt(sum(v * v for v in per_dim.values())))}
    return out


@dataclass
class AblationEntry:
    latent: str
    log: list[dict]
    latent_var: float
    bottleneck: dict
    verdict: str
    counts: dict
    lr_reductions: list[int]
    seconds: float

    def to_dict(self) -> dict:
        return {
            "latent": self.latent,
            "initial_elbo": self.log[0]["elbo"],
            "final_elbo": self.log[-1]["elbo"],
            "latent_var": self.latent_var,
            "bottleneck": {str(p): {"per_dim": {str(d): v for d, v in b["per_dim"].items()}, "l2": b["l2"]}
                           for p, b in self.bottleneck.items()},
            "verdict": self.verdict,
            "counts": {str(p): list(c) for p, c in self.counts.items()},
            "lr_reductions": self.lr_reductions,
            "seconds": self.seconds,
        }


@dataclass
class AblationReport:
    config: dict
    reference_counts: dict
    entries: list[AblationEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"config": self.config, "reference_counts": self.reference_counts,
                "models": [e.to_dict() for e in self.entries]}


def run_ablation(train_images, heldout_images, config: TrainConfig, latents=DEFAULT_LATENTS,
                 preset: str = "ablation", max_dim: int = 2,
                 progress: Callable[[str], None] | None = None) -> AblationReport:
    heldout = np.asarray(heldout_images, dtype=float)
    reference = cloud_diagrams(heldout, max_dim)
    ref_sig = klein_signature(reference[2], reference[3])
    report = AblationReport({**config.to_dict(), "latents": list(latents), "n_eval": len(heldout)},
                            {str(p): list(c) for p, c in ref_sig.counts.items()})
    for name in latents:
        t0 = time.perf_counter()
        model = build_model(LatentSpec.parse(name), n_pixels=heldout[0].size, preset=preset, seed=config.seed)
        result = train(model, train_images, config)
        recon = reconstruct(model, heldout)
        dgms = cloud_diagrams(recon, max_dim)
        sig = klein_signature(dgms[2], dgms[3])
        entry = AblationEntry(name, result.log, latent_variance(model, heldout),
                              compare_diagrams(reference, dgms, tuple(range(max_dim + 1))),
                              sig.verdict, sig.counts, result.lr_reductions, time.perf_counter() - t0)
        report.entries.append(entry)
        if progress:
            progress(f"{name}: elbo {entry.log[0]['elbo']:.1f} -> {entry.log[-1]['elbo']:.1f}, "
                     f"verdict {entry.verdict}, {entry.seconds:.0f}s")
    return report
