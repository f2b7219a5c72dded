"""Variational autoencoders with circle, torus and Klein-bottle latent spaces.

Subpackages and modules:

* :mod:`kleinvae.covering` - covering maps of the plane and their algebra
* :mod:`kleinvae.density` - wrapped Gaussians and KL on quotients
* :mod:`kleinvae.autodiff` - a small reverse-mode autodiff engine with Adam
* :mod:`kleinvae.vae` - encoders, decoders, ELBO, training, checkpoints
* :mod:`kleinvae.data` - Klein-circle images, Gabor-Klein filters, KIMG files
* :mod:`kleinvae.tda` - Rips persistence, bottleneck distance, Klein verdict
* :mod:`kleinvae.cli` - the ``kleinvae`` command
"""

__version__ = "0.1.0"

from .covering import CoveringMap, DomainError, SheetIndex, verify_covering
from .density import (GaussianParams, GridSpec, TailToleranceWarning, WrappedDensity, integrate,
                      kl_gaussian_analytic, kl_numeric_base, wrapped_pdf)
from .data import ImageSet, FilterCloud, FormatError, gen_klein_circles, gabor_klein, sample_filter_cloud
from .vae import LatentSpec, TrainConfig, VaeModel, build_model, reconstruct, train

__all__ = [
    "CoveringMap",
    "DomainError",
    "FilterCloud",
    "FormatError",
    "GaussianParams",
    "GridSpec",
    "ImageSet",
    "LatentSpec",
    "SheetIndex",
    "TailToleranceWarning",
    "TrainConfig",
    "VaeModel",
    "WrappedDensity",
    "build_model",
    "gabor_klein",
    "gen_klein_circles",
    "integrate",
    "kl_gaussian_analytic",
    "kl_numeric_base",
    "reconstruct",
    "sample_filter_cloud",
    "train",
    "verify_covering",
    "wrapped_pdf",
]
