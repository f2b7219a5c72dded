"""Gaussians on the cover and their pushforwards onto a quotient.

The pushforward ("wrapped") density of ``N(mu, L L^T)`` under a covering map
is the sum of the Gaussian density over all pre-images of a base point.  The
sum is truncated to a window of lattice cells; every density here is
evaluated in log space with a log-sum-exp over the pre-images so that very
narrow distributions do not underflow.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .covering import CoveringMap, DomainError

TAIL_TOL = 1e-8
# Gaussian mass beyond this many standard deviations is below TAIL_TOL
TAIL_SIGMAS = 6.0
# base points evaluated per block; bounds the (block, lifts) scratch arrays
_CHUNK = 4096


def _logsumexp_last(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=-1)
    safe = np.where(np.isfinite(m), m, 0.0)
    return safe + np.log(np.sum(np.exp(a - safe[..., None]), axis=-1))


class TailToleranceWarning(UserWarning):
    """A caller-chosen window is too small for the requested tail tolerance."""


@dataclass(frozen=True)
class GaussianParams:
    """Mean and lower-triangular scale factor, ``Sigma = L L^T``."""

    mu: np.ndarray
    scale_lower: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        L = np.atleast_2d(np.asarray(self.scale_lower, dtype=float))
        if L.shape != (mu.size, mu.size):
            raise DomainError(f"scale factor shape {L.shape} does not match mean of length {mu.size}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(L))):
            raise DomainError("non-finite Gaussian parameters")
        if np.any(np.triu(L, 1) != 0.0):
            raise DomainError("scale factor must be lower triangular")
        if np.any(np.diag(L) <= 0.0):
            raise DomainError("scale factor needs a strictly positive diagonal")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "scale_lower", L)

    @classmethod
    def from_cov(cls, mu, cov) -> "GaussianParams":
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance is not positive definite") from exc
        return cls(mu, L)

    @classmethod
    def isotropic(cls, mu, sigma: float) -> "GaussianParams":
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return cls(mu, sigma * np.eye(mu.size))

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def cov(self) -> np.ndarray:
        return self.scale_lower @ self.scale_lower.T

    @property
    def log_det_cov(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.scale_lower))))

    @property
    def sigma_max(self) -> float:
        """Largest singular value of the scale factor."""
        return float(np.linalg.norm(self.scale_lower, 2))


def gaussian_logpdf(params: GaussianParams, x) -> np.ndarray:
    """Log density of ``params`` at points ``x`` (last axis = coordinates)."""
    x = np.asarray(x, dtype=float)
    if params.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    diff = x - params.mu
    # whitened residual L^{-1} (x - mu) by forward substitution, one coordinate at a time
    L = params.scale_lower
    white = []
    maha = np.zeros(diff.shape[:-1])
    for i in range(params.dim):
        r = diff[..., i]
        for j in range(i):
            r = r - L[i, j] * white[j]
        w = r / L[i, i]
        white.append(w)
        maha += w * w
    return -0.5 * (maha + params.dim * math.log(2.0 * math.pi) + params.log_det_cov)


def gaussian_pdf(params: GaussianParams, x) -> np.ndarray:
    return np.exp(gaussian_logpdf(params, x))


def required_window(params: GaussianParams, cmap: CoveringMap) -> int:
    """Lattice window that keeps the truncated tail below ``TAIL_TOL``.

    ``ceil(6 sigma_max / period) + 1`` for means inside the fundamental
    domain.  Means further out need extra cells to reach them.
    """
    if cmap.kind == "identity":
        return 0
    lo, hi = cmap.fundamental_domain
    outside = np.maximum(np.maximum(lo - params.mu, params.mu - hi), 0.0)
    reach = TAIL_SIGMAS * params.sigma_max + float(np.max(outside, initial=0.0))
    return int(math.ceil(reach / cmap.min_period)) + 1


@dataclass(frozen=True)
class WrappedDensity:
    """Pushforward of a Gaussian through ``cmap``.

    ``window=None`` picks :func:`required_window`.  An explicit window that
    is too small is allowed but raises :class:`TailToleranceWarning`.
    """

    params: GaussianParams
    cmap: CoveringMap
    window: int | None = None
    tail_ok: bool = field(init=False, default=True)

    def __post_init__(self):
        if self.params.dim != self.cmap.dim:
            raise DomainError("Gaussian and covering map dimensions differ")
        need = required_window(self.params, self.cmap)
        if self.window is None:
            object.__setattr__(self, "window", need)
        elif self.window < need:
            object.__setattr__(self, "tail_ok", False)
            warnings.warn(
                f"window {self.window} < {need}: truncated tail may exceed {TAIL_TOL:g}",
                TailToleranceWarning,
                stacklevel=2,
            )

    def logpdf(self, base) -> np.ndarray:
        pts = self.cmap._as_points(base)
        flat = pts.reshape(-1, self.cmap.dim)
        out = np.empty(len(flat))
        for lo in range(0, len(flat), _CHUNK):
            lifts = self.cmap.preimage_array(flat[lo:lo + _CHUNK], self.window)
            out[lo:lo + _CHUNK] = _logsumexp_last(gaussian_logpdf(self.params, lifts))
        lead = pts.shape[:-1]
        return out.reshape(lead)

    def pdf(self, base) -> np.ndarray:
        return np.exp(self.logpdf(base))


def wrapped_pdf(w: WrappedDensity, base) -> np.ndarray:
    return w.pdf(base)


def kl_gaussian_analytic(q: GaussianParams, p: GaussianParams) -> float:
    """Closed-form ``KL(q || p)`` between two Gaussians on the cover."""
    if q.dim != p.dim:
        raise DomainError("dimension mismatch")
    Lp = p.scale_lower
    a = np.linalg.solve(Lp, q.scale_lower)
    delta = np.linalg.solve(Lp, p.mu - q.mu)
    kl = 0.5 * (np.sum(a * a) + delta @ delta - q.dim + p.log_det_cov - q.log_det_cov)
    return float(kl)


@dataclass(frozen=True)
class GridSpec:
    """Uniform midpoint grid over the fundamental domain of a compact quotient."""

    resolution: int
    cmap: CoveringMap

    def __post_init__(self):
        if self.resolution < 2:
            raise DomainError("grid resolution must be at least 2")
        if self.cmap.kind == "identity":
            raise DomainError("the identity map has no compact fundamental domain")

    @property
    def cell_area(self) -> float:
        lo, hi = self.cmap.fundamental_domain
        return float(np.prod((hi - lo) / self.resolution))

    def midpoints(self) -> np.ndarray:
        lo, hi = self.cmap.fundamental_domain
        axes = [lo[k] + (np.arange(self.resolution) + 0.5) * (hi[k] - lo[k]) / self.resolution
                for k in range(self.cmap.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def integrate(w: WrappedDensity, grid: GridSpec) -> float:
    """Midpoint-rule integral of the wrapped density over the base."""
    return float(np.sum(w.pdf(grid.midpoints())) * grid.cell_area)


def kl_numeric_base(q: WrappedDensity, p: WrappedDensity, grid: GridSpec) -> float:
    """Riemann-sum ``KL(q* || p*)`` on the quotient.

    Small negative results caused by quadrature error are returned as is so
    callers can see them.
    """
    if q.cmap != p.cmap or grid.cmap != q.cmap:
        raise DomainError("densities and grid must share one covering map")
    pts = grid.midpoints()
    log_q = q.logpdf(pts)
    log_p = p.logpdf(pts)
    if np.any(np.isneginf(log_p) & np.isfinite(log_q)):
        raise DomainError("reference density is exactly zero where q has mass")
    integrand = np.exp(log_q) * (log_q - log_p)
    return float(np.sum(integrand) * grid.cell_area)


def sample(w: WrappedDensity, rng_seed, size: int | None = None) -> np.ndarray:
    """Draw ``project(mu + L eps)`` with ``eps ~ N(0, I)``."""
    rng = np.random.default_rng(rng_seed)
    shape = (w.params.dim,) if size is None else (size, w.params.dim)
    eps = rng.standard_normal(shape)
    return w.cmap.project(w.params.mu + eps @ w.params.scale_lower.T)


def random_gaussian(rng: np.random.Generator, cmap: CoveringMap,
                    sigma_range: tuple[float, float] = (0.05, 0.5)) -> GaussianParams:
    """Random Gaussian for checks: mean uniform on the fundamental domain,
    principal standard deviations uniform in ``sigma_range``, random orientation."""
    d = cmap.dim
    lo, hi = cmap.fundamental_domain
    hi = np.where(np.isfinite(hi), hi, 1.0)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    mu = rng.uniform(lo, hi)
    sig = rng.uniform(*sigma_range, size=d)
    rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return GaussianParams.from_cov(mu, rot @ np.diag(sig ** 2) @ rot.T)
