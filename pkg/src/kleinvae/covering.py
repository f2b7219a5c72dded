"""Quotient maps of the plane onto the circle, torus and Klein bottle.

Every map here is a covering ``R^d -> B`` whose base ``B`` is represented by a
half-open fundamental box.  Points are numpy arrays whose last axis holds the
coordinates, so single points and batches go through the same code.

The Klein bottle map is the composition ``R^2 -> T^2 -> K`` where the torus is
``[0, 2) x [0, 1)`` and the second stage folds ``x >= 1`` back onto the unit
square with a flip of the ``y`` coordinate::

    (x, y) -> (x mod 2, y mod 1) -> (x - 1, -y mod 1)   if x mod 2 >= 1

With that convention the unit square is glued by ``(x, 0) ~ (x, 1)`` and
``(0, y) ~ (1, 1 - y)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal

import numpy as np

Kind = Literal["identity", "circle", "torus", "klein"]

DIRECT = "direct"
FLIPPED = "flipped"


class DomainError(ValueError):
    """Input lies outside the set an operation is defined on."""


@dataclass(frozen=True)
class SheetIndex:
    """Which copy of the fundamental domain a pre-image lives on."""

    translate: tuple[int, ...]
    branch: str = DIRECT


def wrap(values, period: float) -> np.ndarray:
    """``values mod period`` guaranteed to land in ``[0, period)``.

    ``np.mod`` returns ``period`` itself for tiny negative inputs, which
    would break the half-open convention.
    """
    r = np.mod(values, period)
    return np.where(r >= period, 0.0, r)


@dataclass(frozen=True)
class CoveringMap:
    kind: Kind
    periods: tuple[float, ...]

    @classmethod
    def identity(cls, dim: int = 2) -> "CoveringMap":
        return cls("identity", (np.inf,) * dim)

    @classmethod
    def circle(cls, period: float = 1.0) -> "CoveringMap":
        return cls("circle", (float(period),))

    @classmethod
    def torus(cls, periods=(1.0, 1.0)) -> "CoveringMap":
        return cls("torus", tuple(float(p) for p in periods))

    @classmethod
    def klein(cls) -> "CoveringMap":
        # lattice cell of the intermediate torus is [0, 2) x [0, 1)
        return cls("klein", (2.0, 1.0))

    @property
    def dim(self) -> int:
        return len(self.periods)

    @property
    def sheets_per_cell(self) -> int:
        return 2 if self.kind == "klein" else 1

    @property
    def fundamental_domain(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the half-open box ``[lo, hi)``."""
        lo = np.zeros(self.dim)
        if self.kind == "identity":
            return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        if self.kind == "klein":
            return lo, np.ones(2)
        return lo, np.asarray(self.periods, dtype=float)

    @property
    def min_period(self) -> float:
        """Shortest distance between two lifts of the same base point."""
        if self.kind == "klein":
            return 1.0
        return float(min(self.periods))

    def _as_points(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.kind == "circle" and (p.ndim == 0 or p.shape[-1] != 1):
            p = p[..., None]
        if p.shape[-1] != self.dim:
            raise DomainError(f"expected {self.dim} coordinates, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DomainError("non-finite coordinate")
        return p

    def _unwrap_scalar(self, original, result):
        # circle maps accept bare scalars / 1-D arrays of scalars
        if self.kind == "circle" and (np.ndim(original) == 0 or np.shape(original)[-1] != 1):
            return result[..., 0]
        return result

    def in_domain(self, p) -> np.ndarray:
        p = self._as_points(p)
        lo, hi = self.fundamental_domain
        return np.all((p >= lo) & (p < hi), axis=-1)

    def project(self, p) -> np.ndarray:
        """Canonical representative of ``p`` in the fundamental domain."""
        q = self._as_points(p)
        if self.kind == "identity":
            out = q.copy()
        elif self.kind in ("circle", "torus"):
            out = wrap(q, np.asarray(self.periods))
        else:
            x = wrap(q[..., 0], 2.0)
            y = wrap(q[..., 1], 1.0)
            flipped = x >= 1.0
            out = np.stack([np.where(flipped, x - 1.0, x), np.where(flipped, wrap(-y, 1.0), y)], axis=-1)
        return self._unwrap_scalar(p, out)

    def sheet_of(self, p) -> SheetIndex:
        """Sheet that ``project`` uses for a single point."""
        q = self._as_points(p)
        if q.ndim != 1:
            raise DomainError("sheet_of takes a single point")
        if self.kind == "identity":
            return SheetIndex((0,) * self.dim)
        cell = np.floor(q / np.asarray(self.periods)).astype(int)
        branch = DIRECT
        if self.kind == "klein" and wrap(q[0], 2.0) >= 1.0:
            branch = FLIPPED
        return SheetIndex(tuple(int(c) for c in cell), branch)

    def _offsets(self, window: int):
        return list(itertools.product(range(-window, window + 1), repeat=self.dim))

    def preimage_array(self, base, window: int) -> np.ndarray:
        """All lifts of ``base`` within ``window`` lattice cells, batched.

        Returns an array of shape ``base.shape[:-1] + (M, dim)`` with
        ``M = sheets_per_cell * (2 * window + 1) ** dim`` (``M = 1`` for the
        identity map).
        """
        if window < 0:
            raise DomainError("window must be non-negative")
        b = self._as_points(base)
        if not np.all(self.in_domain(b)):
            raise DomainError("base point outside the fundamental domain")
        if self.kind == "identity":
            return b[..., None, :].copy()
        shifts = np.asarray(self._offsets(window), dtype=float) * np.asarray(self.periods)
        direct = b[..., None, :] + shifts
        if self.kind != "klein":
            return direct
        flip = np.stack([b[..., 0] + 1.0, wrap(1.0 - b[..., 1], 1.0)], axis=-1)
        flipped = flip[..., None, :] + shifts
        return np.concatenate([direct, flipped], axis=-2)

    def preimages(self, base, window: int) -> list[tuple[np.ndarray, SheetIndex]]:
        """Lifts of a single base point, each tagged with its sheet."""
        b = self._as_points(base)
        if b.ndim != 1:
            raise DomainError("preimages takes a single base point; use preimage_array for batches")
        pts = self.preimage_array(b, window)
        if self.kind == "identity":
            return [(pts[0], SheetIndex((0,) * self.dim))]
        offsets = self._offsets(window)
        branches = [DIRECT] * len(offsets)
        if self.kind == "klein":
            offsets = offsets + offsets
            branches = branches + [FLIPPED] * (len(pts) // 2)
        return [(pt, SheetIndex(tuple(off), br)) for pt, off, br in zip(pts, offsets, branches)]

    def quotient_distance(self, a, b) -> np.ndarray:
        """Geodesic distance on the flat quotient between base points.

        Broadcasts over leading axes of ``a`` and ``b``.
        """
        a = self._as_points(a)
        if not np.all(self.in_domain(a)):
            raise DomainError("point outside the fundamental domain")
        lifts = self.preimage_array(b, window=1)
        diff = a[..., None, :] - lifts
        return np.sqrt(np.min(np.sum(diff * diff, axis=-1), axis=-1))

    def derivative_ae(self, p) -> np.ndarray:
        """Jacobian of ``project`` at ``p``.

        On a sheet boundary this is the Jacobian of the branch ``project``
        evaluates there; the boundary set has measure zero.
        """
        q = self._as_points(p)
        jac = np.broadcast_to(np.eye(self.dim), q.shape[:-1] + (self.dim, self.dim)).copy()
        if self.kind == "klein":
            flipped = wrap(q[..., 0], 2.0) >= 1.0
            jac[..., 1, 1] = np.where(flipped, -1.0, 1.0)
        return jac


def verify_covering(cmap: CoveringMap, n: int = 10_000, seed=0, extent: float = 5.0) -> dict:
    """Randomised algebraic checks of a covering map.

    Reports the worst deviation seen for: idempotence of ``project``, exact
    recovery of a lifted point among the pre-images of its projection,
    number of pre-images per lattice cell, ``|det J|`` and the area of
    projected boxes that stay inside one sheet.
    """
    rng = np.random.default_rng(seed)
    d = cmap.dim
    p = rng.uniform(-extent, extent, size=(n, d))
    b = cmap.project(p)
    b = b.reshape(n, d)
    idem = float(np.max(np.abs(cmap.project(b).reshape(n, d) - b)))
    out = {"kind": cmap.kind, "n": n, "idempotence_error": idem}
    if cmap.kind == "identity":
        out.update(roundtrip_error=float(np.max(np.abs(b - p))), preimages_per_cell=[1, 1],
                   det_error=0.0, box_area_error=0.0)
        return out
    # translations by whole periods are deck transformations, so the lifts near the origin,
    # shifted into the lattice cell of p, must contain p
    cell = np.asarray(cmap.periods)
    lifts = cmap.preimage_array(b, 1)
    shifted = lifts + (np.floor(p / cell) * cell)[:, None, :]
    worst = float(np.max(np.min(np.max(np.abs(shifted - p[:, None, :]), -1), -1)))
    back = float(np.max(np.abs(cmap.project(shifted).reshape(shifted.shape) - b[:, None, :])))
    out["roundtrip_error"] = max(worst, back)
    inside = np.all((lifts >= 0.0) & (lifts < cell), axis=-1).sum(axis=-1)
    out["preimages_per_cell"] = [int(inside.min()), int(inside.max())]
    det = np.abs(np.linalg.det(cmap.derivative_ae(p)))
    out["det_error"] = float(np.max(np.abs(det - 1.0)))

    # boxes inside one sheet: a unit-square sheet for the Klein map, a lattice cell otherwise
    sheet = np.ones(d) if cmap.kind == "klein" else cell
    corner = np.floor(rng.uniform(-extent, extent, size=(n, d)) / sheet) * sheet
    u = np.sort(rng.uniform(0.0, 1.0, size=(n, 2, d)), axis=1) * sheet * 0.999
    box_lo, box_hi = corner + u[:, 0], corner + u[:, 1]
    area = np.prod(box_hi - box_lo, axis=-1)
    pl = cmap.project(box_lo).reshape(n, d)
    ph = cmap.project(box_hi).reshape(n, d)
    proj_area = np.prod(np.abs(ph - pl), axis=-1)
    out["box_area_error"] = float(np.max(np.abs(proj_area - area)))
    return out
