"""Recognising the Klein bottle from persistence over two fields.

The Klein bottle has ``H1 = Z2 + Z2, H2 = Z2`` with ``Z2`` coefficients but
``H1 = Z3, H2 = 0`` with ``Z3`` coefficients, whereas the torus gives
``(2, 1)`` over both.  We count "long" bars in dimensions 1 and 2 over each
field and compare with those numbers.

Counting long bars (``g`` = gap factor):

* Sort the finite persistences of a dimension decreasingly,
  ``p1 >= p2 >= ... >= pm`` and set ``p(m+1) = 0``.
* The noise floor of a diagram is ``L / g`` where ``L`` is its largest finite
  persistence over dimensions >= 1.  If no bar clears the floor the
  dimension has no long bars.
* Otherwise the long bars are ``p1..pk`` with ``k`` the first index where
  ``pk > g * p(k+1)``.  If that gap sits at or below the noise floor the
  dimension has no clean separation and the verdict is ambiguous.
* Essential (infinite) bars always count as long.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagrams import PersistenceDiagram

KLEIN_COUNTS = {2: (2, 1), 3: (1, 0)}


@dataclass
class DimensionCount:
    long: int
    ambiguous: bool
    persistences: list[float] = field(default_factory=list)


@dataclass
class SignatureResult:
    verdict: str  # "match" | "no-match" | "ambiguous"
    counts: dict[int, tuple[int, int]]
    details: dict[int, dict[int, DimensionCount]]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "counts": {str(f): list(c) for f, c in self.counts.items()},
            "ambiguous_dims": {str(f): [d for d, c in dd.items() if c.ambiguous]
                               for f, dd in self.details.items()},
            "top_persistence": {str(f): {str(d): c.persistences[:5] for d, c in dd.items()}
                                for f, dd in self.details.items()},
        }


def count_long_bars(dgm: PersistenceDiagram, dim: int, gap_factor: float = 3.0) -> DimensionCount:
    g = float(gap_factor)
    all_finite = np.concatenate([dgm.finite(d)[:, 1] - dgm.finite(d)[:, 0] for d in dgm.dims if d >= 1]
                                or [np.empty(0)])
    L = float(all_finite.max()) if all_finite.size else 0.0
    pers = np.sort(dgm.finite(dim)[:, 1] - dgm.finite(dim)[:, 0])[::-1]
    essential = dgm.essential_count(dim)
    floor = L / g
    if pers.size == 0 or pers[0] <= floor:
        return DimensionCount(essential, False, pers.tolist())
    padded = np.append(pers, 0.0)
    k = int(np.argmax(padded[:-1] > g * padded[1:]))  # first clean gap (always exists: p_m > 0)
    if padded[k] <= floor:
        return DimensionCount(essential + k + 1, True, pers.tolist())
    return DimensionCount(essential + k + 1, False, pers.tolist())


def klein_signature(p2: PersistenceDiagram, p3: PersistenceDiagram, gap_factor: float = 3.0) -> SignatureResult:
    """Verdict ``match`` iff the long-bar counts are (2, 1) over Z2 and (1, 0) over Z3."""
    if p2.field_char != 2 or p3.field_char != 3:
        raise ValueError("expected one diagram over Z2 and one over Z3")
    details = {f: {d: count_long_bars(dg, d, gap_factor) for d in (1, 2)} for f, dg in ((2, p2), (3, p3))}
    counts = {f: (dd[1].long, dd[2].long) for f, dd in details.items()}
    if len(p2) == 0 and len(p3) == 0:
        verdict = "no-match"
    elif any(c.ambiguous for dd in details.values() for c in dd.values()):
        verdict = "ambiguous"
    elif counts == KLEIN_COUNTS:
        verdict = "match"
    else:
        verdict = "no-match"
    return SignatureResult(verdict, counts, details)
