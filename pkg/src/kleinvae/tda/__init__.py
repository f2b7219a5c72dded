"""Persistent homology of Rips filtrations, bottleneck distance, Klein-bottle detection."""

from .bottleneck import Matching, bottleneck, bottleneck_l2, bottleneck_matching
from .diagrams import DiagramFormatError, PersistenceDiagram, load_diagrams
from .rips import BACKEND, CapacityError, distance_matrix, enclosing_radius, rips_ph, rips_ph_points
from .signature import SignatureResult, count_long_bars, klein_signature
from .subsample import maxmin_subsample

__all__ = [
    "BACKEND",
    "CapacityError",
    "DiagramFormatError",
    "Matching",
    "PersistenceDiagram",
    "SignatureResult",
    "bottleneck",
    "bottleneck_l2",
    "bottleneck_matching",
    "count_long_bars",
    "distance_matrix",
    "enclosing_radius",
    "klein_signature",
    "load_diagrams",
    "maxmin_subsample",
    "rips_ph",
    "rips_ph_points",
]
