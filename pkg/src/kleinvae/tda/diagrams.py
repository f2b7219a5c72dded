"""Persistence diagrams and their JSON / CSV forms."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np


class DiagramFormatError(ValueError):
    pass


@dataclass
class PersistenceDiagram:
    """Bars ``(birth, death, dim)``; essential bars have ``death = inf``."""

    points: np.ndarray  # (k, 3)
    field_char: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if np.any(pts[:, 1] < pts[:, 0]):
            raise DiagramFormatError("death before birth")
        if self.field_char not in (2, 3, 5, 7):
            raise DiagramFormatError(f"unsupported field characteristic {self.field_char}")
        order = np.lexsort((pts[:, 1], pts[:, 0], pts[:, 2]))
        self.points = pts[order]

    def __len__(self):
        return len(self.points)

    def bars(self, dim: int) -> np.ndarray:
        """(m, 2) array of (birth, death) in one homology dimension."""
        sel = self.points[:, 2] == dim
        return self.points[sel, :2]

    def finite(self, dim: int) -> np.ndarray:
        b = self.bars(dim)
        return b[np.isfinite(b[:, 1])]

    def essential_count(self, dim: int) -> int:
        return int(np.sum(~np.isfinite(self.bars(dim)[:, 1])))

    def persistence(self, dim: int) -> np.ndarray:
        b = self.bars(dim)
        return b[:, 1] - b[:, 0]

    def betti_at(self, dim: int, t: float) -> int:
        """Rank of homology of the filtration at scale ``t`` (half-open bars)."""
        b = self.bars(dim)
        return int(np.sum((b[:, 0] <= t) & (t < b[:, 1])))

    @property
    def dims(self) -> list[int]:
        return sorted({int(d) for d in self.points[:, 2]})

    # ------------------------------------------------------------ serialization
    def to_dict(self) -> dict:
        return {
            "field": self.field_char,
            "points": [
                {"birth": float(b), "death": None if math.isinf(d) else float(d), "dim": int(k)}
                for b, d, k in self.points
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PersistenceDiagram":
        try:
            pts = [(p["birth"], math.inf if p["death"] is None else p["death"], p["dim"])
                   for p in obj["points"]]
            return cls(np.array(pts, dtype=float).reshape(-1, 3), int(obj["field"]))
        except (KeyError, TypeError) as exc:
            raise DiagramFormatError(f"malformed diagram JSON: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PersistenceDiagram":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DiagramFormatError(f"invalid JSON: {exc}") from exc

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["field", "dim", "birth", "death"])
        for b, d, k in self.points:
            w.writerow([self.field_char, int(k), repr(float(b)), "" if math.isinf(d) else repr(float(d))])
        return buf.getvalue()


def load_diagrams(text: str) -> list[PersistenceDiagram]:
    """Parse one diagram object, a JSON list of them, or JSON lines."""
    text = text.strip()
    if not text:
        return []
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        try:
            return [PersistenceDiagram.from_json(line) for line in text.splitlines() if line.strip()]
        except DiagramFormatError as exc:
            raise DiagramFormatError(f"not a diagram file: {exc}") from exc
    if isinstance(obj, list):
        return [PersistenceDiagram.from_dict(o) for o in obj]
    if isinstance(obj, dict) and "diagrams" in obj:
        return [PersistenceDiagram.from_dict(o) for o in obj["diagrams"]]
    return [PersistenceDiagram.from_dict(obj)]
