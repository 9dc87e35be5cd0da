"""Pareto fronts over (latency, area) and the ADRS distance metric.

Both objectives are minimized.  ADRS measures how far an approximate front
sits from a reference front: for each reference point take the relative
worst-coordinate gap to its nearest approximate point, then average.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class DesignPoint:
    latency: float
    area: float
    key: str = ""


def dominates(p: DesignPoint, q: DesignPoint) -> bool:
    """p dominates q if it is no worse in both objectives and better in one."""
    return (
        p.latency <= q.latency
        and p.area <= q.area
        and (p.latency < q.latency or p.area < q.area)
    )


def pareto_extract(points: Sequence[DesignPoint]) -> list[DesignPoint]:
    """Non-dominated subset, sorted by latency; duplicate coordinates keep
    the point with the lexicographically smallest key."""
    if not points:
        raise ValueError("cannot extract a front from no points")
    seen: dict[tuple[float, float], DesignPoint] = {}
    for p in points:
        cur = seen.get((p.latency, p.area))
        if cur is None or p.key < cur.key:
            seen[(p.latency, p.area)] = p
    ordered = sorted(seen.values(), key=lambda p: (p.latency, p.area))
    front: list[DesignPoint] = []
    best_area = float("inf")
    for p in ordered:
        if p.area < best_area:
            front.append(p)
            best_area = p.area
    return front


def adrs(reference: Sequence[DesignPoint], approx: Sequence[DesignPoint]) -> float:
    """Average distance from the reference set: mean over reference points
    of min over approx points of max(relative latency gap, relative area
    gap).  Zero when the approx front covers the reference exactly."""
    if not reference:
        raise ValueError("reference front is empty")
    if not approx:
        raise ValueError("approximate front is empty")
    total = 0.0
    for g in reference:
        if g.latency <= 0 or g.area <= 0:
            raise ValueError("reference points need positive coordinates")
        best = float("inf")
        for w in approx:
            gap = max(abs(w.area - g.area) / g.area, abs(w.latency - g.latency) / g.latency)
            if gap < best:
                best = gap
        total += best
    return total / len(reference)


def reference_front(point_sets: Iterable[Sequence[DesignPoint]]) -> list[DesignPoint]:
    """Pareto front of the union of several result sets."""
    merged: list[DesignPoint] = []
    for s in point_sets:
        merged.extend(s)
    if not merged:
        raise ValueError("no points given")
    return pareto_extract(merged)
