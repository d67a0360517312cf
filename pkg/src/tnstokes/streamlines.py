"""Particle paths through a frozen (mean) velocity field."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fem import GradientDiscretisation
from .mesh import inside

log = logging.getLogger(__name__)

DEFAULT_CENTER = (0.5, 0.75)
STAGNATION_SPEED = 1e-14


@dataclass
class Polyline:
    seed_id: int
    line_id: int
    points: np.ndarray   # (k, 2)
    speed: np.ndarray    # (k,)
    reason: str          # "exit", "stagnant" or "max_steps"


def default_seeds(per_line: int = 100, center=DEFAULT_CENTER) -> tuple[np.ndarray, np.ndarray]:
    """Seeds on the two diagonals of the square and the horizontal and vertical lines through ``center``.

    Returns ``(seeds, line_ids)`` with ``per_line`` interior points per line.
    """
    t = (np.arange(per_line) + 0.5) / per_line
    cx, cy = center
    lines = [np.stack([t, t], 1), np.stack([t, 1.0 - t], 1),
             np.stack([t, np.full_like(t, cy)], 1), np.stack([np.full_like(t, cx), t], 1)]
    seeds = np.concatenate(lines)
    ids = np.repeat(np.arange(len(lines)), per_line)
    return seeds, ids


def trace(gd: GradientDiscretisation, v_full, seeds, line_ids=None, h: float = 1e-3,
          max_steps: int = 100_000, record_every: int = 1) -> list[Polyline]:
    """RK4 advection of every seed with fixed step ``h``.

    A path stops when an RK stage leaves the square, when the speed drops below
    ``STAGNATION_SPEED`` or after ``max_steps`` steps. Every ``record_every``-th
    point is kept, plus the final one.
    """
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 2)
    line_ids = np.zeros(len(seeds), dtype=int) if line_ids is None else np.asarray(line_ids)
    ok = inside(seeds)
    for k in np.flatnonzero(~ok):
        log.warning("seed %d at %s lies outside the domain; skipped", k, tuple(seeds[k]))
    idx = np.flatnonzero(ok)
    x = seeds[idx].copy()
    paths = {int(k): [x[i].copy()] for i, k in enumerate(idx)}
    speeds = {int(k): [] for k in idx}
    reason = {}
    active = np.arange(len(idx))

    def vel(p):
        return gd.evaluate_many(v_full, p)

    u = vel(x)
    for i, k in enumerate(idx):
        speeds[int(k)].append(float(np.hypot(*u[i])))
    for step in range(1, max_steps + 1):
        if len(active) == 0:
            break
        xa, ua = x[active], u[active]
        stalled = np.hypot(ua[:, 0], ua[:, 1]) < STAGNATION_SPEED
        alive = ~stalled
        k1 = ua
        p2 = xa + 0.5 * h * k1
        alive &= inside(p2)
        k2 = np.zeros_like(xa)
        k2[alive] = vel(p2[alive])
        p3 = xa + 0.5 * h * k2
        alive &= inside(p3)
        k3 = np.zeros_like(xa)
        k3[alive] = vel(p3[alive])
        p4 = xa + h * k3
        alive &= inside(p4)
        k4 = np.zeros_like(xa)
        k4[alive] = vel(p4[alive])
        xn = xa + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        alive &= inside(xn)
        un = np.zeros_like(xa)
        un[alive] = vel(xn[alive])
        for i in np.flatnonzero(~alive):
            reason[int(idx[active[i]])] = "stagnant" if stalled[i] else "exit"
        moved = active[alive]
        x[moved], u[moved] = xn[alive], un[alive]
        if step % record_every == 0:
            for a in moved:
                s = int(idx[a])
                paths[s].append(x[a].copy())
                speeds[s].append(float(np.hypot(*u[a])))
        active = moved
    for a in range(len(idx)):
        s = int(idx[a])
        reason.setdefault(s, "max_steps")
        if not np.array_equal(paths[s][-1], x[a]):
            paths[s].append(x[a].copy())
            speeds[s].append(float(np.hypot(*u[a])))
    return [Polyline(int(k), int(line_ids[k]), np.array(paths[int(k)]), np.array(speeds[int(k)]),
                     reason.get(int(k), "max_steps")) for k in idx]


def loop_closure(gd: GradientDiscretisation, v_full, seed, center, h: float = 1e-3,
                 max_steps: int = 100_000) -> tuple[float, float]:
    """Trace one seed until its winding angle about ``center`` reaches 2 pi.

    Returns ``(gap, diameter)``: distance between the start and the crossing
    point, and the largest extent of the loop. ``gap`` is ``inf`` if the path
    exits or never completes a revolution.
    """
    c = np.asarray(center, dtype=float)
    x = np.asarray(seed, dtype=float).copy()
    pts = [x.copy()]
    angle = 0.0
    prev = np.arctan2(*(x - c)[::-1])
    f = lambda p: gd.evaluate_many(v_full, p[None])[0]
    for _ in range(max_steps):
        k1 = f(x)
        p = x + 0.5 * h * k1
        if not inside(p):
            return float("inf"), 0.0
        k2 = f(p)
        p = x + 0.5 * h * k2
        if not inside(p):
            return float("inf"), 0.0
        k3 = f(p)
        p = x + h * k3
        if not inside(p):
            return float("inf"), 0.0
        k4 = f(p)
        xn = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not inside(xn):
            return float("inf"), 0.0
        cur = np.arctan2(*(xn - c)[::-1])
        d = (cur - prev + np.pi) % (2 * np.pi) - np.pi
        angle += d
        prev = cur
        pts.append(xn.copy())
        x = xn
        if abs(angle) >= 2 * np.pi:
            P = np.array(pts)
            diam = float(np.max(np.linalg.norm(P[:, None] - P[None, ::max(1, len(P) // 200)], axis=-1)))
            return float(np.linalg.norm(x - pts[0])), diam
    return float("inf"), 0.0


def write_streamlines_csv(path, lines: list[Polyline]) -> Path:
    """Columns: line_id, seed_id, k, x, y, speed, reason."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line_id", "seed_id", "k", "x", "y", "speed", "reason"])
        for pl in lines:
            for k, (pt, s) in enumerate(zip(pl.points, pl.speed)):
                w.writerow([pl.line_id, pl.seed_id, k, repr(float(pt[0])), repr(float(pt[1])),
                            repr(float(s)), pl.reason])
    return path
