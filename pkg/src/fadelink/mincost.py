"""Minimum average power needed to sustain a mean service rate.

For integer batches the optimum over all conditional service laws is a
piecewise-linear convex curve c(rate) traced by a parametric multiplier
sweep: every candidate multiplier is a slope of some fade's lower convex
envelope of (batch, power) points, and at each multiplier every fade
independently picks the batch minimizing power - multiplier * batch. The
resulting fade-averaged (rate, power) pairs are the curve's vertices.

The real-batch variant runs the identical sweep on the action lattice and
serves as the grid approximation to the continuous curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import Lattice, ModelSpec, _lower_hull, lattice

BREAKPOINT_TOL = 1e-9


@dataclass(frozen=True)
class MinPowerCurve:
    """Piecewise-linear convex minimum-power curve on [0, S_max].

    vertices are (rate, power) pairs including (0, 0) and (S_max, .);
    slopes[i] is the slope between vertices i and i+1 and is strictly
    increasing; breakpoints are the interior vertex rates.
    """

    vertices: tuple[tuple[float, float], ...]
    slopes: tuple[float, ...]
    s_max: float

    def __call__(self, rate: float) -> float:
        return self.value(rate)

    def value(self, rate: float) -> float:
        if rate < -BREAKPOINT_TOL or rate > self.s_max + BREAKPOINT_TOL:
            raise ValueError(f"rate {rate} outside [0, {self.s_max}]")
        xs = np.asarray([v[0] for v in self.vertices])
        ys = np.asarray([v[1] for v in self.vertices])
        return float(np.interp(min(max(rate, 0.0), self.s_max), xs, ys))


@dataclass(frozen=True)
class CaseInfo:
    """Local geometry of the curve around a target rate.

    case 1: rate below the first breakpoint; case 2: strictly inside a
    later segment; case 3: exactly at a breakpoint. The reference line l
    supports the curve at the segment (cases 1-2) or passes through the
    breakpoint with the mean of the adjacent slopes (case 3). m_l and m_u
    are the slope gaps to the neighbouring segments, so that
    c(s) - l(s) >= m * |s - endpoint| holds with m = min(m_l, m_u).
    """

    case: int
    rate: float
    s_l: float
    s_u: float
    line_intercept: float
    line_slope: float
    m_l: float
    m_u: float

    @property
    def m(self) -> float:
        return min(self.m_l, self.m_u)

    def line(self, s) -> np.ndarray:
        return self.line_intercept + self.line_slope * np.asarray(s, dtype=float)


def _sweep_vertices(lat: Lattice) -> list[tuple[float, float]]:
    """Vertices of the fade-averaged curve from the per-fade hull slopes."""
    events: list[tuple[float, int, int]] = []  # (slope, fade, hull step)
    hulls = []
    for i in range(len(lat.fade_probs)):
        xs = np.arange(lat.s_units + 1, dtype=float) * lat.delta
        hx, hy = _lower_hull(xs, lat.power[i])
        hulls.append((hx, hy))
        seg = np.diff(hy) / np.diff(hx)
        for j, mu in enumerate(seg):
            events.append((float(mu), i, j))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    pos = [0] * len(hulls)
    probs = lat.fade_probs
    verts = [(0.0, 0.0)]

    def point() -> tuple[float, float]:
        r = sum(probs[i] * hulls[i][0][pos[i]] for i in range(len(hulls)))
        p = sum(probs[i] * hulls[i][1][pos[i]] for i in range(len(hulls)))
        return (float(r), float(p))

    k = 0
    while k < len(events):
        mu = events[k][0]
        # advance every fade whose hull slope ties at mu; ties merge into
        # a single vertex so the curve stays well defined
        while k < len(events) and abs(events[k][0] - mu) <= BREAKPOINT_TOL:
            _, i, j = events[k]
            pos[i] = j + 1
            k += 1
        verts.append(point())
    return verts


def _dedupe(verts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    out = [verts[0]]
    for v in verts[1:]:
        if abs(v[0] - out[-1][0]) <= BREAKPOINT_TOL:
            out[-1] = (out[-1][0], min(out[-1][1], v[1]))
        else:
            out.append(v)
    return out


def _curve_from_lattice(lat: Lattice, s_max: float) -> MinPowerCurve:
    verts = _dedupe(_sweep_vertices(lat))
    slopes = tuple(
        (p1 - p0) / (r1 - r0) for (r0, p0), (r1, p1) in zip(verts, verts[1:])
    )
    return MinPowerCurve(tuple(verts), slopes, s_max)


def min_power_curve(spec: ModelSpec) -> MinPowerCurve:
    """Exact minimum-power curve for integer batch sizes."""
    if spec.is_grid:
        raise ValueError("min_power_curve expects an integer-mode spec")
    return _curve_from_lattice(lattice(spec), spec.s_max)


def min_power_curve_real(spec: ModelSpec) -> MinPowerCurve:
    """Grid approximation of the real-batch minimum-power curve.

    The multiplier sweep runs over the action lattice; between achievable
    vertices the optimum time-shares adjacent batches, so evaluation
    interpolates linearly. Rates outside [0, S_max] raise.
    """
    if not spec.is_grid:
        raise ValueError("min_power_curve_real expects a grid-mode spec")
    return _curve_from_lattice(lattice(spec), spec.s_max)


def breakpoints(curve: MinPowerCurve) -> tuple[float, ...]:
    """Interior rates where the slope changes, deduplicated to 1e-9."""
    return tuple(v[0] for v in curve.vertices[1:-1])


def classify_case(curve: MinPowerCurve, rate: float) -> CaseInfo:
    if not 0.0 < rate < curve.s_max:
        raise ValueError(f"rate must lie strictly inside (0, {curve.s_max})")
    xs = [v[0] for v in curve.vertices]
    ys = [v[1] for v in curve.vertices]

    hit = None
    for i in range(1, len(xs) - 1):
        if abs(rate - xs[i]) <= BREAKPOINT_TOL:
            hit = i
            break
    if hit is not None:
        # at a breakpoint: support line through the vertex with the mean of
        # the adjacent slopes (deterministic choice inside the open slope gap)
        sl = su = xs[hit]
        left, right = curve.slopes[hit - 1], curve.slopes[hit]
        slope = 0.5 * (left + right)
        intercept = ys[hit] - slope * xs[hit]
        return CaseInfo(3, rate, sl, su, intercept, slope, slope - left, right - slope)

    seg = int(np.searchsorted(xs, rate) - 1)
    seg = min(max(seg, 0), len(curve.slopes) - 1)
    sl, su = xs[seg], xs[seg + 1]
    slope = curve.slopes[seg]
    intercept = ys[seg] - slope * xs[seg]
    m_l = slope - curve.slopes[seg - 1] if seg > 0 else float("inf")
    m_u = curve.slopes[seg + 1] - slope if seg + 1 < len(curve.slopes) else float("inf")
    case = 1 if seg == 0 else 2
    return CaseInfo(case, rate, sl, su, intercept, slope, m_l, m_u)


def export_curve_csv(curve: MinPowerCurve, path, provenance: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if provenance:
            f.write(f"# {provenance}\n")
        w = csv.writer(f)
        w.writerow(["rate", "power"])
        for r, p in curve.vertices:
            w.writerow([repr(r), repr(p)])


def export_case_csv(info: CaseInfo, path, provenance: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if provenance:
            f.write(f"# {provenance}\n")
        w = csv.writer(f)
        w.writerow(
            ["case", "rate", "s_l", "s_u", "line_intercept", "line_slope", "m_l", "m_u", "m"]
        )
        w.writerow(
            [
                info.case,
                repr(info.rate),
                repr(info.s_l),
                repr(info.s_u),
                repr(info.line_intercept),
                repr(info.line_slope),
                repr(info.m_l),
                repr(info.m_u),
                repr(info.m),
            ]
        )
