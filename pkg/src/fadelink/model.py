"""Problem-instance definition for a slotted fading link with batch service.

A model instance bundles the arrival law (packets per slot), the fade law
(finite set of channel states, IID across slots), the transmit power table
P(h, s), the maximum batch size, and the queue mode: integer-valued queue
lengths, or a real-valued queue approximated on a lattice of step delta.

All values are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from math import fsum, isfinite

import numpy as np
from scipy.special import gammaln

CONVEXITY_TOL = 1e-12
LAW_TOL = 1e-12
GRID_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class ArrivalLaw:
    """IID per-slot packet arrivals on {0..a_max}.

    pmf is the probability of each arrival count; lam and sigma2 are the
    mean and variance implied by pmf and are stored so that validation can
    cross-check them against the pmf.
    """

    pmf: tuple[float, ...]
    lam: float
    sigma2: float
    kind: str = "pmf"  # "binomial" or "pmf"; controls serialization only
    n: int | None = None
    p: float | None = None

    @property
    def a_max(self) -> int:
        return len(self.pmf) - 1


@dataclass(frozen=True)
class FadeLaw:
    """Finite fade-state distribution; all states strictly positive."""

    states: tuple[float, ...]
    probs: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class PowerTable:
    """Per-fade transmit power sampled on the action grid.

    rows[i][k] is the power in watts for fade index i when serving k grid
    steps. For integer mode the grid step is one packet; for grid mode it
    is the lattice step delta. kind "example" marks tables built from the
    closed-form reference curve so they serialize without materialized
    rows.
    """

    kind: str  # "example" or "table"
    rows: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class Mode:
    kind: str  # "int" or "grid"
    delta: float = 1.0


@dataclass(frozen=True)
class ModelSpec:
    """A full problem instance; validate() checks every invariant."""

    arrival: ArrivalLaw
    fade: FadeLaw
    power: PowerTable
    s_max: float
    mode: Mode = Mode("int", 1.0)
    admission: bool = False

    @property
    def is_grid(self) -> bool:
        return self.mode.kind == "grid"


@dataclass(frozen=True)
class UtilityConfig:
    """Throughput-utility target: a strictly concave increasing u with
    u(0) = 0 translates a utility floor u_c into an admitted-rate floor
    rho * lam."""

    rho: float
    utility: object | None = None  # callable a -> u(a); only for translation


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    violations: tuple[str, ...]
    a1: bool  # Pr{A > S_max} > 0
    a2: bool  # full arrival support on {0..A_max}
    eps_a: float  # Pr{A > S_max}
    stable: bool  # lam < S_max


@dataclass(frozen=True)
class Lattice:
    """Integer working view of a spec: queue and actions in lattice steps.

    delta is the packet value of one step (1.0 in integer mode). Arrivals
    are integer packets, so their lattice offsets are multiples of
    steps_per_packet.
    """

    delta: float
    steps_per_packet: int
    s_units: int
    arr_offsets: np.ndarray  # int64, ascending
    arr_probs: np.ndarray
    power: np.ndarray  # (n_fades, s_units + 1)
    fade_probs: np.ndarray
    fade_states: np.ndarray


def example_power_value(h: float, s) -> float:
    """Reference transmit power curve: (1.28 / h^2) * (10^(s/4) - 1)."""
    return (1.28 / (h * h)) * (np.power(10.0, np.asarray(s, dtype=float) / 4.0) - 1.0)


def binomial_pmf(n: int, p: float) -> tuple[float, ...]:
    """Binomial(n, p) pmf computed in log space to stay finite for large n."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"binomial p must lie in (0, 1), got {p}")
    k = np.arange(n + 1, dtype=float)
    logpmf = (
        gammaln(n + 1.0)
        - gammaln(k + 1.0)
        - gammaln(n - k + 1.0)
        + k * np.log(p)
        + (n - k) * np.log1p(-p)
    )
    return tuple(np.exp(logpmf).tolist())


def _law_from_pmf(pmf, kind="pmf", n=None, p=None) -> ArrivalLaw:
    pmf = tuple(float(x) for x in pmf)
    ks = np.arange(len(pmf), dtype=float)
    lam = fsum(k * q for k, q in zip(ks, pmf))
    m2 = fsum(k * k * q for k, q in zip(ks, pmf))
    return ArrivalLaw(pmf=pmf, lam=lam, sigma2=m2 - lam * lam, kind=kind, n=n, p=p)


def binomial_arrivals(n: int, p: float) -> ArrivalLaw:
    return _law_from_pmf(binomial_pmf(n, p), kind="binomial", n=n, p=p)


def arrivals_from_pmf(values) -> ArrivalLaw:
    return _law_from_pmf(values)


def fade_law(states, probs) -> FadeLaw:
    return FadeLaw(tuple(float(h) for h in states), tuple(float(q) for q in probs))


def _action_grid(s_max: float, mode: Mode) -> np.ndarray:
    if mode.kind == "int":
        return np.arange(int(round(s_max)) + 1, dtype=float)
    n = int(round(s_max / mode.delta))
    return np.arange(n + 1, dtype=float) * mode.delta


def example_power_rows(fade: FadeLaw, s_max: float, mode: Mode) -> tuple:
    grid = _action_grid(s_max, mode)
    return tuple(tuple(example_power_value(h, grid).tolist()) for h in fade.states)


def pwl_envelope_rows(int_rows, mode: Mode) -> tuple:
    """Sample the lower convex envelope of an integer power table on the
    action grid. Each fade's envelope is the tightest piecewise-linear
    convex minorant through the integer points."""
    spp = int(round(1.0 / mode.delta))
    out = []
    for row in int_rows:
        xs = np.arange(len(row), dtype=float)
        ys = np.asarray(row, dtype=float)
        hx, hy = _lower_hull(xs, ys)
        grid = np.arange((len(row) - 1) * spp + 1, dtype=float) * mode.delta
        out.append(tuple(np.interp(grid, hx, hy).tolist()))
    return tuple(out)


def _lower_hull(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower convex hull of points with strictly increasing x (monotone chain)."""
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (xs[i1] - xs[i0]) * (ys[i] - ys[i0]) - (xs[i] - xs[i0]) * (
                ys[i1] - ys[i0]
            )
            if cross <= 0.0:
                hull.pop()
            else:
                break
        hull.append(i)
    idx = np.asarray(hull, dtype=int)
    return xs[idx], ys[idx]


def example_system(
    a_max: int,
    p: float,
    fade: FadeLaw,
    mode: Mode = Mode("int", 1.0),
    envelope: bool = False,
    admission: bool = False,
) -> ModelSpec:
    """Running example: Binomial(a_max, p) arrivals, S_max = 2, and the
    closed-form power curve sampled on the action grid.

    envelope=True replaces the strictly convex curve by the piecewise
    linear lower envelope of its integer samples (grid mode only).
    """
    arrival = binomial_arrivals(a_max, p)
    s_max = 2.0
    if envelope:
        if mode.kind != "grid":
            raise ValueError("envelope power tables require grid mode")
        int_rows = example_power_rows(fade, s_max, Mode("int", 1.0))
        power = PowerTable("table", pwl_envelope_rows(int_rows, mode))
    else:
        power = PowerTable("example", example_power_rows(fade, s_max, mode))
    return ModelSpec(arrival, fade, power, s_max, mode, admission)


def thinned_spec(spec: ModelSpec, rho: float) -> ModelSpec:
    """Spec with each arriving packet independently kept with probability
    rho: the arrival pmf becomes the binomially thinned law and admission
    control is dropped."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    a_max = spec.arrival.a_max
    base = np.asarray(spec.arrival.pmf)
    thin = np.zeros(a_max + 1)
    for r in range(a_max + 1):
        for a in range(r + 1):
            thin[a] += base[r] * _binom_coeff(r, a) * rho**a * (1 - rho) ** (r - a)
    return replace(spec, arrival=arrivals_from_pmf(thin), admission=False)


def _binom_coeff(n: int, k: int) -> float:
    return float(np.exp(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)))


def validate(spec: ModelSpec) -> ValidationReport:
    """Report-style invariant check; never raises on bad instances."""
    bad: list[str] = []
    arr = spec.arrival
    total = fsum(arr.pmf)
    if abs(total - 1.0) > LAW_TOL:
        bad.append(f"pmf not normalized: sums to {total!r}")
    if any(q < 0 for q in arr.pmf):
        bad.append("pmf has negative entries")
    lam = fsum(k * q for k, q in enumerate(arr.pmf))
    if abs(lam - arr.lam) > LAW_TOL:
        bad.append(f"stored arrival mean {arr.lam!r} != pmf mean {lam!r}")
    m2 = fsum(k * k * q for k, q in enumerate(arr.pmf))
    if abs((m2 - lam * lam) - arr.sigma2) > LAW_TOL:
        bad.append("stored arrival variance inconsistent with pmf")
    if not all(isfinite(q) for q in arr.pmf):
        bad.append("pmf has non-finite entries")

    if any(h <= 0 for h in spec.fade.states):
        bad.append("fade states must be strictly positive")
    pf = fsum(spec.fade.probs)
    if abs(pf - 1.0) > LAW_TOL:
        bad.append(f"fade probs not normalized: sum {pf!r}")
    if len(spec.fade.states) != len(spec.fade.probs):
        bad.append("fade states/probs length mismatch")

    if len(spec.power.rows) != len(spec.fade.states):
        bad.append("power table rows do not match fade states")
    grid = _action_grid(spec.s_max, spec.mode)
    for i, row in enumerate(spec.power.rows):
        if len(row) != len(grid):
            bad.append(f"power row {i} has {len(row)} entries, expected {len(grid)}")
            continue
        if abs(row[0]) > 0.0:
            bad.append(f"power row {i} violates P(h,0)=0: {row[0]!r}")
        d = np.diff(np.asarray(row))
        if np.any(d < -CONVEXITY_TOL):
            bad.append(f"power row {i} not non-decreasing")
        if len(d) >= 2 and np.any(np.diff(d) < -CONVEXITY_TOL):
            bad.append(f"power row {i} not convex (negative second difference)")

    if spec.is_grid:
        delta = spec.mode.delta
        if delta <= 0:
            bad.append("grid delta must be positive")
        else:
            spp = round(1.0 / delta)
            if abs(spp * delta - 1.0) > GRID_ALIGN_TOL:
                bad.append("grid delta must evenly divide one packet")
            k = round(spec.s_max / delta)
            if abs(k * delta - spec.s_max) > GRID_ALIGN_TOL:
                bad.append("S_max is not an integer multiple of delta")

    eps_a = fsum(q for k, q in enumerate(arr.pmf) if k > spec.s_max)
    a1 = eps_a > 0.0
    a2 = all(q > 0.0 for q in arr.pmf)
    stable = arr.lam < spec.s_max
    return ValidationReport(
        passed=not bad,
        violations=tuple(bad),
        a1=a1,
        a2=a2,
        eps_a=eps_a,
        stable=stable,
    )


def lattice(spec: ModelSpec) -> Lattice:
    """Integer working view used by the solver, chain, and simulator."""
    if spec.is_grid:
        delta = spec.mode.delta
        spp = int(round(1.0 / delta))
    else:
        delta = 1.0
        spp = 1
    s_units = int(round(spec.s_max / delta))
    offs = np.arange(spec.arrival.a_max + 1, dtype=np.int64) * spp
    return Lattice(
        delta=delta,
        steps_per_packet=spp,
        s_units=s_units,
        arr_offsets=offs,
        arr_probs=np.asarray(spec.arrival.pmf, dtype=float),
        power=np.asarray(spec.power.rows, dtype=float),
        fade_probs=np.asarray(spec.fade.probs, dtype=float),
        fade_states=np.asarray(spec.fade.states, dtype=float),
    )


# ---------------------------------------------------------------------------
# JSON model files


def spec_to_dict(spec: ModelSpec) -> dict:
    arr = spec.arrival
    if arr.kind == "binomial":
        arrival = {"type": "binomial", "n": arr.n, "p": arr.p}
    else:
        arrival = {"type": "pmf", "values": list(arr.pmf)}
    power = (
        {"type": "example"}
        if spec.power.kind == "example"
        else {"type": "table", "rows": [list(r) for r in spec.power.rows]}
    )
    mode = (
        {"kind": "int"}
        if spec.mode.kind == "int"
        else {"kind": "grid", "delta": spec.mode.delta}
    )
    return {
        "arrival": arrival,
        "fade": {"states": list(spec.fade.states), "probs": list(spec.fade.probs)},
        "power": power,
        "s_max": spec.s_max,
        "mode": mode,
        "admission": spec.admission,
    }


def spec_from_dict(doc: dict) -> ModelSpec:
    arr = doc["arrival"]
    if arr["type"] == "binomial":
        arrival = binomial_arrivals(int(arr["n"]), float(arr["p"]))
    elif arr["type"] == "pmf":
        arrival = arrivals_from_pmf(arr["values"])
    else:
        raise ValueError(f"unknown arrival type {arr['type']!r}")
    fade = fade_law(doc["fade"]["states"], doc["fade"]["probs"])
    mode_doc = doc.get("mode", {"kind": "int"})
    mode = (
        Mode("int", 1.0)
        if mode_doc["kind"] == "int"
        else Mode("grid", float(mode_doc["delta"]))
    )
    s_max = float(doc["s_max"])
    pw = doc["power"]
    if pw["type"] == "example":
        power = PowerTable("example", example_power_rows(fade, s_max, mode))
    elif pw["type"] == "table":
        power = PowerTable("table", tuple(tuple(map(float, r)) for r in pw["rows"]))
    else:
        raise ValueError(f"unknown power type {pw['type']!r}")
    return ModelSpec(arrival, fade, power, s_max, mode, bool(doc.get("admission", False)))


def save_model(spec: ModelSpec, path) -> None:
    with open(path, "w") as f:
        json.dump(spec_to_dict(spec), f, indent=2)
        f.write("\n")


def load_model(path) -> ModelSpec:
    with open(path) as f:
        return spec_from_dict(json.load(f))
