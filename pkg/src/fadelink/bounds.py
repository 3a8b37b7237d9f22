"""Numerical verification of stationary-law bounds for admissible policies.

Three families of checks run against the exact stationary law of a policy:

* a geometric upper bound on the law above the first state whose mean
  service rate clears a threshold (verify_geometric_tail);
* a drift-based lower bound on tail probabilities below a horizon where
  the one-slot drift is bounded (verify_drift_tail);
* a concentration bound on how much stationary mass may sit at service
  rates away from the active segment of the minimum-power curve, in terms
  of the power gap V (verify_service_concentration);

plus the two-sided sandwich c(rate) <= E c(sbar(Q)) <= P_bar
(service_cost_sandwich). Every check is report-style: hypotheses that
fail make a check inapplicable rather than failed.

Drift quantities are taken from the truncated kernel itself, so each
inequality is verified against the exact chain being analysed; away from
the truncation boundary they coincide with rate - sbar(q).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import fsum

import numpy as np

from . import chain as chain_mod
from .chain import StationaryDist, TransitionKernel
from .mincost import CaseInfo, MinPowerCurve
from .model import ModelSpec, lattice

SLACK_TOL = 1e-9
MONOTONE_TOL = 1e-12


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the stationary-law bounds."""

    s1: float | None = None  # service-rate threshold, packets/slot
    q1: int | None = None  # first lattice state with sbar >= s1
    rho_d: float | None = None  # geometric parameter
    eps_a: float | None = None  # Pr{A > S_max}
    delta_a: float | None = None  # largest excess with tail >= eps_a
    d: float | None = None  # drift ceiling, packets/slot
    q_d: int | None = None  # drift horizon, lattice index
    delta: float | None = None  # small jump used by the grid drift bound
    step: float | None = None  # lattice step
    eps_v: float | None = None  # concentration window, packets/slot
    v: float | None = None  # power gap, watts


@dataclass(frozen=True)
class BoundReport:
    name: str
    applicable: bool
    passed: bool
    vacuous: bool
    worst_slack: float  # smallest satisfied margin; negative means violated
    rows: tuple[tuple[str, float, float, float], ...]  # (index, empirical, bound, slack)
    params: BoundParams
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.passed or not self.applicable


@dataclass(frozen=True)
class SandwichReport:
    e_cost_sbar: float  # E_pi c(sbar(Q))
    p_bar: float
    c_rate: float  # curve value at the reference rate
    upper_ok: bool  # E_pi c(sbar(Q)) <= p_bar + tol
    lower_ok: bool  # c_rate <= E_pi c(sbar(Q)) + tol

    @property
    def ok(self) -> bool:
        return self.upper_ok and self.lower_ok


def _inapplicable(name: str, reason: str, params: BoundParams) -> BoundReport:
    return BoundReport(
        name=name,
        applicable=False,
        passed=True,
        vacuous=False,
        worst_slack=float("inf"),
        rows=(),
        params=params,
        reason=reason,
    )


def _sbar_monotone(sbar: np.ndarray) -> bool:
    return not np.any(np.diff(sbar) < -MONOTONE_TOL)


def verify_geometric_tail(
    dist: StationaryDist, policy, spec: ModelSpec, s1: float
) -> BoundReport:
    """Check pi(q1 + k) <= Pr{Q < q1} (1 + 1/rho_d)^k / rho_d for all k.

    q1 is the first state whose mean service rate reaches s1; rho_d is
    (s1 / S_max) Pr{no arrival} on integer queues and
    ((s1 - step) / (S_max - step)) Pr{no arrival} on the lattice. With
    admission control Pr{no offer} lower-bounds Pr{nothing admitted}.
    """
    name = "geometric_tail"
    lat = lattice(spec)
    p0 = float(lat.arr_probs[0])
    params = BoundParams(s1=s1, eps_a=None, step=lat.delta)
    if p0 <= 0.0:
        return _inapplicable(name, "Pr{A = 0} is zero", params)
    if not 0.0 < s1 < spec.s_max:
        return _inapplicable(name, f"s1 must lie in (0, {spec.s_max})", params)
    if not _sbar_monotone(dist.sbar):
        return _inapplicable(name, "mean service rate is not monotone", params)
    above = np.flatnonzero(dist.sbar >= s1)
    if len(above) == 0:
        return _inapplicable(name, "sbar stays below s1 everywhere", params)
    q1 = int(above[0])
    if spec.is_grid:
        step = lat.delta
        if s1 <= step:
            return _inapplicable(name, "s1 must exceed the lattice step", params)
        rho_d = (s1 - step) / (spec.s_max - step) * p0
    else:
        rho_d = s1 / spec.s_max * p0
    pr_below = fsum(dist.pi[:q1].tolist())
    k = np.arange(len(dist.pi) - q1)
    with np.errstate(over="ignore"):
        bound = pr_below * np.power(1.0 + 1.0 / rho_d, k.astype(float)) / rho_d
    emp = dist.pi[q1:]
    slack = bound - emp
    passed = bool(np.all(slack >= -SLACK_TOL))
    params = BoundParams(s1=s1, q1=q1, rho_d=rho_d, step=lat.delta)
    rows = _worst_rows([str(q1 + int(i)) for i in k], emp, bound, slack)
    return BoundReport(
        name=name,
        applicable=True,
        passed=passed,
        vacuous=bool(np.all(bound >= 1.0)),
        worst_slack=float(np.min(slack)),
        rows=rows,
        params=params,
    )


def _worst_rows(labels, emp, bound, slack, keep: int = 12):
    order = np.argsort(slack)[:keep]
    return tuple(
        (labels[i], float(emp[i]), float(bound[i]), float(slack[i])) for i in order
    )


def default_drift_params(
    dist: StationaryDist,
    kernel: TransitionKernel,
    spec: ModelSpec,
    rate: float | None = None,
) -> BoundParams:
    """Drift horizon and ceiling derived from the chain itself: the
    horizon is the last state whose service rate has not yet cleared the
    arrival rate by a margin, capped away from the truncation boundary so
    clamping cannot enter, and the ceiling is the worst observed
    down-drift below the horizon."""
    lat = lattice(spec)
    lam = spec.arrival.lam if rate is None else rate
    margin = max(1e-9, 0.05 * (spec.s_max - lam))
    cap = len(dist.pi) - 1 - int(lat.arr_offsets[-1])
    low = np.flatnonzero(dist.sbar <= lam + margin)
    q_d = int(min(low[-1], cap)) if len(low) else 0
    drift = chain_mod.kernel_drift(kernel)
    d = max(1e-9, float(-np.min(drift[: q_d + 1])))
    eps_a = fsum(q for a, q in enumerate(spec.arrival.pmf) if a > spec.s_max)
    delta_small = None
    if spec.is_grid:
        delta_small = 1.0 - lat.delta
    return BoundParams(
        eps_a=eps_a,
        delta_a=1.0 - lat.delta if spec.is_grid else None,
        d=d,
        q_d=q_d,
        delta=delta_small,
        step=lat.delta,
    )


def verify_drift_tail(
    dist: StationaryDist,
    policy,
    spec: ModelSpec,
    kernel: TransitionKernel | None = None,
    params: BoundParams | None = None,
) -> BoundReport:
    """Check the drift lower bound
    Pr{Q >= q1 + k} >= r^k Pr{Q >= q1} + (1 - r^k) T for all q1 + k <= q_d,
    with r = eps_a / (eps_a + d) on integer queues (r = delta eps_a /
    (delta eps_a + d) on the lattice) and T the tail-drift term beyond the
    horizon.

    Requires arrivals that can overshoot the service cap (eps_a > 0) and
    no admission control, since dropped packets can suppress the upward
    jump the bound relies on.
    """
    name = "drift_tail"
    lat = lattice(spec)
    if spec.admission or getattr(policy, "admit", None) is not None:
        return _inapplicable(
            name, "admission control makes upward jumps state-dependent", BoundParams()
        )
    eps_a = fsum(q for a, q in enumerate(spec.arrival.pmf) if a > spec.s_max)
    if eps_a <= 0.0:
        return _inapplicable(name, "arrivals never exceed S_max", BoundParams(eps_a=0.0))
    if kernel is None:
        kernel = chain_mod.queue_kernel(spec, policy)
    if params is None:
        params = default_drift_params(dist, kernel, spec)
    drift = chain_mod.kernel_drift(kernel)
    q_d, d = params.q_d, params.d
    if q_d is None or d is None or d <= 0.0:
        return _inapplicable(name, "drift horizon/ceiling not supplied", params)
    if np.min(drift[: q_d + 1]) < -d - SLACK_TOL:
        return _inapplicable(
            name, f"drift below -d before the horizon (d={d})", params
        )
    if spec.is_grid:
        delta_small = params.delta if params.delta is not None else 1.0 - lat.delta
        r = delta_small * eps_a / (delta_small * eps_a + d)
    else:
        r = eps_a / (eps_a + d)
    pi = dist.pi
    tails = np.concatenate([np.cumsum(pi[::-1])[::-1], [0.0]])
    tail_drift = fsum((drift[q_d + 1 :] * pi[q_d + 1 :]).tolist())
    t_term = tails[q_d + 1] + tail_drift / d
    worst = np.inf
    labels, emp_list, bound_list, slack_list = [], [], [], []
    for q1 in range(q_d + 1):
        ks = np.arange(q_d - q1 + 1)
        rk = np.power(r, ks.astype(float))
        bound = rk * tails[q1] + (1.0 - rk) * t_term
        emp = tails[q1 : q_d + 1]
        slack = emp - bound
        i = int(np.argmin(slack))
        labels.append(f"{q1}+{int(ks[i])}")
        emp_list.append(emp[i])
        bound_list.append(bound[i])
        slack_list.append(slack[i])
        worst = min(worst, slack[i])
    passed = worst >= -SLACK_TOL
    params = BoundParams(
        eps_a=eps_a,
        delta_a=params.delta_a,
        d=d,
        q_d=q_d,
        delta=params.delta,
        step=lat.delta,
    )
    rows = _worst_rows(
        labels, np.asarray(emp_list), np.asarray(bound_list), np.asarray(slack_list)
    )
    return BoundReport(
        name=name,
        applicable=True,
        passed=bool(passed),
        vacuous=bool(np.all(np.asarray(bound_list) <= 0.0)),
        worst_slack=float(worst),
        rows=rows,
        params=params,
    )


def verify_service_concentration(
    dist: StationaryDist,
    policy,
    spec: ModelSpec,
    curve: MinPowerCurve,
    caseinfo: CaseInfo,
    eps_v: float,
    p_bar: float,
    rate_ref: float | None = None,
    form: str = "auto",
) -> BoundReport:
    """Check that stationary mass at service rates outside the active band
    is small in the power gap V:

    * linear form (integer queues and piecewise-linear lattice curves):
      Pr{sbar(Q) outside [s_l - eps_v, s_u + eps_v]} <= V / (m eps_v);
    * quadratic form (strictly convex lattice curves):
      Pr{|sbar(Q) - rate| > eps_v} <= V / (a eps_v^2), with a the largest
      constant with gap(x) >= a x^2 at offsets |x| >= eps_v.
    """
    name = "service_concentration"
    rate = spec.arrival.lam if rate_ref is None else rate_ref
    v = p_bar - curve.value(rate)
    if form == "auto":
        form = "quadratic" if spec.is_grid else "linear"
    params = BoundParams(eps_v=eps_v, v=v, step=lattice(spec).delta)
    if v < -SLACK_TOL:
        return _inapplicable(name, f"power gap is negative ({v})", params)
    v = max(v, 0.0)
    if form == "linear":
        if caseinfo.case == 1:
            return _inapplicable(
                name, "rate below the first breakpoint: linear form needs case 2 or 3", params
            )
        m = caseinfo.m
        if not np.isfinite(m) or m <= 0.0:
            return _inapplicable(name, "no positive slope gap at the segment", params)
        bad = (dist.sbar < caseinfo.s_l - eps_v) | (dist.sbar > caseinfo.s_u + eps_v)
        bound = v / (m * eps_v)
    elif form == "quadratic":
        xs = np.asarray([vx[0] for vx in curve.vertices])
        slope = _support_slope(curve, rate)
        offsets = xs - rate
        gap = np.asarray([curve.value(x) for x in xs]) - (curve.value(rate) + slope * offsets)
        sel = np.abs(offsets) >= eps_v
        if not np.any(sel):
            return _inapplicable(name, "window wider than the whole curve", params)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = gap[sel] / offsets[sel] ** 2
        a = float(np.min(ratios))
        if a <= 0.0:
            return _inapplicable(name, "curve has no quadratic growth at the window", params)
        bad = np.abs(dist.sbar - rate) > eps_v
        bound = v / (a * eps_v * eps_v)
    else:
        raise ValueError(f"unknown form {form!r}")
    emp = fsum(dist.pi[bad].tolist())
    slack = bound - emp
    return BoundReport(
        name=name,
        applicable=True,
        passed=bool(slack >= -SLACK_TOL),
        vacuous=bool(bound >= 1.0),
        worst_slack=float(slack),
        rows=(("all", float(emp), float(bound), float(slack)),),
        params=params,
    )


def _support_slope(curve: MinPowerCurve, rate: float) -> float:
    xs = [vx[0] for vx in curve.vertices]
    for i in range(1, len(xs) - 1):
        if abs(rate - xs[i]) <= 1e-12:
            return 0.5 * (curve.slopes[i - 1] + curve.slopes[i])
    seg = int(np.searchsorted(xs, rate) - 1)
    seg = min(max(seg, 0), len(curve.slopes) - 1)
    return curve.slopes[seg]


def service_cost_sandwich(
    dist: StationaryDist,
    policy,
    spec: ModelSpec,
    curve: MinPowerCurve,
    p_bar: float,
    rate_ref: float | None = None,
) -> SandwichReport:
    """Check c(rate) <= E_pi c(sbar(Q)) <= P_bar within 1e-9."""
    rate = spec.arrival.lam if rate_ref is None else rate_ref
    cost_sbar = [curve.value(float(s)) for s in dist.sbar]
    e_cost = fsum((dist.pi * np.asarray(cost_sbar)).tolist())
    c_rate = curve.value(rate)
    return SandwichReport(
        e_cost_sbar=e_cost,
        p_bar=p_bar,
        c_rate=c_rate,
        upper_ok=bool(e_cost <= p_bar + SLACK_TOL),
        lower_ok=bool(c_rate <= e_cost + SLACK_TOL),
    )


def export_report_csv(report: BoundReport, path, provenance: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if provenance:
            f.write(f"# {provenance}\n")
        w = csv.writer(f)
        w.writerow(["index", "empirical", "bound", "slack", "vacuous"])
        for idx, emp, bnd, slack in report.rows:
            w.writerow([idx, repr(emp), repr(bnd), repr(slack), report.vacuous])
