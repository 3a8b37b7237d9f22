"""Average-cost solver for the power-weighted queueing control problem.

The relaxed objective charges q + beta * P(h, s) per slot (admission
variants subtract theta * admitted). Because the fade is IID, the
fade-averaged relative value w(q) satisfies a reduced optimality equation
over queue states only, and the policy-evaluation step of Howard's
iteration is a sparse linear solve on the exact queue kernel from the
chain module. Relative value iteration on the same reduced equation is
kept as an alternate method and as the convergence certificate: at the
returned solution the Bellman residual span is reported and must not
exceed the requested tolerance.

Truncation clamps overflow into the top state; honesty is enforced by the
sweep, which escalates the truncation level until the stationary mass at
the boundary falls below a ceiling.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import fsum

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import chain as chain_mod
from .mincost import MinPowerCurve, min_power_curve, min_power_curve_real
from .model import Lattice, ModelSpec, lattice, thinned_spec

TIE_EPS = 1e-12
HOWARD_MAX_ITERS = 500
RVI_MAX_ITERS = 500_000
_EPS = float(np.finfo(float).eps)


class SolverError(RuntimeError):
    def __init__(self, msg: str, **diag):
        super().__init__(msg)
        self.diag = diag


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic stationary policy on the truncated lattice.

    serve[q, h] is the batch size in lattice steps, at most min(q, S_max).
    admit[q, r, h], when present, is the admitted packet count out of r
    offered. delta converts lattice steps to packets.
    """

    serve: np.ndarray
    q_max: int
    delta: float = 1.0
    admit: np.ndarray | None = None

    def __post_init__(self):
        self.serve.setflags(write=False)
        if self.admit is not None:
            self.admit.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.q_max + 1


@dataclass(frozen=True)
class MonotoneReport:
    ok: bool
    violations: tuple[tuple[int, int], ...]  # (fade index, q) pairs


@dataclass(frozen=True, eq=False)
class MdpSolution:
    g_star: float  # exact average cost of the returned policy
    bias: np.ndarray  # fade-averaged relative values, bias[0] = 0
    policy: Policy
    beta: float
    theta: float | None
    residual: float  # Bellman residual span at the solution
    iterations: int
    method: str
    boundary_repair: bool = False  # isotonic extraction changed any action


@dataclass(frozen=True)
class TradeoffPoint:
    beta: float
    theta: float | None
    p_bar: float
    q_bar: float
    s_bar: float
    a_bar: float | None
    v: float
    tail_mass: float
    q_max: float  # packets
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class TradeoffCurve:
    points: tuple[TradeoffPoint, ...]
    rate: float  # arrival rate (admission sweeps: target admitted rate)
    mode: str
    policies: tuple[Policy, ...] = field(repr=False, default=())


def serve_cap_policy(spec: ModelSpec, cap_packets: float, q_max_packets: float) -> Policy:
    """Serve min(queue, cap) in every fade state."""
    lat = lattice(spec)
    cap_u = int(round(cap_packets / lat.delta))
    n = int(round(q_max_packets / lat.delta)) + 1
    q = np.arange(n, dtype=np.int64)
    serve = np.minimum(q, min(cap_u, lat.s_units))[:, None].repeat(
        len(lat.fade_probs), axis=1
    )
    return Policy(serve=serve, q_max=n - 1, delta=lat.delta)


def check_monotone(policy: Policy) -> MonotoneReport:
    """Per-fade check that the batch size never decreases with the queue."""
    bad: list[tuple[int, int]] = []
    for h in range(policy.serve.shape[1]):
        col = policy.serve[:, h]
        drops = np.flatnonzero(np.diff(col.astype(np.int64)) < 0)
        bad.extend((h, int(q) + 1) for q in drops)
    return MonotoneReport(ok=not bad, violations=tuple(bad))


# ---------------------------------------------------------------------------
# Bellman machinery on the reduced (queue-only) equation


def _extend(w: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return w
    return np.concatenate([w, np.full(pad, w[-1])])


def _arrival_push(w: np.ndarray, lat: Lattice) -> np.ndarray:
    """u(j) = E_A w(min(j + A, q_max)) over lattice arrival offsets."""
    n = len(w)
    ext = _extend(w, int(lat.arr_offsets[-1]))
    u = np.zeros(n)
    for off, pa in zip(lat.arr_offsets, lat.arr_probs):
        u += pa * ext[off : off + n]
    return u


def _admission_push(
    w: np.ndarray, lat: Lattice, theta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Expected post-decision value when up to R offered packets may be kept.

    Returns (Phi, stacked candidate values) where Phi(j) = E_R min_{a<=R}
    [-theta a + w(min(j + a*spp, q_max))].
    """
    n = len(w)
    spp = lat.steps_per_packet
    a_max = len(lat.arr_probs) - 1
    ext = _extend(w, a_max * spp)
    vals = np.empty((a_max + 1, n))
    for a in range(a_max + 1):
        vals[a] = -theta * a + ext[a * spp : a * spp + n]
    best = vals[0].copy()
    phi = lat.arr_probs[0] * best
    for a in range(1, a_max + 1):
        best = np.minimum(best, vals[a])
        phi += lat.arr_probs[a] * best
    return phi, vals


def _greedy_serve(
    lat: Lattice, beta: float, u: np.ndarray, serve_cur: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    """Smallest-batch argmin of beta P(h, s) + u(q - s) per (q, fade).

    When serve_cur is given, the current action is kept wherever it is
    within a relative TIE_EPS of the best value, which prevents cycling
    between equally good policies.
    """
    n = len(u)
    n_h = len(lat.fade_probs)
    serve = np.zeros((n, n_h), dtype=np.int64)
    best = np.empty((n, n_h))
    for h in range(n_h):
        best[:, h] = beta * lat.power[h, 0] + u
    for s in range(1, lat.s_units + 1):
        if s >= n:
            break
        tail_u = u[: n - s]
        for h in range(n_h):
            cand = beta * lat.power[h, s] + tail_u
            view_b = best[s:, h]
            view_s = serve[s:, h]
            better = cand < view_b
            view_b[better] = cand[better]
            view_s[better] = s
    if serve_cur is not None:
        q = np.arange(n)
        for h in range(n_h):
            cur = serve_cur[:, h]
            val_cur = beta * lat.power[h][cur] + u[q - cur]
            keep = val_cur <= best[:, h] + TIE_EPS * (1.0 + np.abs(best[:, h]))
            serve[keep, h] = cur[keep]
    return serve, best


def _greedy_admit(
    lat: Lattice,
    theta: float,
    w: np.ndarray,
    serve: np.ndarray,
    admit_cur: np.ndarray | None,
) -> np.ndarray:
    """Smallest-count argmin of -theta a + w(post + a) for every offer r."""
    n = len(w)
    spp = lat.steps_per_packet
    a_max = len(lat.arr_probs) - 1
    n_h = serve.shape[1]
    ext = _extend(w, a_max * spp)
    admit = np.zeros((n, a_max + 1, n_h), dtype=np.int64)
    q = np.arange(n)
    for h in range(n_h):
        post = q - serve[:, h]
        vals = np.empty((a_max + 1, n))
        for a in range(a_max + 1):
            vals[a] = -theta * a + ext[post + a * spp]
        best_val = vals[0].copy()
        best_a = np.zeros(n, dtype=np.int64)
        for r in range(1, a_max + 1):
            better = vals[r] < best_val
            best_val[better] = vals[r][better]
            best_a[better] = r
            admit[:, r, h] = best_a
        if admit_cur is not None:
            for r in range(a_max + 1):
                cur = admit_cur[:, r, h]
                val_cur = -theta * cur + ext[post + cur * spp]
                ref = np.take_along_axis(vals, admit[:, r, h][None, :], axis=0)[0]
                keep = val_cur <= ref + TIE_EPS * (1.0 + np.abs(ref))
                admit[keep, r, h] = cur[keep]
    return admit


def _stage_cost(
    spec: ModelSpec, lat: Lattice, policy: Policy, beta: float, theta: float
) -> np.ndarray:
    n = policy.n_states
    power = np.zeros(n)
    for h in range(len(lat.fade_probs)):
        power += lat.fade_probs[h] * lat.power[h][policy.serve[:, h]]
    c = np.arange(n, dtype=float) * lat.delta + beta * power
    if policy.admit is not None and theta != 0.0:
        c = c - theta * chain_mod.abar_profile(spec, policy)
    return c


def _bias_solve(mat: sp.csr_matrix, c: np.ndarray, g: float, mask: np.ndarray) -> np.ndarray:
    """Relative values of a fixed policy: solve (I - P) w = c - g with one
    recurrent state's value pinned to zero. Iterative refinement keeps the
    Bellman residual near the floating-point floor even for slow-mixing
    chains, whose Poisson equation is badly conditioned."""
    n = mat.shape[0]
    a = (sp.identity(n, format="csr") - mat).tolil()
    r0 = int(np.argmax(mask))  # pin one recurrent state's value
    a[r0, :] = 0.0
    a[r0, r0] = 1.0
    a = a.tocsc()
    rhs = c - g
    rhs[r0] = 0.0
    lu = splu(a)
    w = lu.solve(rhs)
    for _ in range(3):
        r = rhs - a @ w
        w = w + lu.solve(r)
    return w - w[0]


def _bellman_apply(
    spec: ModelSpec,
    lat: Lattice,
    w: np.ndarray,
    beta: float,
    theta: float | None,
    serve_cur: np.ndarray | None = None,
    admit_cur: np.ndarray | None = None,
):
    """One Bellman backup; returns (Tw, serve, admit)."""
    n = len(w)
    if theta is None:
        u = _arrival_push(w, lat)
        serve, best = _greedy_serve(lat, beta, u, serve_cur)
        admit = None
    else:
        phi, _ = _admission_push(w, lat, theta)
        serve, best = _greedy_serve(lat, beta, phi, serve_cur)
        admit = _greedy_admit(lat, theta, w, serve, admit_cur)
    tw = np.arange(n, dtype=float) * lat.delta + best @ lat.fade_probs
    return tw, serve, admit


def _isotonic_serve(lat: Lattice, beta: float, u: np.ndarray, serve: np.ndarray) -> np.ndarray:
    """Smallest monotone batch table that is greedy within the monotone
    constraint.

    Clamping overflow into the top state flattens the relative values
    there, so the unconstrained greedy can briefly serve less at higher
    queues near the truncation boundary. Below that zone the scan
    reproduces the unconstrained greedy; inside it the batch floor from
    the previous state is enforced and the best feasible batch at or
    above the floor is taken.
    """
    n = len(u)
    out = serve.copy()
    for h in range(serve.shape[1]):
        col = out[:, h]
        drops = np.flatnonzero(np.diff(col) < 0)
        if len(drops) == 0:
            continue
        start = int(drops[0])  # first q whose successor violates the floor
        floor = int(col[start])
        for q in range(start + 1, n):
            cap = min(q, lat.s_units)
            lo = min(floor, cap)
            ss = np.arange(lo, cap + 1)
            vals = beta * lat.power[h, ss] + u[q - ss]
            s = int(ss[int(np.argmin(vals))])
            col[q] = s
            floor = s
    return out


def _suffix_min(col: np.ndarray) -> np.ndarray:
    return np.minimum.accumulate(col[::-1])[::-1].copy()


def _extract(
    spec: ModelSpec,
    lat: Lattice,
    w: np.ndarray,
    beta: float,
    theta: float | None,
) -> tuple[Policy, bool, float]:
    """Greedy policy from a converged bias (ties to the smallest batch and
    admitted count), made monotone when the truncation boundary dents it.

    Clamping overflow flattens the relative values at the top, so the
    unconstrained greedy can serve less at higher queues there. Per fade,
    two monotone projections exist: raise the later batches (keeps the
    stable bulk pattern) or lower the earlier ones (keeps the
    saturate-the-buffer pattern that wins when the capped queue cost beats
    the power bill). All per-fade combinations are evaluated exactly and
    the cheapest is returned.

    Returns (policy, repaired, exact average cost).
    """
    n = len(w)
    if theta is None:
        post_value = _arrival_push(w, lat)
    else:
        post_value, _ = _admission_push(w, lat, theta)
    serve, _ = _greedy_serve(lat, beta, post_value, None)

    def finish(table: np.ndarray) -> tuple[Policy, float]:
        admit = None if theta is None else _greedy_admit(lat, theta, w, table, None)
        pol = Policy(serve=table, q_max=n - 1, delta=lat.delta, admit=admit)
        return pol, _exact_average_cost(spec, pol, beta, theta)

    bad_fades = [
        h for h in range(serve.shape[1]) if np.any(np.diff(serve[:, h]) < 0)
    ]
    if not bad_fades:
        pol, g = finish(serve)
        return pol, False, g
    up = _isotonic_serve(lat, beta, post_value, serve)
    best_pol, best_g = None, np.inf
    for picks in range(1 << min(len(bad_fades), 8)):
        table = serve.copy()
        for i, h in enumerate(bad_fades):
            if picks >> i & 1:
                table[:, h] = _suffix_min(serve[:, h])
            else:
                table[:, h] = up[:, h]
        pol, g = finish(table)
        if g < best_g:
            best_pol, best_g = pol, g
    return best_pol, True, best_g


def _span(x: np.ndarray) -> float:
    return float(np.max(x) - np.min(x))


def _effective_tol(tol: float, w: np.ndarray, g: float) -> float:
    """Requested span tolerance floored at the floating-point resolution of
    the value scale; with large beta the relative values span many orders
    of magnitude and an absolute span below eps * scale is unattainable."""
    scale = max(1.0, abs(g), _span(w))
    return max(tol, 64.0 * _EPS * scale)


def _initial_policy(spec: ModelSpec, lat: Lattice, n: int, init: Policy | None) -> Policy:
    if init is not None:
        old = init.n_states
        serve = np.empty((n, init.serve.shape[1]), dtype=np.int64)
        serve[: min(old, n)] = init.serve[: min(old, n)]
        if n > old:
            serve[old:] = init.serve[-1]
        admit = None
        if init.admit is not None:
            admit = np.empty((n,) + init.admit.shape[1:], dtype=np.int64)
            admit[: min(old, n)] = init.admit[: min(old, n)]
            if n > old:
                admit[old:] = init.admit[-1]
        return Policy(serve=serve, q_max=n - 1, delta=lat.delta, admit=admit)
    q = np.arange(n, dtype=np.int64)
    serve = np.minimum(q, lat.s_units)[:, None].repeat(len(lat.fade_probs), axis=1)
    admit = None
    if spec.admission:
        a_max = len(lat.arr_probs) - 1
        admit = np.zeros((n, a_max + 1, len(lat.fade_probs)), dtype=np.int64)
        admit[:] = np.arange(a_max + 1, dtype=np.int64)[None, :, None]
    return Policy(serve=serve, q_max=n - 1, delta=lat.delta, admit=admit)


def _solve(
    spec: ModelSpec,
    beta: float,
    theta: float | None,
    q_max_packets: float,
    tol: float,
    method: str,
    init: Policy | None,
) -> MdpSolution:
    if beta < 0:
        raise SolverError(f"beta must be nonnegative, got {beta}")
    lat = lattice(spec)
    rate_cap = spec.arrival.lam if theta is None else None
    if rate_cap is not None and not rate_cap < spec.s_max:
        raise SolverError(
            f"arrival rate {rate_cap} must be below S_max {spec.s_max}"
        )
    n = int(round(q_max_packets / lat.delta)) + 1
    if n < 2:
        raise SolverError("truncation level leaves no room for a queue")

    if method == "howard":
        return _solve_howard(spec, lat, beta, theta, n, tol, init)
    if method == "rvi":
        return _solve_rvi(spec, lat, beta, theta, n, tol, init)
    raise ValueError(f"unknown method {method!r}")


STALL_WINDOW = 12


def _solve_howard(spec, lat, beta, theta, n, tol, init) -> MdpSolution:
    policy = _initial_policy(spec, lat, n, init)
    g = np.inf
    best_g = np.inf
    stall = 0
    for it in range(1, HOWARD_MAX_ITERS + 1):
        try:
            kernel = chain_mod.queue_kernel(spec, policy)
            mask = chain_mod._recurrent_class(kernel.matrix)
            pi = chain_mod._solve_restricted(kernel.matrix, mask)
        except chain_mod.ChainError:
            # an intermediate policy split the chain (possible only when
            # arrivals cannot overshoot the service cap); value iteration
            # does not evaluate intermediate policies, so switch to it
            return _solve_rvi(spec, lat, beta, theta, n, tol, init, base_iters=it)
        c = _stage_cost(spec, lat, policy, beta, theta or 0.0)
        g = fsum((pi * c).tolist())
        w = _bias_solve(kernel.matrix, c, g, mask)
        _, serve, admit = _bellman_apply(
            spec, lat, w, beta, theta, policy.serve, policy.admit
        )
        same_serve = np.array_equal(serve, policy.serve)
        same_admit = policy.admit is None or np.array_equal(admit, policy.admit)
        # when the buffer saturates (queue cost capped at the truncation
        # ceiling beats the power bill), many policies tie in average cost
        # and bias-only improvements can cycle; a stalled gain is then as
        # converged as the gain can get and extraction settles the rest
        if g >= best_g - 1e-12 * (1.0 + abs(best_g)):
            stall += 1
        else:
            best_g, stall = g, 0
        if (same_serve and same_admit) or stall >= STALL_WINDOW:
            tw, _, _ = _bellman_apply(spec, lat, w, beta, theta)
            residual = _span(tw - w - g)
            if residual > _effective_tol(tol, w, g) and stall < STALL_WINDOW:
                return _solve_rvi(spec, lat, beta, theta, n, tol, init, w0=w, base_iters=it)
            final, repaired, g_star = _extract(spec, lat, w, beta, theta)
            return MdpSolution(
                g_star, w, final, beta, theta, residual, it, "howard", repaired
            )
        policy = Policy(serve=serve, q_max=n - 1, delta=lat.delta, admit=admit)
    raise SolverError(
        "policy iteration did not settle", iterations=HOWARD_MAX_ITERS, g=g
    )


def _exact_average_cost(spec, policy, beta, theta) -> float:
    kernel = chain_mod.queue_kernel(spec, policy)
    dist = chain_mod.stationary_dist(kernel, policy, spec)
    avgs = chain_mod.averages(dist, policy, spec)
    g = avgs.q_bar + beta * avgs.p_bar
    if theta is not None and avgs.a_bar is not None:
        g -= theta * avgs.a_bar
    return g


def _solve_rvi(
    spec, lat, beta, theta, n, tol, init, w0=None, base_iters: int = 0
) -> MdpSolution:
    w = np.zeros(n) if w0 is None else w0.copy()
    span = np.inf
    for it in range(1, RVI_MAX_ITERS + 1):
        tw, _, _ = _bellman_apply(spec, lat, w, beta, theta)
        nxt = tw - tw[0]
        span = _span(nxt - w)
        w = nxt
        if span <= _effective_tol(tol, w, float(tw[0])):
            policy, repaired, g = _extract(spec, lat, w, beta, theta)
            method = "rvi" if base_iters == 0 else "howard+rvi"
            return MdpSolution(
                g, w, policy, beta, theta, span, base_iters + it, method, repaired
            )
    raise SolverError("relative value iteration did not converge", span=span)


def solve_mdp(
    spec: ModelSpec,
    beta: float,
    q_max: float,
    tol: float = 1e-9,
    method: str = "howard",
    init: Policy | None = None,
) -> MdpSolution:
    """Optimal service policy for single-stage cost q + beta P(h, s).

    q_max is the truncation level in packets; overflow mass is clamped
    into the boundary state. The returned g_star is the chain-exact
    average cost of the extracted policy and the residual field certifies
    the Bellman fixed point.
    """
    if spec.admission:
        raise SolverError("spec has admission control; use solve_mdp_u")
    return _solve(spec, beta, None, q_max, tol, method, init)


def solve_mdp_u(
    spec: ModelSpec,
    beta: float,
    theta: float,
    q_max: float,
    tol: float = 1e-9,
    method: str = "howard",
    init: Policy | None = None,
) -> MdpSolution:
    """Joint service/admission policy for cost q + beta P(h, s) - theta a."""
    if not spec.admission:
        raise SolverError("spec lacks admission control; use solve_mdp")
    if theta < 0:
        raise SolverError(f"theta must be nonnegative, got {theta}")
    return _solve(spec, beta, theta, q_max, tol, method, init)


# ---------------------------------------------------------------------------
# Tradeoff sweeps


def evaluate_policy(spec: ModelSpec, policy: Policy):
    """Chain-exact (kernel, stationary law, averages) for a policy."""
    kernel = chain_mod.queue_kernel(spec, policy)
    dist = chain_mod.stationary_dist(kernel, policy, spec)
    return kernel, dist, chain_mod.averages(dist, policy, spec)


def default_beta_grid(lo: float = 1e-1, hi: float = 1e4, per_decade: int = 40) -> np.ndarray:
    count = int(round(per_decade * np.log10(hi / lo))) + 1
    return np.logspace(np.log10(lo), np.log10(hi), count)


def pareto_filter(points: list[TradeoffPoint]) -> list[TradeoffPoint]:
    """Drop points dominated in (p_bar, q_bar)."""
    kept = []
    for i, pt in enumerate(points):
        dominated = False
        for j, other in enumerate(points):
            if j == i:
                continue
            if (
                other.p_bar <= pt.p_bar
                and other.q_bar <= pt.q_bar
                and (other.p_bar < pt.p_bar or other.q_bar < pt.q_bar)
            ):
                dominated = True
                break
        if not dominated:
            kept.append(pt)
    kept.sort(key=lambda p: p.beta)
    return kept


def _reference_curve(spec: ModelSpec) -> MinPowerCurve:
    return min_power_curve_real(spec) if spec.is_grid else min_power_curve(spec)


def _saturation_floor(beta, theta, curve, rate_ref, q_start) -> float:
    """Truncation level below which the buffer-saturation policy would win
    the relaxed objective outright: the queue cost is capped at the
    truncation ceiling while a stabilising policy pays about
    beta * curve(rate) per slot. Starting above the floor skips the
    degenerate solves; the tail-mass check still verifies the choice.

    Admission control caps the queue cost by dropping instead of
    saturating, so no floor is needed there.
    """
    if theta is not None:
        return q_start
    need = 1.2 * beta * curve.value(rate_ref) + 64.0
    out = q_start
    while out < need:
        out *= 2.0
    return out


def _sweep_one(
    spec, beta, theta, q_start, tol, tail_ceiling, q_max_cap, curve, rate_ref, init
):
    """Solve one sweep point with truncation escalation; returns
    (point, solution, dist)."""
    q_max = min(_saturation_floor(beta, theta, curve, rate_ref, q_start), q_max_cap)
    flags: list[str] = []
    while True:
        if theta is None:
            sol = solve_mdp(spec, beta, q_max, tol=tol, init=init)
        else:
            sol = solve_mdp_u(spec, beta, theta, q_max, tol=tol, init=init)
        init = sol.policy
        _, dist, avgs = evaluate_policy(spec, sol.policy)
        if dist.tail_mass < tail_ceiling:
            break
        if q_max * 2 > q_max_cap:
            flags.append("tail_ceiling_exceeded")
            break
        q_max *= 2
    v = avgs.p_bar - curve.value(rate_ref)
    point = TradeoffPoint(
        beta=beta,
        theta=theta,
        p_bar=avgs.p_bar,
        q_bar=avgs.q_bar,
        s_bar=avgs.s_bar,
        a_bar=avgs.a_bar,
        v=v,
        tail_mass=dist.tail_mass,
        q_max=q_max,
        flags=tuple(flags),
    )
    return point, sol, dist


def sweep_beta(
    spec: ModelSpec,
    beta_grid,
    q_max: float | None = None,
    tol: float = 1e-9,
    tail_ceiling: float = 1e-9,
    q_max_cap: float = 131072.0,
    workers: int = 1,
) -> TradeoffCurve:
    """Trace the tradeoff curve by sweeping the power multiplier.

    Points are solved in ascending beta with warm starts, evaluated
    exactly through the chain module, and Pareto-filtered in
    (p_bar, q_bar). Solver failures flag the point instead of aborting
    the sweep.
    """
    betas = sorted(float(b) for b in beta_grid)
    lam = spec.arrival.lam
    if not lam < spec.s_max:
        raise SolverError(f"arrival rate {lam} must be below S_max {spec.s_max}")
    curve = _reference_curve(spec)
    q_start = q_max if q_max is not None else max(64.0, 10.0 * spec.arrival.a_max)
    if workers > 1:
        jobs = [
            (spec, b, None, q_start, tol, tail_ceiling, q_max_cap, curve, lam, None)
            for b in betas
        ]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_one_star, jobs))
    else:
        results = []
        init = None
        q_carry = q_start
        for b in betas:
            try:
                point, sol, _ = _sweep_one(
                    spec, b, None, q_carry, tol, tail_ceiling, q_max_cap, curve, lam, init
                )
                init = sol.policy
                q_carry = max(q_carry, point.q_max)
                results.append((point, sol))
            except SolverError as err:
                results.append(
                    (
                        TradeoffPoint(
                            beta=b,
                            theta=None,
                            p_bar=float("nan"),
                            q_bar=float("nan"),
                            s_bar=float("nan"),
                            a_bar=None,
                            v=float("nan"),
                            tail_mass=float("nan"),
                            q_max=q_carry,
                            flags=(f"solver_error:{err}",),
                        ),
                        None,
                    )
                )
    valid = [(pt, sol) for pt, sol in results if not _failed(pt)]
    flagged = [pt for pt, _ in results if _failed(pt)]
    kept = pareto_filter([pt for pt, _ in valid])
    kept_set = {id(pt) for pt in kept}
    policies = tuple(sol.policy for pt, sol in valid if id(pt) in kept_set)
    return TradeoffCurve(
        points=tuple(kept) + tuple(flagged),
        rate=lam,
        mode=spec.mode.kind,
        policies=policies,
    )


def _sweep_one_star(args):
    point, sol, _ = _sweep_one(*args)
    return point, sol


def _failed(pt: TradeoffPoint) -> bool:
    return any(f.startswith("solver_error") for f in pt.flags) or np.isnan(pt.p_bar)


def calibrate_theta(
    spec: ModelSpec,
    beta: float,
    rho: float,
    q_max: float,
    tol: float = 1e-9,
    abar_tol: float = 1e-6,
    init: Policy | None = None,
):
    """Smallest admission reward theta whose optimal policy admits at
    least rho * lam on average (chain-exact), found by bisection."""
    target = rho * spec.arrival.lam

    def probe(theta, init_p):
        sol = solve_mdp_u(spec, beta, theta, q_max, tol=tol, init=init_p)
        _, dist, avgs = evaluate_policy(spec, sol.policy)
        return sol, dist, avgs

    sol, dist, avgs = probe(0.0, init)
    if avgs.a_bar is not None and avgs.a_bar >= target:
        return 0.0, sol, dist, avgs
    hi = 1.0
    lo = 0.0
    sol_hi = None
    for _ in range(80):
        sol_hi, dist_hi, avgs_hi = probe(hi, sol.policy)
        if avgs_hi.a_bar >= target:
            break
        lo = hi
        hi *= 2.0
    else:
        raise SolverError(f"no admission reward up to {hi} reaches {target}")
    # keep the invariant a_bar(hi) >= target while shrinking [lo, hi]
    for _ in range(200):
        if avgs_hi.a_bar - target <= abar_tol or hi - lo <= 1e-12 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        sol_mid, dist_mid, avgs_mid = probe(mid, sol_hi.policy)
        if avgs_mid.a_bar >= target:
            hi, sol_hi, dist_hi, avgs_hi = mid, sol_mid, dist_mid, avgs_mid
        else:
            lo = mid
    return hi, sol_hi, dist_hi, avgs_hi


def sweep_u(
    spec: ModelSpec,
    rho: float,
    beta_grid,
    q_max: float | None = None,
    tol: float = 1e-9,
    tail_ceiling: float = 1e-9,
    q_max_cap: float = 131072.0,
) -> TradeoffCurve:
    """Admission-control sweep: per beta, calibrate the admission reward
    so the admitted rate meets rho * lam, then record the chain-exact
    point. The power gap v is measured against the curve at rho * lam."""
    if not spec.admission:
        raise SolverError("sweep_u requires an admission-mode spec")
    target = rho * spec.arrival.lam
    if not target < spec.s_max:
        raise SolverError(f"target rate {target} must be below S_max {spec.s_max}")
    curve = _reference_curve(spec)
    betas = sorted(float(b) for b in beta_grid)
    q_start = q_max if q_max is not None else max(64.0, 10.0 * spec.arrival.a_max)
    points: list[TradeoffPoint] = []
    policies: list[Policy] = []
    flagged: list[TradeoffPoint] = []
    init = None
    q_carry = q_start
    for b in betas:
        try:
            theta, sol, dist, avgs = calibrate_theta(
                spec, b, rho, q_carry, tol=tol, init=init
            )
            flags: list[str] = []
            while dist.tail_mass >= tail_ceiling:
                if q_carry * 2 > q_max_cap:
                    flags.append("tail_ceiling_exceeded")
                    break
                q_carry *= 2
                theta, sol, dist, avgs = calibrate_theta(
                    spec, b, rho, q_carry, tol=tol, init=sol.policy
                )
            init = sol.policy
            points.append(
                TradeoffPoint(
                    beta=b,
                    theta=theta,
                    p_bar=avgs.p_bar,
                    q_bar=avgs.q_bar,
                    s_bar=avgs.s_bar,
                    a_bar=avgs.a_bar,
                    v=avgs.p_bar - curve.value(target),
                    tail_mass=dist.tail_mass,
                    q_max=q_carry,
                    flags=tuple(flags),
                )
            )
            policies.append(sol.policy)
        except SolverError as err:
            flagged.append(
                TradeoffPoint(
                    beta=b,
                    theta=None,
                    p_bar=float("nan"),
                    q_bar=float("nan"),
                    s_bar=float("nan"),
                    a_bar=None,
                    v=float("nan"),
                    tail_mass=float("nan"),
                    q_max=q_carry,
                    flags=(f"theta_bisection_failed:{err}",),
                )
            )
    kept = pareto_filter(points)
    kept_ids = {id(pt) for pt in kept}
    kept_policies = tuple(
        pol for pt, pol in zip(points, policies) if id(pt) in kept_ids
    )
    return TradeoffCurve(
        points=tuple(kept) + tuple(flagged),
        rate=target,
        mode=spec.mode.kind,
        policies=kept_policies,
    )


def probabilistic_admission_baseline(
    spec: ModelSpec, rho: float, beta: float, q_max: float = 512.0, tol: float = 1e-9
) -> TradeoffPoint:
    """Reference policy that admits each offered packet with probability
    rho and then serves optimally for the thinned arrival stream. Its
    admitted rate is exactly rho * lam."""
    thin = thinned_spec(spec, rho)
    sol = solve_mdp(thin, beta, q_max, tol=tol)
    _, dist, avgs = evaluate_policy(thin, sol.policy)
    curve = _reference_curve(spec)
    target = rho * spec.arrival.lam
    return TradeoffPoint(
        beta=beta,
        theta=None,
        p_bar=avgs.p_bar,
        q_bar=avgs.q_bar,
        s_bar=avgs.s_bar,
        a_bar=target,
        v=avgs.p_bar - curve.value(target),
        tail_mass=dist.tail_mass,
        q_max=q_max,
        flags=("baseline",),
    )


def export_curve_csv(curve: TradeoffCurve, path, provenance: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if provenance:
            f.write(f"# {provenance}\n")
        w = csv.writer(f)
        w.writerow(
            ["beta", "theta", "p_bar", "q_bar", "s_bar", "a_bar", "v", "tail_mass", "q_max", "flags"]
        )
        for pt in curve.points:
            w.writerow(
                [
                    repr(pt.beta),
                    "" if pt.theta is None else repr(pt.theta),
                    repr(pt.p_bar),
                    repr(pt.q_bar),
                    repr(pt.s_bar),
                    "" if pt.a_bar is None else repr(pt.a_bar),
                    repr(pt.v),
                    repr(pt.tail_mass),
                    repr(pt.q_max),
                    ";".join(pt.flags),
                ]
            )
