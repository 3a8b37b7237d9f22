"""Shared fixtures and independent oracles used across the test suite."""

import itertools

import numpy as np
import pytest

from fadelink import chain as chain_mod
from fadelink import mdp as mdp_mod
from fadelink import model as model_mod


@pytest.fixture(scope="session")
def example_fade():
    return model_mod.fade_law([0.1, 1.0], [0.6, 0.4])


@pytest.fixture(scope="session")
def example_spec(example_fade):
    """Running example at arrival rate 0.8 packets/slot."""
    return model_mod.example_system(5, 0.16, example_fade)


@pytest.fixture(scope="session")
def example_spec_02(example_fade):
    return model_mod.example_system(5, 0.04, example_fade)


def random_small_instance(rng, a_max_hi=3, s_max_hi=2, n_fades_hi=2):
    """Random integer-mode instance with full arrival support; returns None
    when the draw is unstable (lam >= S_max)."""
    a_max = int(rng.integers(1, a_max_hi + 1))
    s_max = int(rng.integers(1, s_max_hi + 1))
    pmf = rng.dirichlet(np.ones(a_max + 1) * 0.8) + 1e-3
    pmf = pmf / pmf.sum()
    arrival = model_mod.arrivals_from_pmf(pmf)
    if not arrival.lam < s_max:
        return None
    n_h = int(rng.integers(1, n_fades_hi + 1))
    states = sorted(rng.uniform(0.1, 2.0, n_h).tolist())
    probs = rng.dirichlet(np.ones(n_h)).tolist()
    fade = model_mod.fade_law(states, probs)
    rows = []
    for _ in states:
        slopes = np.sort(rng.uniform(0.1, 8.0, s_max))
        rows.append(tuple(np.concatenate([[0.0], np.cumsum(slopes)]).tolist()))
    power = model_mod.PowerTable("table", tuple(rows))
    return model_mod.ModelSpec(arrival, fade, power, float(s_max))


def monotone_serve_tables(q_max, s_max):
    """All non-decreasing batch tables with s(q) <= min(q, s_max)."""

    def rec(q, last):
        if q > q_max:
            yield ()
            return
        for s in range(last, min(q, s_max) + 1):
            for rest in rec(q + 1, s):
                yield (s,) + rest

    return list(rec(0, 0))


def enumerate_monotone_policies(spec, q_max):
    lat = model_mod.lattice(spec)
    tables = monotone_serve_tables(q_max, lat.s_units)
    for combo in itertools.product(tables, repeat=len(lat.fade_probs)):
        serve = np.array(combo, dtype=np.int64).T.copy()
        yield mdp_mod.Policy(serve=serve, q_max=q_max, delta=1.0)


def best_monotone_average_cost(spec, beta, q_max):
    """Exhaustive oracle: minimum exact average cost over every monotone
    deterministic policy on the truncated chain."""
    best = np.inf
    for policy in enumerate_monotone_policies(spec, q_max):
        kernel = chain_mod.queue_kernel(spec, policy)
        dist = chain_mod.stationary_dist(kernel, policy, spec)
        avgs = chain_mod.averages(dist, policy, spec)
        best = min(best, avgs.q_bar + beta * avgs.p_bar)
    return best


def min_power_oracle(spec, prob_step=64):
    """Brute-force lower envelope of attainable (rate, power) pairs.

    Per fade, every pmf on the batch grid with probabilities in multiples
    of 1/prob_step is enumerated and dominated pairs are dropped; the
    fade-averaged cloud's lower convex hull is the oracle curve, returned
    as (rates, powers) hull vertices.
    """
    lat = model_mod.lattice(spec)
    per_fade = []
    for i in range(len(lat.fade_probs)):
        n_s = lat.s_units + 1
        best = {}
        for combo in _compositions(prob_step, n_s):
            w = np.asarray(combo, dtype=float) / prob_step
            rate = float(np.dot(w, np.arange(n_s) * lat.delta))
            power = float(np.dot(w, lat.power[i]))
            key = round(rate * prob_step * 8)
            if key not in best or power < best[key][1]:
                best[key] = (rate, power)
        per_fade.append(sorted(best.values()))
    combined_r = []
    combined_p = []
    grids = [np.asarray([p[0] for p in pf]) for pf in per_fade]
    vals = [np.asarray([p[1] for p in pf]) for pf in per_fade]
    idx = [np.arange(len(g)) for g in grids]
    for picks in itertools.product(*idx):
        r = sum(lat.fade_probs[i] * grids[i][k] for i, k in enumerate(picks))
        p = sum(lat.fade_probs[i] * vals[i][k] for i, k in enumerate(picks))
        combined_r.append(r)
        combined_p.append(p)
    order = np.argsort(combined_r)
    xs = np.asarray(combined_r)[order]
    ys = np.asarray(combined_p)[order]
    # collapse (nearly) equal rates to their cheapest power before hulling
    keep_x, keep_y = [xs[0]], [ys[0]]
    for x, y in zip(xs[1:], ys[1:]):
        if x - keep_x[-1] <= 1e-12:
            keep_y[-1] = min(keep_y[-1], y)
        else:
            keep_x.append(x)
            keep_y.append(y)
    hx, hy = model_mod._lower_hull(np.asarray(keep_x), np.asarray(keep_y))
    return hx, hy


def _compositions(total, parts):
    """All tuples of `parts` nonnegative ints summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


def oracle_curve_value(hx, hy, rate):
    return float(np.interp(rate, hx, hy))
