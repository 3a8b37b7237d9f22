"""Seeded Monte Carlo simulation of the slotted queue under a policy.

The generator is Philox4x64-10 as shipped by numpy; golden-trace digests
pin both the algorithm and the draw order, so any change to either shows
up as a digest mismatch. Within a slot the service batch leaves the queue
first and that slot's admitted packets join afterwards; per-packet delay
is measured FIFO from the admitting slot to the serving slot.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, lattice

N_BATCHES = 20
TRACE_VERSION = "philox-v1"


@dataclass(frozen=True)
class SimEstimates:
    q_bar: float
    p_bar: float
    s_bar: float
    a_bar: float | None
    se_q: float
    se_p: float
    se_s: float
    se_a: float | None
    delay_direct: float  # mean slots in queue, by packet tagging
    se_delay: float
    horizon: int
    burn_in: int
    seed: int


def _sampler(spec: ModelSpec, seed: int, n: int):
    rng = np.random.Generator(np.random.Philox(key=seed))
    lat = lattice(spec)
    arr_cdf = np.cumsum(lat.arr_probs)
    fade_cdf = np.cumsum(lat.fade_probs)
    arrivals = np.searchsorted(arr_cdf, rng.random(n), side="right")
    fades = np.searchsorted(fade_cdf, rng.random(n), side="right")
    np.clip(arrivals, 0, len(arr_cdf) - 1, out=arrivals)
    np.clip(fades, 0, len(fade_cdf) - 1, out=fades)
    return arrivals, fades, lat


def _trace(spec: ModelSpec, policy, seed: int, n_slots: int):
    """Run the slot recursion; returns integer arrays (Q, H, A, S).

    Q is in lattice steps and is the queue after each slot completes; A
    and S are packets admitted / lattice steps served in the slot. States
    above the policy table are served like the top table row.
    """
    offered, fades, lat = _sampler(spec, seed, n_slots)
    spp = lat.steps_per_packet
    serve = policy.serve.tolist()
    admit = policy.admit.tolist() if policy.admit is not None else None
    q_top = policy.q_max
    offered_l = offered.tolist()
    fades_l = fades.tolist()

    q = 0
    qs = np.empty(n_slots, dtype=np.int64)
    ss = np.empty(n_slots, dtype=np.int64)
    ads = np.empty(n_slots, dtype=np.int64)
    for m in range(n_slots):
        h = fades_l[m]
        s = serve[q if q <= q_top else q_top][h]
        r = offered_l[m]
        if admit is None:
            a = r
        else:
            a = admit[q if q <= q_top else q_top][r][h]
        q = q - s + a * spp
        qs[m] = q
        ss[m] = s
        ads[m] = a
    return qs, fades, ads, ss, lat


def simulate(
    spec: ModelSpec,
    policy,
    horizon: int,
    burn_in: int,
    seed: int,
) -> SimEstimates:
    """Time-average estimates over (burn_in, horizon] with batch-means
    standard errors (20 equal batches) and directly tagged FIFO delay."""
    if horizon <= 2 * burn_in:
        raise ValueError("horizon must exceed twice the burn-in")
    qs, fades, ads, ss, lat = _trace(spec, policy, seed, horizon)
    window = slice(burn_in, horizon)
    n_eff = horizon - burn_in

    q_path = qs[window].astype(float) * lat.delta
    power_by_fade = lat.power[fades[window], ss[window]]
    s_path = ss[window].astype(float) * lat.delta
    a_path = ads[window].astype(float)

    def batch_stats(x: np.ndarray) -> tuple[float, float]:
        mean = float(x.mean())
        usable = (len(x) // N_BATCHES) * N_BATCHES
        means = x[:usable].reshape(N_BATCHES, -1).mean(axis=1)
        se = float(means.std(ddof=1) / np.sqrt(N_BATCHES))
        return mean, se

    q_bar, se_q = batch_stats(q_path)
    p_bar, se_p = batch_stats(power_by_fade)
    s_bar, se_s = batch_stats(s_path)
    if policy.admit is not None:
        a_bar, se_a = batch_stats(a_path)
    else:
        a_bar, se_a = None, None

    delays = _tag_delays(qs, ads, ss, lat.steps_per_packet, burn_in)
    if len(delays):
        d = np.asarray(delays, dtype=float)
        delay_direct = float(d.mean())
        usable = (len(d) // N_BATCHES) * N_BATCHES
        if usable >= N_BATCHES:
            dm = d[:usable].reshape(N_BATCHES, -1).mean(axis=1)
            se_delay = float(dm.std(ddof=1) / np.sqrt(N_BATCHES))
        else:
            se_delay = float("nan")
    else:
        delay_direct, se_delay = 0.0, 0.0
    return SimEstimates(
        q_bar=q_bar,
        p_bar=p_bar,
        s_bar=s_bar,
        a_bar=a_bar,
        se_q=se_q,
        se_p=se_p,
        se_s=se_s,
        se_a=se_a,
        delay_direct=delay_direct,
        se_delay=se_delay,
        horizon=horizon,
        burn_in=burn_in,
        seed=seed,
    )


def _tag_delays(qs, ads, ss, spp: int, burn_in: int) -> list[int]:
    """FIFO per-packet delay in slots: serving slot minus admitting slot.

    Service removes whole packets (spp lattice steps each) in admission
    order. Only packets admitted after the burn-in and served within the
    horizon count.
    """
    fifo: deque[int] = deque()
    out: list[int] = []
    carry = 0  # lattice steps of the head packet already served
    for m in range(len(qs)):
        steps = int(ss[m]) + carry
        while steps >= spp and fifo:
            t0 = fifo.popleft()
            steps -= spp
            if t0 >= burn_in:
                out.append(m - t0)
        carry = steps if fifo else 0
        for _ in range(int(ads[m])):
            fifo.append(m)
    return out


def golden_trace(spec: ModelSpec, policy, seed: int, n_slots: int) -> str:
    """Stable digest of the (Q, H, A, S) trace for regression pinning."""
    if n_slots > 10_000:
        raise ValueError("golden traces are capped at 10000 slots")
    qs, fades, ads, ss, _ = _trace(spec, policy, seed, n_slots)
    h = hashlib.sha256()
    h.update(TRACE_VERSION.encode())
    h.update(np.int64(seed).tobytes())
    for arr in (qs, fades.astype(np.int64), ads, ss):
        h.update(arr.astype("<i8").tobytes())
    return h.hexdigest()
