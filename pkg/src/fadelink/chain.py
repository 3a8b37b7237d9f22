"""Exact stationary analysis of the queue chain under a stationary policy.

The queue marginal is itself a Markov chain once fade (and, with admission
control, the offered batch) is integrated out. This module builds that
kernel as a sparse row-stochastic matrix over {0..q_max} lattice states,
solves for the stationary law, and computes exact averages.

Expectations are accumulated with compensated summation because the
stationary law can span many orders of magnitude near the minimum-power
regime.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import fsum
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .model import ModelSpec, lattice

if TYPE_CHECKING:  # pragma: no cover - type-only import, avoids a cycle
    from .mdp import Policy

PI_RESIDUAL_TOL = 1e-10
POWER_ITER_TOL = 1e-14  # iterate-difference target; residual lands well below 1e-12
DIRECT_SOLVE_MAX_STATES = 200_000


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransitionKernel:
    """Row-stochastic queue kernel with fade/arrival marginalised out."""

    matrix: sp.csr_matrix
    q_max: int
    delta: float


@dataclass(frozen=True)
class StationaryDist:
    pi: np.ndarray
    sbar: np.ndarray  # mean service rate per state, packets/slot
    tail_mass: float  # pi at the truncation boundary
    residual: float  # max |pi P - pi|
    recurrent: np.ndarray  # bool mask of the recurrent class


@dataclass(frozen=True)
class Averages:
    q_bar: float  # packets
    p_bar: float  # watts
    s_bar: float  # packets/slot
    a_bar: float | None  # packets/slot, admission mode only
    delay: float  # slots


def sbar_profile(spec: ModelSpec, policy: "Policy") -> np.ndarray:
    """Fade-averaged service rate per queue state, in packets per slot."""
    lat = lattice(spec)
    return (policy.serve.astype(float) * lat.delta) @ lat.fade_probs


def abar_profile(spec: ModelSpec, policy: "Policy") -> np.ndarray:
    """Fade- and offer-averaged admitted packets per state (admission mode)."""
    if policy.admit is None:
        raise ChainError("policy has no admission table")
    lat = lattice(spec)
    # admit has shape (n, a_max + 1, n_fades); offered batches are packets
    weighted = np.einsum("qrh,r,h->q", policy.admit.astype(float), lat.arr_probs, lat.fade_probs)
    return weighted


def queue_kernel(spec: ModelSpec, policy: "Policy") -> TransitionKernel:
    lat = lattice(spec)
    n = policy.q_max + 1
    if policy.serve.shape != (n, len(lat.fade_probs)):
        raise ChainError(
            f"policy table shape {policy.serve.shape} does not match "
            f"{n} states x {len(lat.fade_probs)} fades"
        )
    q = np.arange(n, dtype=np.int64)
    rows, cols, vals = [], [], []
    if policy.admit is None:
        for h in range(len(lat.fade_probs)):
            post = q - policy.serve[:, h]
            if np.any(post < 0):
                raise ChainError("policy serves more than the queue holds")
            for off, pa in zip(lat.arr_offsets, lat.arr_probs):
                if pa == 0.0:
                    continue  # zero-probability edges must not enter the support
                rows.append(q)
                cols.append(np.minimum(post + off, policy.q_max))
                vals.append(np.full(n, lat.fade_probs[h] * pa))
    else:
        spp = lat.steps_per_packet
        for h in range(len(lat.fade_probs)):
            post = q - policy.serve[:, h]
            if np.any(post < 0):
                raise ChainError("policy serves more than the queue holds")
            for r, pr in enumerate(lat.arr_probs):
                if pr == 0.0:
                    continue
                a = policy.admit[:, r, h]
                if np.any(a > r) or np.any(a < 0):
                    raise ChainError("admission table admits more than offered")
                rows.append(q)
                cols.append(np.minimum(post + a * spp, policy.q_max))
                vals.append(np.full(n, lat.fade_probs[h] * pr))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    mat.eliminate_zeros()
    return TransitionKernel(mat, policy.q_max, lat.delta)


def _recurrent_class(mat: sp.csr_matrix) -> np.ndarray:
    """Bool mask of the unique recurrent class; raises if there are two."""
    n = mat.shape[0]
    _, labels = connected_components(mat, directed=True, connection="strong")
    coo = mat.tocoo()
    leaves = labels[coo.row] != labels[coo.col]
    transient = np.zeros(labels.max() + 1, dtype=bool)
    np.logical_or.at(transient, labels[coo.row[leaves]], True)
    recurrent_labels = [l for l in range(labels.max() + 1) if not transient[l]]
    if len(recurrent_labels) != 1:
        reps = [int(np.argmax(labels == l)) for l in recurrent_labels]
        raise ChainError(
            "chain is reducible with multiple recurrent classes; "
            f"representatives at states {sorted(reps)}"
        )
    return labels == recurrent_labels[0]


def _solve_restricted(mat: sp.csr_matrix, mask: np.ndarray) -> np.ndarray:
    """Stationary law on the recurrent class by a sparse direct solve.

    One balance equation is replaced by pinning pi at a reference state
    to 1 (keeping the system sparse); the solution is normalised
    afterwards. Iterative refinement against the pinned system sharpens
    entries many orders below the peak.
    """
    idx = np.flatnonzero(mask)
    sub = mat[idx][:, idx].tocsc()
    m = len(idx)
    a = (sub.T - sp.identity(m, format="csc")).tolil()
    a[0, :] = 0.0
    a[0, 0] = 1.0
    a = a.tocsc()
    b = np.zeros(m)
    b[0] = 1.0
    lu = splu(a)
    x = lu.solve(b)
    for _ in range(2):
        r = b - a @ x
        x = x + lu.solve(r)
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    pi = np.zeros(mat.shape[0])
    pi[idx] = x
    return pi


def _power_iterate(mat: sp.csr_matrix, mask: np.ndarray, tol: float) -> np.ndarray:
    n = mat.shape[0]
    pi = np.zeros(n)
    pi[mask] = 1.0 / mask.sum()
    for _ in range(2_000_000):
        nxt = pi @ mat
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) <= tol:
            return nxt
        pi = nxt
    raise ChainError(f"power iteration did not reach residual {tol}")


def stationary_dist(
    kernel: TransitionKernel,
    policy: "Policy",
    spec: ModelSpec,
    method: str = "auto",
) -> StationaryDist:
    """Stationary law of the queue kernel.

    The kernel must have a single recurrent class (it may be a strict
    subset of the state space; the law is zero off it). method "auto"
    uses a sparse direct solve; "power" runs power iteration to residual
    1e-12 and exists mainly as an independent cross-check.
    """
    mat = kernel.matrix
    row_sums = np.asarray(mat.sum(axis=1)).ravel()
    if np.max(np.abs(row_sums - 1.0)) > 1e-12:
        raise ChainError("kernel rows do not sum to one")
    mask = _recurrent_class(mat)
    if method in ("auto", "solve"):
        if mat.shape[0] > DIRECT_SOLVE_MAX_STATES:
            raise ChainError(f"state space too large for direct solve: {mat.shape[0]}")
        pi = _solve_restricted(mat, mask)
    elif method == "power":
        pi = _power_iterate(mat, mask, POWER_ITER_TOL)
    else:
        raise ValueError(f"unknown method {method!r}")
    residual = float(np.max(np.abs(pi @ mat - pi)))
    sbar = sbar_profile(spec, policy)
    return StationaryDist(
        pi=pi,
        sbar=sbar,
        tail_mass=float(pi[-1]),
        residual=residual,
        recurrent=mask,
    )


def averages(dist: StationaryDist, policy: "Policy", spec: ModelSpec) -> Averages:
    lat = lattice(spec)
    pi = dist.pi
    n = len(pi)
    states = np.arange(n, dtype=float) * lat.delta
    q_bar = fsum((pi * states).tolist())
    fade_power = np.take_along_axis(
        lat.power.T[None, :, :].repeat(n, axis=0),
        policy.serve[:, None, :],
        axis=1,
    )[:, 0, :]
    per_state_power = fade_power @ lat.fade_probs
    p_bar = fsum((pi * per_state_power).tolist())
    s_bar = fsum((pi * dist.sbar).tolist())
    if policy.admit is not None:
        a_bar = fsum((pi * abar_profile(spec, policy)).tolist())
        delay = q_bar / a_bar if a_bar > 0 else float("inf")
    else:
        a_bar = None
        delay = q_bar / spec.arrival.lam if spec.arrival.lam > 0 else 0.0
    return Averages(q_bar=q_bar, p_bar=p_bar, s_bar=s_bar, a_bar=a_bar, delay=delay)


def kernel_drift(kernel: TransitionKernel) -> np.ndarray:
    """Exact one-slot expected queue change per state, in packets."""
    n = kernel.matrix.shape[0]
    states = np.arange(n, dtype=float)
    return (kernel.matrix @ states - states) * kernel.delta


def case1_qbar_analytic(spec: ModelSpec) -> float:
    """Closed-form mean queue length of the serve-everything-up-to-one
    policy for a single fade state: sigma^2 / (2 (1 - lam)) + lam / 2.

    Exact for the untruncated chain Q' = max(Q - 1, 0) + A; requires a
    single fade, unit first breakpoint, and lam < 1.
    """
    if len(spec.fade) != 1:
        raise ValueError("analytic benchmark requires a single fade state")
    lam = spec.arrival.lam
    if not lam < 1.0:
        raise ValueError("analytic benchmark requires lam < 1")
    return spec.arrival.sigma2 / (2.0 * (1.0 - lam)) + lam / 2.0


# ---------------------------------------------------------------------------
# CSV interfaces


def export_pi_csv(dist: StationaryDist, path, provenance: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if provenance:
            f.write(f"# {provenance}\n")
        w = csv.writer(f)
        w.writerow(["q", "pi", "sbar"])
        for q, (p, s) in enumerate(zip(dist.pi, dist.sbar)):
            w.writerow([q, repr(float(p)), repr(float(s))])


def export_policy_csv(policy: "Policy", path, provenance: str | None = None) -> None:
    with open(path, "w", newline="") as f:
        if provenance:
            f.write(f"# {provenance}\n")
        w = csv.writer(f)
        if policy.admit is None:
            w.writerow(["q", "h_index", "s"])
            for q in range(policy.q_max + 1):
                for h in range(policy.serve.shape[1]):
                    w.writerow([q, h, int(policy.serve[q, h])])
        else:
            w.writerow(["q", "h_index", "s", "r", "a"])
            for q in range(policy.q_max + 1):
                for h in range(policy.serve.shape[1]):
                    for r in range(policy.admit.shape[1]):
                        w.writerow(
                            [q, h, int(policy.serve[q, h]), r, int(policy.admit[q, r, h])]
                        )


def import_policy_csv(path, spec: ModelSpec, q_max: int) -> "Policy":
    from .mdp import Policy

    lat = lattice(spec)
    n_fades = len(lat.fade_probs)
    serve = np.zeros((q_max + 1, n_fades), dtype=np.int64)
    admit = None
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    has_admit = "a" in header
    if has_admit:
        admit = np.zeros((q_max + 1, spec.arrival.a_max + 1, n_fades), dtype=np.int64)
    for r in body:
        q, h, s = int(r[0]), int(r[1]), int(r[2])
        serve[q, h] = s
        if has_admit:
            admit[q, int(r[3]), h] = int(r[4])
    return Policy(serve=serve, q_max=q_max, delta=lat.delta, admit=admit)
