"""Stationary-law bound verifiers against exact distributions."""

import numpy as np
import pytest

from fadelink import bounds, chain, mdp, mincost, model


def bernoulli_spec(p=0.3):
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([1 - p, p])
    power = model.PowerTable("table", ((0.0, 1.0),))
    return model.ModelSpec(arrival, fade, power, 1.0)


@pytest.fixture(scope="module")
def swept(example_spec):
    curve = mdp.sweep_beta(example_spec, [0.5, 2.0, 8.0, 32.0, 128.0], tol=1e-9)
    ref = mincost.min_power_curve(example_spec)
    out = []
    for pt, pol in zip(curve.points, curve.policies):
        kern, dist, avgs = mdp.evaluate_policy(example_spec, pol)
        out.append((pt, pol, kern, dist, avgs))
    return ref, out


def test_geometric_tail_bernoulli_hand_values():
    spec = bernoulli_spec(0.3)
    policy = mdp.serve_cap_policy(spec, 1, 8)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    rep = bounds.verify_geometric_tail(dist, policy, spec, s1=0.5)
    assert rep.applicable and rep.passed
    assert rep.params.q1 == 1
    assert rep.params.rho_d == pytest.approx(0.35, abs=1e-12)
    # k = 0 row: bound Pr{Q<1}/rho_d = 0.7/0.35 = 2 against pi(1) = 0.3
    row = dict((r[0], r) for r in rep.rows)["1"]
    assert row[1] == pytest.approx(0.3, abs=1e-12)
    assert row[2] == pytest.approx(2.0, abs=1e-12)


def test_geometric_tail_inapplicable_when_sbar_low():
    spec = bernoulli_spec(0.3)
    serve = np.zeros((9, 1), dtype=np.int64)
    policy = mdp.Policy(serve=serve, q_max=8, delta=1.0)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    rep = bounds.verify_geometric_tail(dist, policy, spec, s1=0.5)
    assert not rep.applicable
    assert "below s1" in rep.reason


def test_geometric_tail_swept_policies(swept, example_spec):
    ref, rows = swept
    for s1 in (0.5, 0.8, 1.4):
        for pt, pol, kern, dist, avgs in rows:
            rep = bounds.verify_geometric_tail(dist, pol, example_spec, s1)
            assert rep.ok, (s1, pt.beta, rep.worst_slack)


def test_geometric_grid_mode(example_fade):
    spec = model.example_system(5, 0.10, example_fade, mode=model.Mode("grid", 0.05))
    sol = mdp.solve_mdp(spec, 2.0, 96)
    kern, dist, avgs = mdp.evaluate_policy(spec, sol.policy)
    rep = bounds.verify_geometric_tail(dist, sol.policy, spec, s1=0.5)
    assert rep.applicable
    assert rep.passed


def test_drift_tail_small_instance():
    # A_max = 2 > S_max = 1 gives a positive overshoot probability
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([0.45, 0.35, 0.2])
    power = model.PowerTable("table", ((0.0, 1.0),))
    spec = model.ModelSpec(arrival, fade, power, 1.0)
    policy = mdp.serve_cap_policy(spec, 1, 64)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    rep = bounds.verify_drift_tail(dist, policy, spec, kernel=kernel)
    assert rep.applicable
    assert rep.passed
    assert rep.params.eps_a == pytest.approx(0.2, abs=1e-12)


def test_drift_tail_k_zero_is_tight():
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([0.45, 0.35, 0.2])
    power = model.PowerTable("table", ((0.0, 1.0),))
    spec = model.ModelSpec(arrival, fade, power, 1.0)
    policy = mdp.serve_cap_policy(spec, 1, 64)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    rep = bounds.verify_drift_tail(dist, policy, spec, kernel=kernel)
    # the k = 0 rows reduce to Pr{Q >= q1} >= Pr{Q >= q1}
    tails = np.concatenate([np.cumsum(dist.pi[::-1])[::-1], [0.0]])
    params = rep.params
    r = params.eps_a / (params.eps_a + params.d)
    q1 = 3
    assert tails[q1] >= 1.0 * tails[q1]  # trivially
    assert rep.passed


def test_drift_tail_inapplicable_without_overshoot():
    spec = bernoulli_spec(0.3)  # A_max = 1 = S_max
    policy = mdp.serve_cap_policy(spec, 1, 16)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    rep = bounds.verify_drift_tail(dist, policy, spec, kernel=kernel)
    assert not rep.applicable


def test_drift_tail_swept_policies(swept, example_spec):
    _, rows = swept
    for pt, pol, kern, dist, avgs in rows:
        rep = bounds.verify_drift_tail(dist, pol, example_spec, kernel=kern)
        assert rep.applicable  # A_max = 5 > S_max = 2
        assert rep.passed, (pt.beta, rep.worst_slack)


def test_concentration_case2(swept, example_spec, example_fade):
    # reclassify the sweep at rate 0.78 where the active band is [0.4, 0.8]
    spec = model.example_system(5, 0.156, example_fade)
    ref = mincost.min_power_curve(spec)
    info = mincost.classify_case(ref, 0.78)
    curve = mdp.sweep_beta(spec, [2.0, 8.0, 32.0, 128.0], tol=1e-9)
    for eps_v in (0.01, 0.02, 0.05):
        for pt, pol in zip(curve.points, curve.policies):
            if pt.flags:
                continue
            kern, dist, avgs = mdp.evaluate_policy(spec, pol)
            rep = bounds.verify_service_concentration(
                dist, pol, spec, ref, info, eps_v, avgs.p_bar, form="linear"
            )
            assert rep.ok, (pt.beta, eps_v, rep.worst_slack)


def test_concentration_inapplicable_case1(example_spec_02):
    ref = mincost.min_power_curve(example_spec_02)
    info = mincost.classify_case(ref, 0.2)
    sol = mdp.solve_mdp(example_spec_02, 10.0, 128)
    kern, dist, avgs = mdp.evaluate_policy(example_spec_02, sol.policy)
    rep = bounds.verify_service_concentration(
        dist, sol.policy, example_spec_02, ref, info, 0.02, avgs.p_bar, form="linear"
    )
    assert not rep.applicable


def test_concentration_zero_mass_when_window_covers_rates(example_fade):
    # all observed service rates inside the widened band: empty bad set,
    # zero mass on the left side of the inequality
    spec = model.example_system(5, 0.156, example_fade)  # rate 0.78
    ref = mincost.min_power_curve(spec)
    info = mincost.classify_case(ref, 0.78)
    serve = np.zeros((129, 2), dtype=np.int64)
    serve[1:, 1] = 1
    serve[2:, 1] = 2  # good fade only: sbar takes values {0, 0.4, 0.8}
    policy = mdp.Policy(serve=serve, q_max=128, delta=1.0)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    avgs = chain.averages(dist, policy, spec)
    rep = bounds.verify_service_concentration(
        dist, policy, spec, ref, info, 0.45, avgs.p_bar, form="linear"
    )
    assert rep.applicable
    assert rep.rows[0][1] == 0.0
    assert rep.passed


def test_concentration_shrinks_with_v(example_spec):
    # with the window eps_v = sqrt(V), the out-of-band mass vanishes as
    # the power gap closes along the sweep
    ref = mincost.min_power_curve(example_spec)
    info = mincost.classify_case(ref, 0.8)
    curve = mdp.sweep_beta(example_spec, [4.0, 40.0, 400.0], tol=1e-9)
    masses = []
    for pt, pol in zip(curve.points, curve.policies):
        _, dist, avgs = mdp.evaluate_policy(example_spec, pol)
        v = avgs.p_bar - ref.value(0.8)
        assert v > 0
        eps_v = np.sqrt(v)
        bad = (dist.sbar < info.s_l - eps_v) | (dist.sbar > info.s_u + eps_v)
        masses.append(float(dist.pi[bad].sum()))
    assert masses[-1] < 0.05
    assert max(masses) < 0.5


def test_quadratic_concentration_grid(example_fade):
    spec = model.example_system(5, 0.12, example_fade, mode=model.Mode("grid", 0.05))
    ref = mincost.min_power_curve_real(spec)
    info = mincost.classify_case(ref, spec.arrival.lam)
    sol = mdp.solve_mdp(spec, 20.0, 256)
    kern, dist, avgs = mdp.evaluate_policy(spec, sol.policy)
    rep = bounds.verify_service_concentration(
        dist, sol.policy, spec, ref, info, 0.05, avgs.p_bar, form="quadratic"
    )
    assert rep.applicable
    assert rep.passed


def test_sandwich_tight_for_single_rate_law():
    # a stationary law sitting entirely on states that serve exactly the
    # arrival rate collapses both sides of the sandwich (Jensen equality)
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([0.5, 0.5])
    power = model.PowerTable("table", ((0.0, 1.0, 3.0),))
    spec = model.ModelSpec(arrival, fade, power, 2.0)
    ref = mincost.min_power_curve(spec)
    lam = 0.5
    dist = chain.StationaryDist(
        pi=np.array([0.0, 1.0, 0.0]),
        sbar=np.array([0.0, lam, lam]),
        tail_mass=0.0,
        residual=0.0,
        recurrent=np.array([False, True, False]),
    )
    rep = bounds.service_cost_sandwich(dist, None, spec, ref, ref.value(lam))
    assert rep.ok
    assert rep.e_cost_sbar == pytest.approx(rep.c_rate, abs=1e-12)
    assert rep.e_cost_sbar == pytest.approx(rep.p_bar, abs=1e-12)


def test_sandwich_strict_when_power_convex():
    # mixing idle slots with busy ones puts average power strictly above
    # the curve at the mean service rate
    spec = bernoulli_spec(0.3)
    policy = mdp.serve_cap_policy(spec, 1, 16)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    avgs = chain.averages(dist, policy, spec)
    ref = mincost.min_power_curve(spec)
    rep = bounds.service_cost_sandwich(dist, policy, spec, ref, avgs.p_bar)
    assert rep.ok


def test_sandwich_swept_policies(swept, example_spec):
    ref, rows = swept
    for pt, pol, kern, dist, avgs in rows:
        rep = bounds.service_cost_sandwich(dist, pol, example_spec, ref, avgs.p_bar)
        assert rep.ok, pt.beta


def test_geometric_bound_values_monotone_in_k(swept, example_spec):
    _, rows = swept
    pt, pol, kern, dist, avgs = rows[0]
    rep = bounds.verify_geometric_tail(dist, pol, example_spec, s1=0.8)
    if not rep.applicable:
        pytest.skip("threshold not reached")
    p = rep.params
    ratio = 1.0 + 1.0 / p.rho_d
    assert ratio > 1.0  # geometric growth in k by construction


def test_report_csv(tmp_path, swept, example_spec):
    _, rows = swept
    pt, pol, kern, dist, avgs = rows[0]
    rep = bounds.verify_geometric_tail(dist, pol, example_spec, s1=0.8)
    bounds.export_report_csv(rep, tmp_path / "rep.csv", provenance="t")
    lines = (tmp_path / "rep.csv").read_text().splitlines()
    assert lines[1] == "index,empirical,bound,slack,vacuous"
    assert len(lines) >= 3
