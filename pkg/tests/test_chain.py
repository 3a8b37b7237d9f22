"""Queue-kernel construction and exact stationary analysis."""

import numpy as np
import pytest

from fadelink import chain, mdp, model


def bernoulli_spec(p=0.3):
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([1 - p, p])
    power = model.PowerTable("table", ((0.0, 1.0),))
    return model.ModelSpec(arrival, fade, power, 1.0)


def test_bernoulli_serve_one_kernel_rows():
    spec = bernoulli_spec(0.3)
    policy = mdp.serve_cap_policy(spec, 1, 5)
    kernel = chain.queue_kernel(spec, policy)
    mat = kernel.matrix.toarray()
    assert mat[0, 0] == pytest.approx(0.7)
    assert mat[0, 1] == pytest.approx(0.3)
    for q in range(1, 6):
        assert mat[q, q - 1] == pytest.approx(0.7)
        assert mat[q, q] == pytest.approx(0.3)
    assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-12)


def test_kernel_rows_sum_to_one(example_spec):
    sol = mdp.solve_mdp(example_spec, 5.0, 128)
    kernel = chain.queue_kernel(example_spec, sol.policy)
    sums = np.asarray(kernel.matrix.sum(axis=1)).ravel()
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_zero_arrivals_drain_to_empty():
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([1.0])
    power = model.PowerTable("table", ((0.0, 1.0),))
    spec = model.ModelSpec(arrival, fade, power, 1.0)
    policy = mdp.serve_cap_policy(spec, 1, 8)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    assert dist.pi[0] == pytest.approx(1.0, abs=1e-12)
    avgs = chain.averages(dist, policy, spec)
    assert avgs.q_bar == 0.0
    assert avgs.p_bar == 0.0
    assert avgs.s_bar == 0.0


def test_bernoulli_serve_one_stationary_law():
    # birth-death balance gives pi = (1 - p, p, 0, ...)
    spec = bernoulli_spec(0.3)
    policy = mdp.serve_cap_policy(spec, 1, 6)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    assert dist.pi[0] == pytest.approx(0.7, abs=1e-12)
    assert dist.pi[1] == pytest.approx(0.3, abs=1e-12)
    assert np.all(dist.pi[2:] < 1e-15)
    assert dist.residual <= 1e-10
    avgs = chain.averages(dist, policy, spec)
    assert avgs.q_bar == pytest.approx(0.3, abs=1e-12)
    assert avgs.p_bar == pytest.approx(0.3 * 1.0, abs=1e-12)
    assert avgs.delay == pytest.approx(avgs.q_bar / spec.arrival.lam, rel=1e-12)


def test_bernoulli_average_power_on_example_fade(example_fade):
    # serving one packet regardless of fade costs the fade-average of
    # P(h, 1) whenever the queue is busy
    arrival = model.arrivals_from_pmf([0.7, 0.3])
    power = model.PowerTable(
        "example", model.example_power_rows(example_fade, 1.0, model.Mode("int"))
    )
    spec = model.ModelSpec(arrival, example_fade, power, 1.0)
    policy = mdp.serve_cap_policy(spec, 1, 6)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    avgs = chain.averages(dist, policy, spec)
    expected_power = 0.6 * 99.61976448498208 + 0.4 * 0.9961976448498212
    assert expected_power == pytest.approx(60.17029, abs=5e-5)
    assert avgs.p_bar == pytest.approx(0.3 * expected_power, rel=1e-12)


def test_power_iteration_matches_direct(example_spec):
    sol = mdp.solve_mdp(example_spec, 10.0, 256)
    kernel = chain.queue_kernel(example_spec, sol.policy)
    direct = chain.stationary_dist(kernel, sol.policy, example_spec, method="solve")
    power = chain.stationary_dist(kernel, sol.policy, example_spec, method="power")
    assert np.max(np.abs(direct.pi - power.pi)) < 1e-10


def test_reducible_chain_reports_second_class():
    # parity-preserving arrivals and services split the lattice in two
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([0.5, 0.0, 0.5])
    power = model.PowerTable("table", ((0.0, 1.0, 2.0),))
    spec = model.ModelSpec(arrival, fade, power, 2.0)
    serve = np.zeros((5, 1), dtype=np.int64)
    serve[2:, 0] = 2
    policy = mdp.Policy(serve=serve, q_max=4, delta=1.0)
    kernel = chain.queue_kernel(spec, policy)
    with pytest.raises(chain.ChainError, match="recurrent classes"):
        chain.stationary_dist(kernel, policy, spec)


def test_recurrent_class_away_from_zero_is_fine():
    # serve-nothing saturates the buffer; the unique recurrent class is
    # the top state and the law concentrates there
    spec = bernoulli_spec(0.3)
    serve = np.zeros((5, 1), dtype=np.int64)
    policy = mdp.Policy(serve=serve, q_max=4, delta=1.0)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    assert dist.pi[-1] == pytest.approx(1.0, abs=1e-12)
    assert dist.tail_mass == pytest.approx(1.0, abs=1e-12)


def test_flow_conservation_example(example_spec):
    sol = mdp.solve_mdp(example_spec, 10.0, 256)
    _, dist, avgs = mdp.evaluate_policy(example_spec, sol.policy)
    tol = max(10.0 * dist.tail_mass * example_spec.s_max, 1e-12)
    assert abs(avgs.s_bar - example_spec.arrival.lam) <= tol


def test_sbar_monotone_for_monotone_policy(example_spec):
    sol = mdp.solve_mdp(example_spec, 10.0, 256)
    _, dist, _ = mdp.evaluate_policy(example_spec, sol.policy)
    assert dist.sbar[0] == 0.0
    assert np.all(np.diff(dist.sbar) >= -1e-12)


def test_case1_analytic_formula():
    # Bernoulli: sigma^2/(2(1-lam)) + lam/2 collapses to p
    spec = bernoulli_spec(0.3)
    assert chain.case1_qbar_analytic(spec) == pytest.approx(0.3, abs=1e-12)


def test_case1_analytic_binomial_cross_check():
    fade = model.fade_law([1.0], [1.0])
    spec = model.example_system(5, 0.04, fade)
    val = chain.case1_qbar_analytic(spec)
    assert val == pytest.approx(0.22, abs=1e-12)
    policy = mdp.serve_cap_policy(spec, 1, 400)
    kernel = chain.queue_kernel(spec, policy)
    dist = chain.stationary_dist(kernel, policy, spec)
    avgs = chain.averages(dist, policy, spec)
    assert avgs.q_bar == pytest.approx(val, abs=1e-6)


def test_case1_analytic_zero_rate_limit():
    fade = model.fade_law([1.0], [1.0])
    arrival = model.arrivals_from_pmf([1.0 - 1e-9, 1e-9])
    power = model.PowerTable("table", ((0.0, 1.0),))
    spec = model.ModelSpec(arrival, fade, power, 1.0)
    assert chain.case1_qbar_analytic(spec) == pytest.approx(0.0, abs=1e-8)


def test_case1_analytic_preconditions(example_spec):
    with pytest.raises(ValueError):
        chain.case1_qbar_analytic(example_spec)  # two fades


def test_pi_csv_and_policy_csv_round_trip(tmp_path, example_spec):
    sol = mdp.solve_mdp(example_spec, 2.0, 64)
    kernel = chain.queue_kernel(example_spec, sol.policy)
    dist = chain.stationary_dist(kernel, sol.policy, example_spec)
    chain.export_pi_csv(dist, tmp_path / "pi.csv", provenance="t")
    lines = (tmp_path / "pi.csv").read_text().splitlines()
    assert lines[1] == "q,pi,sbar"

    chain.export_policy_csv(sol.policy, tmp_path / "pol.csv")
    loaded = chain.import_policy_csv(tmp_path / "pol.csv", example_spec, sol.policy.q_max)
    assert np.array_equal(loaded.serve, sol.policy.serve)


def test_admission_policy_csv_round_trip(tmp_path, example_fade):
    spec = model.example_system(5, 0.16, example_fade, admission=True)
    sol = mdp.solve_mdp_u(spec, 2.0, 1.0, 64)
    chain.export_policy_csv(sol.policy, tmp_path / "pol.csv")
    loaded = chain.import_policy_csv(tmp_path / "pol.csv", spec, sol.policy.q_max)
    assert np.array_equal(loaded.serve, sol.policy.serve)
    assert np.array_equal(loaded.admit, sol.policy.admit)
