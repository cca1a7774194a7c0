"""Scenario validation, the simulator, and the replication harness."""

import numpy as np
import pytest

from peerfx.dgp import (
    Scenario,
    generate,
    h_features,
    lsm_cov_scenario,
    rdpg_scenario,
    run_monte_carlo,
)
from peerfx.errors import DataError
from peerfx.graph import row_normalize


# =============================================================================
# Scenario construction
# =============================================================================


def test_unknown_network_model_rejected():
    with pytest.raises(DataError):
        Scenario(name="x", network_model="smallworld", n=50)


def test_unstable_peer_matrix_rejected():
    with pytest.raises(DataError):
        Scenario(name="x", network_model="rdpg", n=50,
                 d_true=np.array([[0.9, 0.4], [0.4, 0.9]]))


def test_rho_out_of_range_rejected():
    with pytest.raises(DataError):
        Scenario(name="x", network_model="rdpg", n=50, rho_net=1.5)
    with pytest.raises(DataError):
        Scenario(name="x", network_model="rdpg", n=50, rho_net="dense")


def test_auto_density_law():
    assert Scenario(name="x", network_model="rdpg", n=100).rho_net_value() \
        == pytest.approx(12.0 * 100 ** (-2.0 / 3.0))
    assert Scenario(name="x", network_model="rdpg", n=500).rho_net_value() \
        == pytest.approx(12.0 * 500 ** (-2.0 / 3.0))
    # the law caps at one for tiny graphs
    assert Scenario(name="x", network_model="rdpg", n=20).rho_net_value() == 1.0


def test_auto_intercept_law():
    s100 = Scenario(name="x", network_model="lsm_cov", n=100)
    s300 = Scenario(name="x", network_model="lsm_cov", n=300)
    assert s100.net_intercept_value() == pytest.approx(-1.0)
    assert s300.net_intercept_value() == pytest.approx(-1.0 - (2.0 / 3.0) * np.log(3.0))


def test_near_rank_deficient_loading_rejected():
    # peer-covariate loading canceling b1 @ d_true leaves no two-hop signal
    d = np.array([[0.3, 0.2], [0.25, 0.6]])
    b1 = np.ones((3, 2))
    with pytest.raises(DataError):
        Scenario(name="x", network_model="rdpg", n=50, p=3,
                 d_true=d, b1=b1, b2=-b1 @ d)


def test_h_features_shapes():
    u = np.ones((10, 2))
    assert h_features(u, "linear").shape == (10, 2)
    assert h_features(u, "quadratic").shape == (10, 4)
    assert h_features(u, "quadratic_interaction").shape == (10, 5)
    with pytest.raises(DataError):
        h_features(u, "cubic")


# =============================================================================
# Simulator
# =============================================================================


def test_generate_is_deterministic_per_rep():
    scen = rdpg_scenario(80, seed=3, reps=2)
    a = generate(scen, 0)
    b = generate(scen, 0)
    np.testing.assert_array_equal(a.graph.a, b.graph.a)
    np.testing.assert_array_equal(a.y, b.y)
    c = generate(scen, 1)
    assert not np.array_equal(a.graph.a, c.graph.a)


def test_generate_solves_the_simultaneous_system():
    scen = rdpg_scenario(80, seed=4, reps=1)
    sim = generate(scen, 0)
    g = row_normalize(sim.graph).g
    h = h_features(sim.u, scen.h_spec)
    rhs = sim.x @ scen.b1 + (g @ sim.x) @ scen.b2 + h @ scen.theta_y + sim.e
    lhs = sim.y - g @ sim.y @ scen.d_true
    resid = np.max(np.abs(lhs - rhs)) / np.max(np.abs(sim.y))
    assert resid < 1e-10


def test_lsm_scenario_carries_edge_covariates():
    scen = lsm_cov_scenario(80, seed=5, reps=1)
    sim = generate(scen, 0)
    assert sim.cov is not None
    assert sim.cov.x_edge.shape == (2, 80, 80)


def test_rdpg_scenario_has_no_edge_covariates():
    sim = generate(rdpg_scenario(60, seed=6, reps=1), 0)
    assert sim.cov is None


def test_confound_strength_zero_removes_latent_error_channel():
    scen = rdpg_scenario(300, seed=7, reps=1, confound_strength=0.0)
    sim = generate(scen, 0)
    h1 = h_features(sim.u, scen.h_spec)[:, 0]
    corr = np.corrcoef(h1, sim.e[:, 0])[0, 1]
    assert abs(corr) < 0.15


def test_confound_strength_one_couples_errors_to_latents():
    scen = rdpg_scenario(300, seed=7, reps=1, confound_strength=1.0)
    sim = generate(scen, 0)
    h1 = h_features(sim.u, scen.h_spec)[:, 0]
    corr = np.corrcoef(h1, sim.e[:, 0])[0, 1]
    assert corr > 0.5


def test_degree_correlates_with_errors_under_confounding():
    """The latent coordinate drives both link rates and outcome errors."""
    scen = rdpg_scenario(300, seed=8, reps=1)
    sim = generate(scen, 0)
    deg = sim.graph.a.sum(axis=1)
    corr = np.corrcoef(deg, sim.e[:, 0])[0, 1]
    assert corr > 2.0 / np.sqrt(300)


# =============================================================================
# Replication harness
# =============================================================================


def test_run_monte_carlo_bookkeeping():
    scen = rdpg_scenario(60, seed=9, reps=5)
    rep = run_monte_carlo(scen, "both")
    assert rep.estimators == ("naive", "adjusted")
    assert rep.reps_requested == 5
    assert rep.reps_used + len(rep.failures) == 5
    for st in rep.stats.values():
        assert st.mse.shape == (2, 2)
        assert st.d_draws.shape == (rep.reps_used, 2, 2)
        assert np.all(st.coverage >= 0) and np.all(st.coverage <= 1)


def test_run_monte_carlo_parallel_matches_serial():
    scen = rdpg_scenario(60, seed=10, reps=4)
    serial = run_monte_carlo(scen, "adjusted", workers=1)
    parallel = run_monte_carlo(scen, "adjusted", workers=2)
    np.testing.assert_allclose(serial.stats["adjusted"].d_draws,
                               parallel.stats["adjusted"].d_draws)


def test_run_monte_carlo_unknown_estimator():
    scen = rdpg_scenario(60, seed=11, reps=2)
    with pytest.raises(DataError):
        run_monte_carlo(scen, "ridge")
