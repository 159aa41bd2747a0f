import numpy as np
import pytest

from absf.asymptotic import (
    GroupProfile,
    SpatialDistribution,
    asymptotic_efficiency,
    asymptotic_throughput,
    coverage_map,
    expected_share,
    expected_share_homogeneous,
    expected_state_efficiency,
    expected_state_throughput,
    quadrature_change,
    share_table,
    throughput_matrix,
)
from absf.errors import ConfigError, DomainError, ResourceError
from absf.optimizer import StateProbabilities, solve_asymptotic_pf
from absf.states import AbsState, Group, enumerate_states, state_efficiency, throughput_by_state

K = 16.8e6


def _point_profiles(snapshot):
    return [GroupProfile(g.id, g.size, SpatialDistribution.point(*g.centroid)) for g in snapshot.groups]


# -- spatial distributions -------------------------------------------------------


def test_uniform_raster():
    dist = SpatialDistribution.uniform((150.0, 150.0), 2.0)
    assert len(dist.points) == 75 * 75
    assert dist.mass.sum() == pytest.approx(1.0)
    assert dist.points[:, 0].min() == pytest.approx(1.0)


def test_parse_shorthands(tmp_path):
    point = SpatialDistribution.parse("point(10, 20.5)", (150.0, 150.0))
    np.testing.assert_array_equal(point.points, [[10.0, 20.5]])
    assert SpatialDistribution.parse("uniform", (100.0, 50.0), 5.0).kind == "uniform"
    path = tmp_path / "raster.csv"
    path.write_text("x_m,y_m,mass\n10,10,2\n20,10,6\n")
    dist = SpatialDistribution.parse(str(path), (150.0, 150.0))
    np.testing.assert_allclose(dist.mass, [0.25, 0.75])
    assert dist.resolution_m == pytest.approx(10.0)


def test_raster_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        SpatialDistribution.from_csv(tmp_path / "missing.csv")
    path = tmp_path / "bad.csv"
    path.write_text("x_m,y_m\n1,1\n")
    with pytest.raises(ConfigError):
        SpatialDistribution.from_csv(path)


def test_mass_must_be_normalised():
    with pytest.raises(DomainError):
        SpatialDistribution(np.zeros((2, 2)), np.array([0.5, 0.6]))


def test_refined_halves_resolution():
    dist = SpatialDistribution.uniform((100.0, 100.0), 10.0)
    assert len(dist.refined().points) == 4 * len(dist.points)
    with pytest.raises(DomainError):
        SpatialDistribution.point(1.0, 1.0).refined()


# -- coverage and efficiency -------------------------------------------------------


def test_coverage_masses_sum_to_one(network):
    dist = SpatialDistribution.uniform((150.0, 150.0), 5.0)
    cover = coverage_map(dist, AbsState.all_active(network.n_stations), network)
    assert cover.region_mass.sum() == pytest.approx(1.0)
    blanked = coverage_map(dist, AbsState(0b1111110, network.n_stations), network)
    assert blanked.p(0) == 0.0
    assert blanked.region_mass.sum() == pytest.approx(1.0)


def test_point_distribution_reduces_to_state_efficiency(network):
    state = AbsState(0b0110101, network.n_stations)
    dist = SpatialDistribution.point(40.0, 100.0)
    expected = state_efficiency(Group(0, 3, (40.0, 100.0)), state, network)
    assert expected_state_efficiency(dist, 3, state, network) == pytest.approx(expected, rel=1e-12)


def test_asymptotic_efficiency_mixes_states(network):
    states = [AbsState.all_active(network.n_stations), AbsState(0b0000001, network.n_stations)]
    dist = SpatialDistribution.uniform((150.0, 150.0), 10.0)
    per_state = [expected_state_efficiency(dist, 2, s, network) for s in states]
    mixed = asymptotic_efficiency(dist, 2, [0.25, 0.75], states, network)
    assert mixed == pytest.approx(0.25 * per_state[0] + 0.75 * per_state[1])


def test_asymptotic_efficiency_accepts_state_probabilities(network):
    states = [AbsState.all_active(network.n_stations), AbsState(0b0000001, network.n_stations)]
    dist = SpatialDistribution.uniform((150.0, 150.0), 10.0)
    probs = StateProbabilities(tuple(s.id for s in states), [0.25, 0.75])
    assert asymptotic_efficiency(dist, 2, probs, states, network) == pytest.approx(
        asymptotic_efficiency(dist, 2, [0.25, 0.75], states, network)
    )


def test_coarse_raster_warns(network, caplog):
    dist = SpatialDistribution.uniform((150.0, 150.0), 60.0)
    expected_state_efficiency(dist, 1, AbsState.all_active(network.n_stations), network)
    assert "coarser than the minimum station spacing" in caplog.text


def test_quadrature_change_is_small_at_fine_resolution(network):
    change = quadrature_change(SpatialDistribution.uniform((150.0, 150.0), 2.0), 2, AbsState.all_active(7), network)
    assert 0.0 <= change < 0.05


# -- expected shares -------------------------------------------------------------


@pytest.mark.parametrize("n_groups", range(2, 11))
@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.9])
def test_power_set_matches_binomial_closed_form(n_groups, p):
    exact = expected_share(1, [p] * (n_groups - 1), [1] * (n_groups - 1), K, method="exact")
    assert exact.value == pytest.approx(expected_share_homogeneous(n_groups, p, K), rel=1e-12)


@pytest.mark.parametrize("n_groups", [3, 6, 10])
@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_monte_carlo_share_within_standard_errors(n_groups, p):
    rng = np.random.default_rng(n_groups * 100 + int(p * 10))
    mc = expected_share(1, [p] * (n_groups - 1), [1] * (n_groups - 1), K, "monte-carlo", 200_000, rng)
    assert mc.method == "monte-carlo"
    assert abs(mc.value - expected_share_homogeneous(n_groups, p, K)) <= 4 * mc.stderr


def test_convolution_matches_power_set():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.0, 1.0, 12)
    u = rng.integers(1, 6, 12)
    exact = expected_share(3, p, u, K, "exact").value
    assert expected_share(3, p, u, K, "convolution").value == pytest.approx(exact, rel=1e-10)


def test_certain_placements_are_deterministic():
    est = expected_share(1, [1.0, 0.0, 1.0], [2, 3, 4], K, "monte-carlo")
    assert est.value == pytest.approx(K / 7.0)
    assert est.stderr == 0.0


def test_lonely_group_gets_everything():
    assert expected_share(2, [], [], K).value == pytest.approx(K)


@pytest.mark.parametrize("method", ["exact", "convolution"])
def test_share_ignores_the_order_of_other_groups(method):
    rng = np.random.default_rng(9)
    p = rng.uniform(0.0, 1.0, 8)
    u = rng.integers(1, 6, 8)
    base = expected_share(2, p, u, K, method).value
    for _ in range(5):
        order = rng.permutation(8)
        assert expected_share(2, p[order], u[order], K, method).value == pytest.approx(base, rel=1e-12)


@pytest.mark.parametrize("method", ["exact", "convolution"])
def test_share_falls_as_another_group_gets_likelier(method):
    p = np.array([0.2, 0.5, 0.7])
    u = np.array([1, 3, 2])
    values = []
    for p_1 in (0.0, 0.25, 0.5, 0.75, 1.0):
        p[1] = p_1
        values.append(expected_share(2, p, u, K, method).value)
    assert np.all(np.diff(values) < 0)


def test_share_method_limits():
    p, u = np.full(30, 0.2), np.ones(30)
    with pytest.raises(ResourceError):
        expected_share(1, p, u, K, "exact")
    assert expected_share(1, p, u, K, "auto", n_samples=20_000).method == "monte-carlo"
    with pytest.raises(DomainError):
        expected_share(1, [1.2], [1], K)
    with pytest.raises(DomainError):
        expected_share(1, [0.5], [1, 2], K)


# -- throughput matrix -----------------------------------------------------------


def test_static_groups_reduce_to_instantaneous_model(network, static_snapshot):
    states = enumerate_states(network.n_stations)
    matrix = throughput_matrix(_point_profiles(static_snapshot), states, network, coverage="state")
    np.testing.assert_allclose(matrix.values, throughput_by_state(static_snapshot, states, network), rtol=1e-9, atol=1e-6)
    np.testing.assert_array_equal(matrix.weights, static_snapshot.sizes)


def test_all_active_column_matches_with_either_coverage(network, static_snapshot):
    states = [AbsState.all_active(network.n_stations)]
    a = throughput_matrix(_point_profiles(static_snapshot), states, network, coverage="all-active")
    b = throughput_matrix(_point_profiles(static_snapshot), states, network, coverage="state")
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


def test_expected_state_throughput_matches_matrix_entry(network, static_snapshot):
    profiles = _point_profiles(static_snapshot)
    state = AbsState.all_active(network.n_stations)
    matrix = throughput_matrix(profiles, [state], network)
    shares = share_table(profiles, network)
    assert expected_state_throughput(4, state, profiles, network, shares) == pytest.approx(matrix.values[4, 0])


def test_throughput_is_linear_in_probabilities(network, static_snapshot):
    rng = np.random.default_rng(8)
    states = enumerate_states(network.n_stations)
    matrix = throughput_matrix(_point_profiles(static_snapshot), states, network, coverage="state")
    p1, p2 = rng.dirichlet(np.ones(len(states))), rng.dirichlet(np.ones(len(states)))
    for a in (0.0, 0.3, 0.8, 1.0):
        mixed = asymptotic_throughput(matrix, a * p1 + (1 - a) * p2)
        expected = a * asymptotic_throughput(matrix, p1) + (1 - a) * asymptotic_throughput(matrix, p2)
        np.testing.assert_allclose(mixed, expected, rtol=1e-12, atol=1e-6)


def test_uniform_profiles_share_one_law(two_cell_network):
    dist = SpatialDistribution.uniform((150.0, 150.0), 5.0)
    profiles = [GroupProfile(i, s, dist) for i, s in enumerate([1, 1, 2, 2, 3])]
    states = enumerate_states(2)
    matrix = throughput_matrix(profiles, states, two_cell_network, share_method="exact")
    assert np.all(matrix.values[:, 0] == 0.0)
    np.testing.assert_allclose(matrix.values[0], matrix.values[1])
    assert np.all(matrix.values[:, 3] > 0)


def test_unknown_coverage(network, static_snapshot):
    with pytest.raises(DomainError):
        throughput_matrix(_point_profiles(static_snapshot), [AbsState.all_active(7)], network, coverage="mixed")


def test_state_coverage_keeps_pf_near_every_station_on(network):
    dist = SpatialDistribution.uniform((150.0, 150.0), 10.0)
    profiles = [GroupProfile(i, 1 + i % 5, dist) for i in range(20)]
    states = enumerate_states(network.n_stations)
    full = [s.id for s in states].index(AbsState.all_active(network.n_stations).id)
    matrix = throughput_matrix(profiles, states, network, share_method="convolution", coverage="state")
    probabilities = solve_asymptotic_pf(matrix).probabilities
    assert asymptotic_throughput(matrix, probabilities).sum() >= 0.8 * matrix.values[:, full].sum()


def test_all_active_coverage_overrates_lone_stations(network):
    dist = SpatialDistribution.uniform((150.0, 150.0), 10.0)
    profiles = [GroupProfile(i, 1 + i % 5, dist) for i in range(6)]
    lone = [AbsState(0b0000001, network.n_stations)]
    literal = throughput_matrix(profiles, lone, network, share_method="exact", coverage="all-active")
    regional = throughput_matrix(profiles, lone, network, share_method="exact", coverage="state")
    assert np.all(literal.values[:, 0] > regional.values[:, 0])
