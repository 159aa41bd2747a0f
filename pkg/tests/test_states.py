import numpy as np
import pytest

from absf.errors import DomainError, ResourceError
from absf.radio import link_budget_at, sinr_cdf, transmission_efficiency
from absf.states import (
    AbsState,
    Group,
    Snapshot,
    associate,
    cell_summary,
    efficiency_vector,
    enumerate_states,
    instantaneous_throughput,
    random_member_offsets,
    random_snapshot,
    relay_gain,
    scheduler_share,
    scheduler_shares,
    state_efficiency,
    throughput_table,
)


def test_state_bits_follow_the_id():
    state = AbsState(5, 3)
    np.testing.assert_array_equal(state.mask, [True, False, True])
    assert state.bits() == "1,0,1"
    assert state.n_active == 2
    assert AbsState.from_mask([True, False, True]) == state
    assert AbsState.all_active(4).id == 15


def test_state_id_out_of_range():
    with pytest.raises(DomainError):
        AbsState(8, 3)


def test_enumerate_all_states():
    assert [s.id for s in enumerate_states(3)] == list(range(8))


def test_enumeration_limits():
    with pytest.raises(ResourceError):
        enumerate_states(25)
    with pytest.raises(DomainError):
        enumerate_states(5, max_states=3)


def test_sampled_states_keep_reference_states():
    states = enumerate_states(10, max_states=30, seed=1)
    ids = {s.id for s in states}
    assert len(states) == 30
    assert 1023 in ids
    assert all(1023 ^ (1 << b) in ids for b in range(10))
    assert ids == {s.id for s in enumerate_states(10, max_states=30, seed=1)}


def test_member_offsets_centre_on_centroid(rng):
    offsets = random_member_offsets(5, 5.0, rng)
    np.testing.assert_allclose(offsets.mean(axis=0), 0.0, atol=1e-12)
    assert np.all(np.hypot(offsets[:, 0], offsets[:, 1]) <= 10.0)
    np.testing.assert_array_equal(random_member_offsets(1, 5.0, rng), [[0.0, 0.0]])


def test_group_validation():
    with pytest.raises(DomainError):
        Group(0, 0, (1.0, 1.0))
    with pytest.raises(DomainError):
        Group(0, 3, (1.0, 1.0), np.zeros((2, 2)))


def test_snapshot_outside_area(grid):
    snap = Snapshot((Group(0, 1, (200.0, 10.0)),))
    with pytest.raises(DomainError):
        snap.check_inside(grid)


def test_midpoint_tie_goes_to_the_lower_station(two_cell_network):
    snap = Snapshot((Group(0, 2, (75.0, 75.0)), Group(1, 1, (75.0, 40.0))))
    load = associate(snap, AbsState.all_active(2), two_cell_network)
    np.testing.assert_array_equal(load.serving, [0, 0])
    assert load.total_size(0) == 3.0
    assert load.total_size(1) == 0.0
    np.testing.assert_array_equal(associate(snap, AbsState(0b10, 2), two_cell_network).serving, [1, 1])


@pytest.mark.parametrize("state_id", [127, 126, 85, 1])
def test_scheduler_shares_are_conserved(grid, network, rng, state_id):
    snap = random_snapshot(grid, rng.integers(1, 6, size=20), 5.0, rng)
    state = AbsState(state_id, len(grid))
    load = associate(snap, state, network)
    shares = scheduler_shares(load, network.k_sym)
    for b in range(len(grid)):
        members = load.groups_of(b)
        if not state.mask[b]:
            assert len(members) == 0
        elif len(members):
            assert shares[members].sum() == pytest.approx(network.k_sym)
    assert scheduler_share(0, load, network.k_sym) == pytest.approx(shares[0])


def test_all_blanked_state_delivers_nothing(network, static_snapshot):
    result = instantaneous_throughput(static_snapshot, AbsState(0, network.n_stations), network)
    assert result.total == 0.0
    assert np.all(result.load.serving == -1)


def test_single_member_efficiency_matches_link_budget(network):
    point = (60.0, 80.0)
    state = AbsState.all_active(network.n_stations)
    group = Group(0, 1, point)
    rx = [bs.tx_power_w * float(network.pathloss.gain(np.hypot(point[0] - bs.x_m, point[1] - bs.y_m))) for bs in network.deployment.stations]
    serving = network.deployment.stations[int(np.argmax(rx))]
    budget = link_budget_at(point, serving, network.deployment.stations, network.pathloss, network.noise_var)
    expected = transmission_efficiency(lambda x: sinr_cdf(x, budget, network.noise_model), network.mcs)
    assert state_efficiency(group, state, network) == pytest.approx(expected, rel=1e-9)


def test_relay_groups_raise_efficiency(network):
    state = AbsState.all_active(network.n_stations)
    single = state_efficiency(Group(0, 1, (100.0, 40.0)), state, network)
    grouped = state_efficiency(Group(0, 5, (100.0, 40.0)), state, network)
    assert grouped >= single


def test_exact_mode_equals_centroid_for_collocated_members(network, static_snapshot):
    state = AbsState(0b1011011, network.n_stations)
    np.testing.assert_allclose(
        efficiency_vector(static_snapshot, state, network, "exact"),
        efficiency_vector(static_snapshot, state, network, "centroid"),
        rtol=1e-10,
    )


def test_unknown_efficiency_mode(network, static_snapshot):
    with pytest.raises(DomainError):
        efficiency_vector(static_snapshot, AbsState.all_active(network.n_stations), network, "median")


def test_throughput_is_share_times_efficiency(network, static_snapshot):
    result = instantaneous_throughput(static_snapshot, AbsState(0b1110111, network.n_stations), network)
    np.testing.assert_allclose(result.per_group, result.shares * result.efficiency)
    assert result.total == pytest.approx(result.per_group.sum())


def test_throughput_table(network, static_snapshot):
    states = enumerate_states(network.n_stations)[:16]
    df = throughput_table(static_snapshot, states, network)
    assert len(df) == 16
    assert {"state_id", "active", "system_throughput_bps", "served_groups"} <= set(df.columns)
    assert df.loc[df["state_id"] == 0, "system_throughput_bps"].item() == 0.0


def test_cell_summary_covers_every_station(network, static_snapshot):
    state = AbsState(0b1111110, network.n_stations)
    df = cell_summary(static_snapshot, state, network)
    assert len(df) == network.n_stations
    assert df.loc[0, "n_groups"] == 0
    assert df["n_groups"].sum() == len(static_snapshot)
    assert df["users"].sum() == static_snapshot.sizes.sum()
    assert df.loc[0, "users"] == 0.0


def test_relay_gain_exceeds_one(network, static_snapshot):
    assert relay_gain(static_snapshot, AbsState.all_active(network.n_stations), network, 5) > 1.0
