import numpy as np
import pytest
from scipy import stats

from absf.errors import DomainError, InfeasibleError
from absf.optimizer import (
    AbsPattern,
    History,
    StateProbabilities,
    ThroughputMatrix,
    build_pattern,
    check_simplex,
    export_probabilities,
    fixed_ratio_pattern,
    parse_ratio,
    pf_objective,
    solve_asymptotic_pf,
    solve_dynamic_pf,
    solve_max_throughput,
)


def _matrix(values, weights=None):
    values = np.asarray(values, dtype=float)
    weights = np.ones(values.shape[0]) if weights is None else weights
    return ThroughputMatrix(values, tuple(range(values.shape[1])), np.asarray(weights, dtype=float))


def _grid_optimum(matrix, step=1e-3):
    """Best objective over a simplex grid, for up to three states."""
    ticks = np.arange(0.0, 1.0 + step / 2, step)
    if matrix.n_states == 2:
        p = np.stack([ticks, 1.0 - ticks])
    else:
        a, b = np.meshgrid(ticks, ticks, indexing="ij")
        keep = a + b <= 1.0 + 1e-12
        p = np.stack([a[keep], b[keep], np.clip(1.0 - a[keep] - b[keep], 0.0, None)])
    with np.errstate(divide="ignore"):
        return float(np.max(matrix.weights @ np.log(matrix.values @ p)))


# -- matrix and simplex ------------------------------------------------------------


def test_matrix_validation():
    with pytest.raises(DomainError):
        _matrix([[1.0, -1.0]])
    with pytest.raises(DomainError):
        _matrix([[1.0, 1.0]], weights=[0.0])
    with pytest.raises(DomainError):
        ThroughputMatrix(np.ones((2, 2)), (0, 1), np.ones(3))


def test_simplex_check():
    check_simplex([0.25, 0.75])
    with pytest.raises(DomainError):
        check_simplex([0.5, 0.6])
    with pytest.raises(DomainError):
        check_simplex([1.5, -0.5])


def test_probabilities_csv_round_trip(tmp_path):
    probs = StateProbabilities((3, 5, 7), [0.2, 0.3, 0.5])
    export_probabilities(probs, tmp_path / "p.csv")
    loaded = StateProbabilities.from_csv(tmp_path / "p.csv")
    assert loaded.state_ids == (3, 5, 7)
    np.testing.assert_allclose(loaded.p, probs.p)


# -- proportional fairness ---------------------------------------------------------


def test_single_state_gets_all_mass():
    result = solve_asymptotic_pf(_matrix([[1.0], [2.0]]))
    np.testing.assert_array_equal(result.probabilities.p, [1.0])


@pytest.mark.parametrize("n", [2, 3, 5])
def test_symmetric_instance_is_uniform(n):
    result = solve_asymptotic_pf(_matrix(np.eye(n)))
    np.testing.assert_allclose(result.probabilities.p, np.full(n, 1.0 / n), atol=1e-6)


def test_weights_tilt_the_split():
    result = solve_asymptotic_pf(_matrix(np.eye(2), weights=[2.0, 1.0]))
    np.testing.assert_allclose(result.probabilities.p, [2.0 / 3.0, 1.0 / 3.0], atol=1e-5)


def test_shared_state_optimum_value():
    matrix = _matrix([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    result = solve_asymptotic_pf(matrix)
    assert result.objective == pytest.approx(2 * np.log(0.5), abs=1e-8)
    assert pf_objective(matrix, result.probabilities.p) == pytest.approx(result.objective)


def test_matches_grid_search_on_random_instances():
    rng = np.random.default_rng(99)
    for _ in range(20):
        n_states = int(rng.integers(2, 4))
        n_groups = int(rng.integers(1, 5))
        matrix = _matrix(rng.uniform(0.05, 1.0, (n_groups, n_states)), rng.integers(1, 6, n_groups))
        result = solve_asymptotic_pf(matrix)
        assert result.objective >= _grid_optimum(matrix) - 1e-5


def test_infeasible_group_is_excluded(caplog):
    matrix = _matrix([[1.0, 0.0], [0.0, 0.0]])
    result = solve_asymptotic_pf(matrix)
    assert result.excluded == (1,)
    assert result.probabilities.p[0] > 0.999
    assert "Excluding groups" in caplog.text


def test_infeasible_group_strict():
    with pytest.raises(InfeasibleError) as info:
        solve_asymptotic_pf(_matrix([[1.0, 0.0], [0.0, 0.0]]), strict=True)
    assert info.value.group_ids == (1,)


def test_all_groups_infeasible():
    with pytest.raises(InfeasibleError):
        solve_asymptotic_pf(_matrix(np.zeros((2, 3))))


def test_never_below_the_best_vertex():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        values = rng.uniform(0.0, 1.0, (4, 5)) ** 4 + 1e-3
        matrix = _matrix(values, rng.integers(1, 6, 4))
        result = solve_asymptotic_pf(matrix)
        best_vertex = max(pf_objective(matrix, np.eye(5)[s]) for s in range(5))
        assert result.objective >= best_vertex - 1e-12 * abs(best_vertex)
        assert pf_objective(matrix, result.probabilities.p) == pytest.approx(result.objective, rel=1e-12)


def test_beats_random_simplex_points():
    rng = np.random.default_rng(5)
    for _ in range(50):
        matrix = _matrix(rng.uniform(0.05, 1.0, (3, 6)), rng.integers(1, 6, 3))
        objective = solve_asymptotic_pf(matrix).objective
        samples = rng.dirichlet(np.full(6, 0.3), 500).T
        assert objective >= float(np.max(matrix.weights @ np.log(matrix.values @ samples))) - 1e-9 * abs(objective)


@pytest.mark.parametrize("value_scale, weight_scale", [(1e6, 1.0), (1e-3, 1.0), (1.0, 7.0)])
def test_optimum_ignores_common_scaling(value_scale, weight_scale):
    rng = np.random.default_rng(17)
    for _ in range(20):
        values = rng.uniform(0.05, 1.0, (4, 5))
        weights = rng.integers(1, 6, 4).astype(float)
        base = solve_asymptotic_pf(_matrix(values, weights)).probabilities.p
        scaled = solve_asymptotic_pf(_matrix(values * value_scale, weights * weight_scale)).probabilities.p
        np.testing.assert_allclose(values @ scaled, values @ base, rtol=2e-3)


# -- history and dynamic PF --------------------------------------------------------


def test_history_window_and_coefficients():
    history = History(window=2)
    for v in ([1.0], [2.0], [3.0]):
        history.push(v)
    assert len(history) == 2
    np.testing.assert_allclose(history.past_sum(1), [5.0])
    np.testing.assert_allclose(History.exponential(3, 0.5).alpha, [1.0, 0.5, 0.25, 0.125])


def test_history_rejects_increasing_coefficients():
    with pytest.raises(DomainError):
        History(window=2, alpha=[1.0, 2.0, 1.0])
    with pytest.raises(DomainError):
        History(window=2, alpha=[1.0, 1.0])


def test_window_zero_keeps_nothing():
    history = History(window=0)
    history.push([5.0, 5.0])
    np.testing.assert_array_equal(history.past_sum(2), [0.0, 0.0])


def test_dynamic_pf_compensates_past_service():
    history = History(window=2)
    history.push([0.5, 0.0])
    result = solve_dynamic_pf(_matrix(np.eye(2)), history)
    np.testing.assert_allclose(result.probabilities.p, [0.25, 0.75], atol=1e-4)


def test_dynamic_pf_without_history_equals_asymptotic():
    matrix = _matrix([[3.0, 1.0, 0.2], [0.5, 2.0, 1.0], [1.0, 1.0, 1.0]], [1, 2, 3])
    a = solve_asymptotic_pf(matrix).probabilities.p
    b = solve_dynamic_pf(matrix, History(window=5)).probabilities.p
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_past_service_keeps_starved_group_feasible():
    history = History(window=1)
    history.push([0.0, 1.0])
    result = solve_dynamic_pf(_matrix([[1.0, 0.0], [0.0, 0.0]]), history, strict=True)
    assert result.excluded == ()


def test_receding_history_weighs_the_current_interval():
    np.testing.assert_array_equal(History.receding(3).alpha, [3.0, 1.0, 1.0, 1.0])
    np.testing.assert_array_equal(History.receding(3, current_weight=1.0).alpha, np.ones(4))
    np.testing.assert_array_equal(History.receding(0).alpha, [1.0])
    with pytest.raises(DomainError):
        History.receding(3, current_weight=0.5)


def test_current_weight_does_not_move_the_empty_history_optimum():
    matrix = _matrix([[3.0, 1.0, 0.2], [0.5, 2.0, 1.0]], [2, 1])
    a = solve_dynamic_pf(matrix, History.receding(4)).probabilities.p
    b = solve_asymptotic_pf(matrix).probabilities.p
    np.testing.assert_allclose(matrix.values @ a, matrix.values @ b, rtol=1e-3)


# -- max throughput ----------------------------------------------------------------


def test_max_throughput_vertex():
    probs = solve_max_throughput(_matrix([[1.0, 3.0, 0.0], [2.0, 1.0, 0.5]]))
    np.testing.assert_array_equal(probs.p, [0.0, 1.0, 0.0])


def test_max_throughput_weighting():
    matrix = _matrix([[1.0, 0.0], [0.0, 0.6]], weights=[1.0, 2.0])
    np.testing.assert_array_equal(solve_max_throughput(matrix).p, [0.0, 1.0])
    np.testing.assert_array_equal(solve_max_throughput(matrix, weighted=False).p, [1.0, 0.0])


def test_max_throughput_ties_split():
    np.testing.assert_allclose(solve_max_throughput(_matrix([[1.0, 1.0]])).p, [0.5, 0.5])


# -- patterns ----------------------------------------------------------------------


def test_pattern_frequencies_follow_probabilities():
    probs = StateProbabilities((3, 5, 6), [0.5, 0.3, 0.2])
    pattern = build_pattern(probs, 20_000, seed=4, n_stations=3)
    counts = pattern.frequencies().reindex([3, 5, 6], fill_value=0.0).to_numpy() * len(pattern)
    assert stats.chisquare(counts, probs.p * len(pattern)).pvalue > 1e-3


def test_pattern_activity_and_wrap(tmp_path):
    pattern = AbsPattern([5, 2], 3)
    np.testing.assert_array_equal(pattern.activity(), [[True, False, True], [False, True, False]])
    assert pattern.state_at(3) == 2
    pattern.to_text(tmp_path / "pattern.txt")
    assert (tmp_path / "pattern.txt").read_text().splitlines() == ["1,0,1", "0,1,0"]


def test_pattern_rejects_bad_states():
    with pytest.raises(DomainError):
        AbsPattern([8], 3)
    with pytest.raises(DomainError):
        AbsPattern([], 3)


def test_parse_ratio():
    assert parse_ratio("4/8") == (4, 8)
    assert parse_ratio(0.75) == (3, 4)
    for bad in ("0/8", "9/8"):
        with pytest.raises(DomainError):
            parse_ratio(bad)


@pytest.mark.parametrize("ratio", ["4/8", "5/8", "6/8"])
def test_fixed_ratio_blocks(ratio):
    used, total = parse_ratio(ratio)
    pattern = fixed_ratio_pattern(ratio, 7, 80, seed=3)
    activity = pattern.activity().reshape(80 // total, total, 7)
    assert np.all(activity.sum(axis=1) == used)


def test_pattern_is_reproducible_per_seed():
    probs = StateProbabilities((1, 2, 3), [0.2, 0.5, 0.3])
    a = build_pattern(probs, 80, seed=11, n_stations=2)
    b = build_pattern(probs, 80, seed=11, n_stations=2)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, build_pattern(probs, 80, seed=12, n_stations=2).states)


def test_pattern_counts_stay_within_binomial_bounds():
    probs = StateProbabilities((1, 2), [0.5, 0.5])
    low, high = stats.binom.interval(0.99, 80, 0.5)
    inside = 0
    for seed in range(200):
        count = int(np.sum(build_pattern(probs, 80, seed=seed, n_stations=2).states == 1))
        inside += low <= count <= high
    assert inside >= 190


def test_fixed_ratio_stations_blank_independently():
    counts = np.zeros(8)
    n = 2000
    for seed in range(n):
        counts[fixed_ratio_pattern("4/8", 3, 80, seed=seed).state_at(0)] += 1
    np.testing.assert_allclose(counts / n, np.full(8, 1.0 / 8.0), atol=0.03)
