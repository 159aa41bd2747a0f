"""Subframe-granular event-driven simulator of ABS patterns with mmD2D relay groups."""

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Optional, Tuple

import numpy as np
import pandas as pd
import simpy
from pydantic import BaseModel, Field, model_validator
from scipy import stats

from absf.asymptotic import DEFAULT_RESOLUTION_M, GroupProfile, SpatialDistribution, throughput_matrix
from absf.errors import DomainError, InfeasibleError
from absf.optimizer import (
    STANDARD_PATTERN_LENGTH,
    AbsPattern,
    History,
    StateProbabilities,
    ThroughputMatrix,
    build_pattern,
    fixed_ratio_pattern,
    parse_ratio,
    solve_asymptotic_pf,
    solve_dynamic_pf,
    solve_max_throughput,
)
from absf.radio import mean_received_power, sample_noise
from absf.states import DEFAULT_K_SYM, Snapshot, enumerate_states, serving_stations, throughput_by_state

logger = logging.getLogger(__name__)

POLICIES = ("legacy", "fixed-ratio", "asymptotic-pf", "dynamic-pf", "max-throughput")


class SimConfig(BaseModel):
    duration_s: float = Field(500.0, gt=0)
    subframe_ms: float = Field(1.0, gt=0)
    seed: int = 0
    k_sym: float = Field(DEFAULT_K_SYM, gt=0)
    area_m: Tuple[float, float] = (150.0, 150.0)
    mobility: Literal["rwp", "static"] = "rwp"
    speed_min_mps: float = Field(1.0, gt=0)
    speed_max_mps: float = Field(10.0, gt=0)
    pause_max_s: float = Field(0.0, ge=0)
    interval_ms: float = Field(500.0, gt=0)
    scheduler: Literal["wrr"] = "wrr"
    noise_model: Literal["constant", "gaussian-squared"] = "constant"
    pattern_length: int = Field(STANDARD_PATTERN_LENGTH, ge=1)
    history_window: int = Field(20, ge=0)
    history_decay: Optional[float] = None
    history_current_weight: Optional[float] = Field(None, ge=1)
    history_mode: Literal["closed-loop", "open-loop"] = "closed-loop"
    efficiency_mode: Literal["centroid", "exact"] = "centroid"
    max_states: Optional[int] = None
    share_method: Literal["auto", "exact", "monte-carlo", "convolution"] = "auto"
    raster_resolution_m: float = Field(DEFAULT_RESOLUTION_M, gt=0)
    asymptotic_coverage: Literal["state", "all-active"] = "state"
    ci_batches: int = Field(20, ge=2)
    confidence: float = Field(0.95, gt=0, lt=1)

    @model_validator(mode="after")
    def _check(self):
        if self.speed_max_mps < self.speed_min_mps:
            raise ValueError("speed_max_mps must be >= speed_min_mps")
        ratio = self.interval_ms / self.subframe_ms
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("interval_ms must be a multiple of subframe_ms")
        return self

    @property
    def subframe_s(self):
        return self.subframe_ms / 1000.0

    @property
    def n_subframes(self):
        return int(round(self.duration_s / self.subframe_s))

    @property
    def interval_subframes(self):
        return int(round(self.interval_ms / self.subframe_ms))


@dataclass
class RwpState:
    """Random WayPoint state of every group's centre of gravity."""

    positions: np.ndarray
    waypoints: np.ndarray
    speeds: np.ndarray
    pause_s: np.ndarray

    @classmethod
    def initial(cls, positions, area_m, speed_range, rng):
        positions = np.asarray(positions, dtype=float).copy()
        n = len(positions)
        return cls(
            positions=positions,
            waypoints=_uniform_points(n, area_m, rng),
            speeds=rng.uniform(speed_range[0], speed_range[1], n),
            pause_s=np.zeros(n),
        )


def _uniform_points(n, area_m, rng):
    return np.column_stack([rng.uniform(0.0, area_m[0], n), rng.uniform(0.0, area_m[1], n)])


def step_mobility(state, dt, rng, area_m, speed_range, pause_max_s=0.0):
    """Advance every centre of gravity by dt seconds toward its waypoint."""
    if dt <= 0:
        raise DomainError("dt must be > 0")
    positions = state.positions.copy()
    waypoints = state.waypoints.copy()
    speeds = state.speeds.copy()
    pause = state.pause_s.copy()

    paused = pause > 0
    pause[paused] = np.maximum(pause[paused] - dt, 0.0)
    moving = ~paused
    delta = waypoints - positions
    dist = np.hypot(delta[:, 0], delta[:, 1])
    step = speeds * dt
    arrive = moving & (step >= dist)
    move = moving & ~arrive
    positions[move] += delta[move] * (step[move] / dist[move])[:, None]
    positions[arrive] = waypoints[arrive]

    n_arrived = int(arrive.sum())
    if n_arrived:
        waypoints[arrive] = _uniform_points(n_arrived, area_m, rng)
        speeds[arrive] = rng.uniform(speed_range[0], speed_range[1], n_arrived)
        if pause_max_s > 0:
            pause[arrive] = rng.uniform(0.0, pause_max_s, n_arrived)
    return RwpState(positions, waypoints, speeds, pause)


class WeightedRoundRobin:
    """Smooth weighted round robin per cell, weights U_c, ties to the lowest group index."""

    def __init__(self):
        self.counters = {}

    def pick(self, cell, members, weights):
        counters = self.counters.setdefault(cell, {})
        members = [int(m) for m in members]
        weights = [float(w) for w in weights]
        current = set(members)
        for g in [g for g in counters if g not in current]:
            del counters[g]
        best = None
        for g, w in zip(members, weights):
            counters[g] = counters.get(g, 0.0) + w
            if best is None or counters[g] > counters[best]:
                best = g
        counters[best] -= sum(weights)
        return best


def jain_index(values):
    """(sum x)^2 / (n sum x^2)."""
    x = np.asarray(values, dtype=float).reshape(-1)
    if len(x) == 0:
        raise DomainError("JFI needs at least one value")
    if np.any(x < 0):
        raise DomainError("JFI values must be >= 0")
    squares = float(np.sum(x * x))
    if squares == 0:
        raise DomainError("JFI is undefined when every value is zero")
    return float(x.sum() ** 2 / (len(x) * squares))


def batch_means_ci(series, n_batches=20, confidence=0.95):
    """(mean, low, high) from batch means with a Student-t interval."""
    series = np.asarray(series, dtype=float)
    if len(series) == 0:
        raise DomainError("empty series")
    k = min(n_batches, len(series))
    size = len(series) // k
    batches = series[: k * size].reshape(k, size).mean(axis=1)
    mean = float(batches.mean())
    if k < 2:
        return mean, mean, mean
    half = float(stats.t.ppf((1.0 + confidence) / 2.0, k - 1) * batches.std(ddof=1) / math.sqrt(k))
    return mean, mean - half, mean + half


def per_user(group_throughput, sizes):
    """Group throughput shared equally among members, one entry per user."""
    return np.repeat(np.asarray(group_throughput, dtype=float) / sizes, sizes)


@dataclass
class MetricsReport:
    policy: str
    seed: int
    interval_s: float
    group_ids: tuple
    group_sizes: np.ndarray
    interval_throughput: np.ndarray  # intervals x groups, bit/s
    history_window: int = 20
    ci_batches: int = 20
    confidence: float = 0.95
    history_mode: str = "closed-loop"

    @property
    def timeseries(self):
        n_int, n_groups = self.interval_throughput.shape
        return pd.DataFrame(
            {
                "time_s": np.repeat(np.arange(n_int) * self.interval_s, n_groups),
                "group_id": np.tile(self.group_ids, n_int),
                "throughput_bps": self.interval_throughput.reshape(-1),
            }
        )

    @property
    def system_series(self):
        return self.interval_throughput.sum(axis=1)

    @property
    def group_mean(self):
        return self.interval_throughput.mean(axis=0)

    @property
    def per_user_throughput(self):
        return per_user(self.group_mean, self.group_sizes)

    @property
    def system_throughput(self):
        return float(self.system_series.mean())

    @property
    def jfi(self):
        return jain_index(self.per_user_throughput)

    @property
    def jfi_windowed(self):
        values = []
        width = self.history_window + 1
        for n in range(len(self.interval_throughput)):
            window = self.interval_throughput[max(0, n - width + 1) : n + 1].mean(axis=0)
            if window.any():
                values.append(jain_index(per_user(window, self.group_sizes)))
        return float(np.mean(values)) if values else 0.0

    def ci(self):
        return batch_means_ci(self.system_series, self.ci_batches, self.confidence)

    def summary_row(self):
        _, low, high = self.ci()
        return {
            "policy": self.policy,
            "seed": self.seed,
            "system_throughput": self.system_throughput,
            "jfi": self.jfi,
            "jfi_windowed": self.jfi_windowed,
            "ci_low": low,
            "ci_high": high,
        }


def parse_policy(name):
    """'fixed-ratio:4/8' -> ('fixed-ratio', (4, 8)); other names map to (name, None)."""
    kind, _, arg = name.partition(":")
    if kind not in POLICIES:
        raise DomainError(f"unknown policy {name!r}; expected one of {', '.join(POLICIES)}")
    if kind == "fixed-ratio":
        if not arg:
            raise DomainError("fixed-ratio needs a ratio, e.g. fixed-ratio:4/8")
        return kind, parse_ratio(arg)
    if arg:
        raise DomainError(f"policy {kind} takes no argument")
    return kind, None


class Simulator:
    """One run: a controller, a mobility and a subframe process on a simpy clock
    whose unit is one subframe."""

    def __init__(self, network, groups, config, policy="legacy", asymptotic_matrix=None):
        self.config = config
        self.network = replace(network, k_sym=config.k_sym, noise_model=config.noise_model)
        self.groups = tuple(groups)
        self.policy_name = policy
        self.policy, self.ratio = parse_policy(policy)
        self.sizes = np.array([g.size for g in self.groups], dtype=int)
        self.offsets = [g.offsets for g in self.groups]
        self.n_stations = self.network.n_stations

        mobility_seq, fading_seq, pattern_seq = np.random.SeedSequence(config.seed).spawn(3)
        self.mobility_rng = np.random.default_rng(mobility_seq)
        self.fading_rng = np.random.default_rng(fading_seq)
        self.pattern_rng = np.random.default_rng(pattern_seq)

        self.rwp = RwpState.initial(
            np.array([g.centroid for g in self.groups], dtype=float),
            config.area_m,
            (config.speed_min_mps, config.speed_max_mps),
            self.mobility_rng,
        )
        self.scheduler = WeightedRoundRobin()
        self.pattern = AbsPattern.constant(2 ** self.n_stations - 1, self.n_stations)
        self.pattern_start = 0
        self.states = None
        self.history = None
        self.asymptotic_matrix = asymptotic_matrix
        self.last_probabilities = None
        self.last_matrix = None
        self.last_served = {}

        self.interval_bits = np.zeros(len(self.groups))
        self.interval_rows = []
        self.served_subframes = np.zeros(self.n_stations, dtype=int)
        self.active_subframes = np.zeros(self.n_stations, dtype=int)

    # -- world -----------------------------------------------------------

    def snapshot(self, timestamp=0.0):
        groups = tuple(g.moved_to(pos) for g, pos in zip(self.groups, self.rwp.positions))
        return Snapshot(groups, timestamp)

    def step_subframe(self, state_id, rng=None):
        """Serve one subframe under ABS state `state_id`; returns bits per group."""
        rng = self.fading_rng if rng is None else rng
        mask = ((state_id >> np.arange(self.n_stations)) & 1).astype(bool)
        bits = np.zeros(len(self.groups))
        self.last_served = {}
        if not mask.any():
            return bits

        centroids = self.rwp.positions
        deployment, pathloss = self.network.deployment, self.network.pathloss
        serving = serving_stations(mean_received_power(centroids, deployment, pathloss), mask)
        served = []
        self.active_subframes += mask
        for b in np.flatnonzero(mask):
            members = np.flatnonzero(serving == b)
            if len(members) == 0:
                continue
            g = self.scheduler.pick(int(b), members, self.sizes[members])
            served.append((int(b), g))
            self.last_served[int(b)] = g
            self.served_subframes[b] += 1
        if not served:
            return bits

        chosen = [g for _, g in served]
        stations = np.repeat([b for b, _ in served], self.sizes[chosen])
        points = np.concatenate([centroids[g] + self.offsets[g] for g in chosen])
        faded = rng.standard_exponential((len(points), self.n_stations)) * mean_received_power(
            points, deployment, pathloss
        )
        signal = faded[np.arange(len(points)), stations]
        interference = (faded * mask).sum(axis=1) - signal
        noise = sample_noise(self.network.noise_var, len(points), rng, self.config.noise_model)
        sinr = signal / (interference + noise)
        starts = np.concatenate([[0], np.cumsum(self.sizes[chosen])[:-1]]).astype(int)
        relay_sinr = np.maximum.reduceat(sinr, starts)
        bits[chosen] = self.network.mcs.bits_for(relay_sinr) * self.network.k_sym * self.config.subframe_s
        return bits

    # -- controller ------------------------------------------------------

    def _states(self):
        if self.states is None:
            self.states = enumerate_states(self.n_stations, self.config.max_states, self.config.seed)
        return self.states

    def _matrix_now(self, timestamp):
        states = self._states()
        values = throughput_by_state(self.snapshot(timestamp), states, self.network, self.config.efficiency_mode)
        return ThroughputMatrix(values, tuple(s.id for s in states), self.sizes.astype(float))

    def _asymptotic_matrix(self):
        if self.asymptotic_matrix is None:
            if self.config.mobility == "static":
                profiles = [GroupProfile(g.id, g.size, SpatialDistribution.point(*g.centroid)) for g in self.groups]
                coverage = "state"
            else:
                uniform = SpatialDistribution.uniform(self.config.area_m, self.config.raster_resolution_m)
                profiles = [GroupProfile(g.id, g.size, uniform) for g in self.groups]
                coverage = self.config.asymptotic_coverage
            self.asymptotic_matrix = throughput_matrix(
                profiles, self._states(), self.network, self.config.share_method, seed=self.config.seed, coverage=coverage
            )
        return self.asymptotic_matrix

    def _seed(self):
        return int(self.pattern_rng.integers(0, 2**63 - 1))

    def decide(self, now):
        """Issue the pattern for the interval starting at subframe `now`."""
        length = self.config.pattern_length
        timestamp = now * self.config.subframe_s
        if self.policy == "legacy":
            return
        if self.policy == "fixed-ratio":
            if now == 0:
                self.pattern = fixed_ratio_pattern(self.ratio, self.n_stations, length, self._seed())
                self.pattern_start = 0
            return
        elif self.policy == "asymptotic-pf":
            if self.last_probabilities is None:
                self.last_probabilities = solve_asymptotic_pf(self._asymptotic_matrix()).probabilities
                self.pattern = build_pattern(self.last_probabilities, length, self._seed(), self.n_stations)
            return
        elif self.policy == "dynamic-pf":
            if self.history is None:
                if self.config.history_decay is None:
                    self.history = History.receding(self.config.history_window, self.config.history_current_weight)
                else:
                    self.history = History.exponential(self.config.history_window, self.config.history_decay)
            self.last_matrix = self._matrix_now(timestamp)
            try:
                result = solve_dynamic_pf(self.last_matrix, self.history)
            except InfeasibleError as e:
                logger.warning(f"t={timestamp:.3f}s: {e}; keeping every station active")
                self.last_probabilities = StateProbabilities.vertex(
                    self.last_matrix.state_ids, self.last_matrix.state_ids[-1]
                )
                self.pattern = AbsPattern.constant(self.last_matrix.state_ids[-1], self.n_stations)
                self.pattern_start = now
                return
            self.last_probabilities = result.probabilities
            self.pattern = build_pattern(result.probabilities, length, self._seed(), self.n_stations)
            logger.debug(f"t={timestamp:.3f}s dynamic-pf objective {result.objective:.4f}")
        elif self.policy == "max-throughput":
            self.last_matrix = self._matrix_now(timestamp)
            self.last_probabilities = solve_max_throughput(self.last_matrix, weighted=False)
            self.pattern = build_pattern(self.last_probabilities, length, self._seed(), self.n_stations)
        self.pattern_start = now

    def _close_interval(self):
        measured = self.interval_bits / (self.config.interval_subframes * self.config.subframe_s)
        self.interval_rows.append(measured)
        if self.policy == "dynamic-pf" and self.history is not None:
            if self.config.history_mode == "closed-loop":
                self.history.push(measured)
            else:
                self.history.push(self.last_matrix.values @ self.last_probabilities.p)
        self.interval_bits = np.zeros(len(self.groups))

    # -- processes -------------------------------------------------------

    def _controller(self, env):
        while True:
            if env.now > 0:
                self._close_interval()
            self.decide(int(env.now))
            yield env.timeout(self.config.interval_subframes)

    def _subframes(self, env):
        while True:
            state_id = self.pattern.state_at(int(env.now) - self.pattern_start)
            self.interval_bits += self.step_subframe(state_id)
            yield env.timeout(1)

    def _mobility(self, env):
        speed_range = (self.config.speed_min_mps, self.config.speed_max_mps)
        while True:
            yield env.timeout(1)
            self.rwp = step_mobility(
                self.rwp, self.config.subframe_s, self.mobility_rng, self.config.area_m, speed_range, self.config.pause_max_s
            )

    def run(self):
        n_subframes = self.config.n_subframes
        if n_subframes % self.config.interval_subframes:
            raise DomainError("duration must hold a whole number of intervals")
        logger.info(f"Simulating {self.policy_name} for {self.config.duration_s} s, seed {self.config.seed}")
        env = simpy.Environment()
        env.process(self._controller(env))
        env.process(self._subframes(env))
        if self.config.mobility == "rwp":
            env.process(self._mobility(env))
        env.run(until=n_subframes)
        self._close_interval()
        report = MetricsReport(
            policy=self.policy_name,
            seed=self.config.seed,
            interval_s=self.config.interval_ms / 1000.0,
            group_ids=tuple(g.id for g in self.groups),
            group_sizes=self.sizes,
            interval_throughput=np.array(self.interval_rows),
            history_window=self.config.history_window,
            ci_batches=self.config.ci_batches,
            confidence=self.config.confidence,
            history_mode=self.config.history_mode,
        )
        logger.info(
            f"{self.policy_name} seed {self.config.seed}: system {report.system_throughput / 1e6:.2f} Mbit/s, "
            f"JFI {report.jfi:.3f}"
        )
        return report


def run_experiment(network, groups, config, policy, asymptotic_matrix=None):
    return Simulator(network, groups, config, policy, asymptotic_matrix).run()


def simulate_static_state(snapshot, state, network, subframes, seed=0, noise_model="constant", k_sym=None):
    """System bit rate of every subframe with groups frozen and one ABS state enforced."""
    config = SimConfig(
        duration_s=max(subframes, 1) / 1000.0,
        interval_ms=1.0,
        mobility="static",
        seed=seed,
        noise_model=noise_model,
        k_sym=network.k_sym if k_sym is None else k_sym,
        area_m=network.deployment.area_m,
    )
    sim = Simulator(network, snapshot.groups, config)
    out = np.empty(subframes)
    for t in range(subframes):
        out[t] = sim.step_subframe(state.id).sum() / config.subframe_s
    return out
