"""ABS state space, cell association, scheduler shares and per-state throughput."""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import pandas as pd

from absf.deployment import dbm_to_w
from absf.errors import DomainError, ResourceError
from absf.radio import (
    McsTable,
    PathlossModel,
    default_mcs_table,
    mean_received_power,
    sinr_cdf_from_powers,
    transmission_efficiency,
)

logger = logging.getLogger(__name__)

MAX_FULL_ENUMERATION = 20
DEFAULT_K_SYM = 16.8e6  # 100 PRB x 12 subcarriers x 14 symbols per ms


@dataclass(frozen=True)
class Network:
    """Everything a per-state evaluation needs besides group positions."""

    deployment: object
    pathloss: PathlossModel = field(default_factory=PathlossModel)
    mcs: McsTable = field(default_factory=default_mcs_table)
    noise_var: float = float(dbm_to_w(-101.0))
    noise_model: str = "gaussian-squared"
    k_sym: float = DEFAULT_K_SYM

    @property
    def n_stations(self):
        return len(self.deployment)


@dataclass(frozen=True)
class AbsState:
    """A subset B_s of active stations; bit b of `id` is set iff station b is active."""

    id: int
    n_stations: int

    def __post_init__(self):
        if not 0 <= self.id < 2 ** self.n_stations:
            raise DomainError(f"state id {self.id} out of range for {self.n_stations} stations")

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        return cls(id=int(sum(1 << b for b in np.flatnonzero(mask))), n_stations=len(mask))

    @classmethod
    def all_active(cls, n_stations):
        return cls(id=2 ** n_stations - 1, n_stations=n_stations)

    @cached_property
    def mask(self):
        return np.array([(self.id >> b) & 1 for b in range(self.n_stations)], dtype=bool)

    @property
    def active_indices(self):
        return np.flatnonzero(self.mask)

    @property
    def n_active(self):
        return int(self.mask.sum())

    def bits(self):
        return ",".join(str(int(v)) for v in self.mask)


def enumerate_states(n_stations, max_states=None, seed=0):
    """All 2^n states in id order, or a uniform sample capped at max_states.

    A sample always keeps the all-active state and the n all-but-one states.
    """
    if n_stations < 1:
        raise DomainError("n_stations must be >= 1")
    total = 2 ** n_stations
    if max_states is None or max_states >= total:
        if n_stations > MAX_FULL_ENUMERATION:
            raise ResourceError(f"{total} states for {n_stations} stations; pass max_states to sample")
        return [AbsState(i, n_stations) for i in range(total)]

    full = total - 1
    required = {full} | {full ^ (1 << b) for b in range(n_stations)}
    if max_states < len(required):
        raise DomainError(f"max_states must be at least {len(required)} for {n_stations} stations")
    rng = np.random.default_rng(seed)
    chosen = set(required)
    while len(chosen) < max_states:
        chosen.update(int(v) for v in rng.integers(0, total, size=max_states - len(chosen)))
    ids = sorted(chosen)
    if len(ids) > max_states:
        extra = sorted(set(ids) - required)
        drop = set(rng.choice(extra, size=len(ids) - max_states, replace=False).tolist())
        ids = [i for i in ids if i not in drop]
    logger.info(f"Sampled {len(ids)} of {total} ABS states")
    return [AbsState(i, n_stations) for i in ids]


def random_member_offsets(size, radius_m, rng):
    """Member offsets uniform in a disc, re-centred on the group's centre of gravity."""
    if size < 1:
        raise DomainError("group size must be >= 1")
    r = radius_m * np.sqrt(rng.random(size))
    theta = rng.uniform(0.0, 2.0 * np.pi, size)
    offsets = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return offsets - offsets.mean(axis=0)


@dataclass(frozen=True, eq=False)
class Group:
    id: int
    size: int
    centroid: tuple
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.size < 1:
            raise DomainError(f"group {self.id}: size must be >= 1")
        if self.offsets is None:
            object.__setattr__(self, "offsets", np.zeros((self.size, 2)))
        elif np.shape(self.offsets) != (self.size, 2):
            raise DomainError(f"group {self.id}: offsets must have shape ({self.size}, 2)")

    @property
    def member_points(self):
        return np.asarray(self.centroid, dtype=float) + self.offsets

    def moved_to(self, centroid):
        return Group(self.id, self.size, tuple(centroid), self.offsets)


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Group positions at one instant."""

    groups: tuple
    timestamp: float = 0.0

    def __len__(self):
        return len(self.groups)

    @cached_property
    def centroids(self):
        return np.array([g.centroid for g in self.groups], dtype=float).reshape(-1, 2)

    @cached_property
    def sizes(self):
        return np.array([g.size for g in self.groups], dtype=int)

    @cached_property
    def member_points(self):
        return np.concatenate([g.member_points for g in self.groups]).reshape(-1, 2)

    @cached_property
    def member_starts(self):
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)

    def resized(self, size):
        """Same centroids, every group of `size` members collapsed on its centroid."""
        return Snapshot(tuple(Group(g.id, size, g.centroid) for g in self.groups), self.timestamp)

    def check_inside(self, deployment):
        if not deployment.contains(self.centroids).all():
            raise DomainError("group centroids must lie inside the world rectangle")


def random_snapshot(deployment, sizes, member_radius_m, rng, timestamp=0.0):
    width, height = deployment.area_m
    groups = []
    for gid, size in enumerate(sizes):
        centroid = (float(rng.uniform(0.0, width)), float(rng.uniform(0.0, height)))
        groups.append(Group(gid, int(size), centroid, random_member_offsets(int(size), member_radius_m, rng)))
    return Snapshot(tuple(groups), timestamp)


@dataclass(frozen=True, eq=False)
class CellLoad:
    """Serving station per group (-1 when unassociated) and per-station size totals."""

    serving: np.ndarray
    sizes: np.ndarray
    n_stations: int

    @cached_property
    def totals(self):
        ok = self.serving >= 0
        return np.bincount(self.serving[ok], weights=self.sizes[ok], minlength=self.n_stations)

    def groups_of(self, station):
        return np.flatnonzero(self.serving == station)

    def total_size(self, station):
        return float(self.totals[station])


def serving_stations(rx, mask):
    """Strongest active station per row of rx; ties go to the lowest index, -1 if none active."""
    if not mask.any():
        return np.full(rx.shape[0], -1, dtype=int)
    masked = np.where(mask, rx, -np.inf)
    return np.argmax(masked, axis=-1).astype(int)


def associate(snapshot, state, network):
    rx = mean_received_power(snapshot.centroids, network.deployment, network.pathloss)
    return CellLoad(serving_stations(rx, state.mask), snapshot.sizes, network.n_stations)


def scheduler_share(c, load, k_sym):
    """D_c = K_sym U_c / sum of U_i co-served with c (0 when unassociated)."""
    station = load.serving[c]
    if station < 0:
        return 0.0
    return float(k_sym * load.sizes[c] / load.totals[station])


def scheduler_shares(load, k_sym):
    out = np.zeros(len(load.serving))
    ok = load.serving >= 0
    out[ok] = k_sym * load.sizes[ok] / load.totals[load.serving[ok]]
    return out


def _signal_and_interference(rx, serving, mask):
    signal = np.take_along_axis(rx, serving[:, None], axis=1)[:, 0]
    interference = np.where(mask, rx, 0.0)
    np.put_along_axis(interference, serving[:, None], 0.0, axis=1)
    return signal, interference


def centroid_efficiency(rx, serving, mask, sizes, network):
    """zeta at receivers with mean powers rx (P, B); 0 where serving is -1."""
    sizes = np.broadcast_to(np.asarray(sizes, dtype=float), serving.shape)
    zeta = np.zeros(len(serving))
    ok = serving >= 0
    if not ok.any():
        return zeta
    signal, interference = _signal_and_interference(rx[ok], serving[ok], mask)
    exponent = sizes[ok][:, None]

    def cdf(x):
        return sinr_cdf_from_powers(x, signal, interference, network.noise_var, network.noise_model) ** exponent

    zeta[ok] = transmission_efficiency(cdf, network.mcs)
    return zeta


def exact_efficiency(snapshot, serving, mask, network):
    """zeta with every member at its own position; the group CDF is the product over members."""
    zeta = np.zeros(len(snapshot))
    if not (serving >= 0).any():
        return zeta
    member_serving = np.repeat(serving, snapshot.sizes)
    ok_members = member_serving >= 0
    rx = mean_received_power(snapshot.member_points, network.deployment, network.pathloss)
    signal, interference = _signal_and_interference(rx[ok_members], member_serving[ok_members], mask)
    ok = serving >= 0
    starts = np.concatenate([[0], np.cumsum(snapshot.sizes[ok])[:-1]]).astype(int)

    def cdf(x):
        member_cdf = sinr_cdf_from_powers(x, signal, interference, network.noise_var, network.noise_model)
        return np.multiply.reduceat(member_cdf, starts, axis=0)

    zeta[ok] = transmission_efficiency(cdf, network.mcs)
    return zeta


def efficiency_vector(snapshot, state, network, mode="centroid", load=None):
    """zeta_c^s for every group of the snapshot."""
    if load is None:
        load = associate(snapshot, state, network)
    if mode == "centroid":
        rx = mean_received_power(snapshot.centroids, network.deployment, network.pathloss)
        return centroid_efficiency(rx, load.serving, state.mask, snapshot.sizes, network)
    if mode == "exact":
        return exact_efficiency(snapshot, load.serving, state.mask, network)
    raise DomainError(f"unknown efficiency mode {mode!r}")


def state_efficiency(group, state, network, mode="centroid"):
    return float(efficiency_vector(Snapshot((group,)), state, network, mode)[0])


@dataclass(frozen=True, eq=False)
class StateThroughput:
    state_id: int
    per_group: np.ndarray
    shares: np.ndarray
    efficiency: np.ndarray
    load: CellLoad

    @property
    def total(self):
        return float(self.per_group.sum())


def instantaneous_throughput(snapshot, state, network, mode="centroid"):
    """Gamma_c^s = D_c zeta_c^s for every group, plus the system total."""
    load = associate(snapshot, state, network)
    shares = scheduler_shares(load, network.k_sym)
    zeta = efficiency_vector(snapshot, state, network, mode, load)
    return StateThroughput(state.id, shares * zeta, shares, zeta, load)


def throughput_by_state(snapshot, states, network, mode="centroid"):
    """Matrix (groups x states) of Gamma_c^s for the snapshot."""
    out = np.zeros((len(snapshot), len(states)))
    for j, state in enumerate(states):
        out[:, j] = instantaneous_throughput(snapshot, state, network, mode).per_group
    return out


def throughput_table(snapshot, states, network, mode="centroid"):
    rows = []
    for state in states:
        result = instantaneous_throughput(snapshot, state, network, mode)
        served = result.load.serving >= 0
        rows.append(
            {
                "state_id": state.id,
                "active": state.bits(),
                "n_active": state.n_active,
                "system_throughput_bps": result.total,
                "mean_group_throughput_bps": float(result.per_group.mean()),
                "served_groups": int(served.sum()),
            }
        )
    return pd.DataFrame(rows)


def cell_summary(snapshot, state, network, mode="centroid"):
    """Average group throughput per serving cell."""
    result = instantaneous_throughput(snapshot, state, network, mode)
    rows = []
    for b, bs in enumerate(network.deployment.stations):
        members = result.load.groups_of(b)
        rows.append(
            {
                "station_id": bs.id,
                "active": bool(state.mask[b]),
                "n_groups": len(members),
                "users": result.load.total_size(b),
                "mean_group_throughput_bps": float(result.per_group[members].mean()) if len(members) else 0.0,
            }
        )
    return pd.DataFrame(rows)


def relay_gain(snapshot, state, network, group_size=5):
    """Average group throughput with every group of `group_size` over the same with size 1."""
    single = instantaneous_throughput(snapshot.resized(1), state, network).per_group.mean()
    grouped = instantaneous_throughput(snapshot.resized(group_size), state, network).per_group.mean()
    if single == 0:
        raise DomainError("no throughput without relay; gain undefined")
    return float(grouped / single)
