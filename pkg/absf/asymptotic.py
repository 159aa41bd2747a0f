"""Expected efficiency and throughput of groups whose centre of gravity follows a
spatial distribution, by raster quadrature over the coverage regions."""

import logging
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import comb

from absf.errors import ConfigError, DomainError, ResourceError
from absf.optimizer import ThroughputMatrix, check_simplex
from absf.radio import mean_received_power
from absf.states import AbsState, centroid_efficiency, serving_stations

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION_M = 2.0
MAX_EXACT_GROUPS = 22
CONVERGENCE_TOL = 0.01

_POINT_RE = re.compile(r"^\s*point\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)\s*$")


@dataclass(frozen=True, eq=False)
class SpatialDistribution:
    """Probability mass L_c on a set of support points (raster cell centres or a single point)."""

    points: np.ndarray
    mass: np.ndarray
    resolution_m: Optional[float] = None
    kind: str = "raster"
    area_m: Optional[tuple] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        mass = np.asarray(self.mass, dtype=float).reshape(-1)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "mass", mass)
        if len(points) != len(mass) or len(mass) == 0:
            raise DomainError("one mass value per support point is required")
        if np.any(mass < 0):
            raise DomainError("spatial mass must be >= 0")
        if abs(mass.sum() - 1.0) > 1e-9:
            raise DomainError(f"spatial mass sums to {mass.sum():.12f}, not 1")

    @classmethod
    def uniform(cls, area_m, resolution_m=DEFAULT_RESOLUTION_M):
        width, height = area_m
        nx = max(int(round(width / resolution_m)), 1)
        ny = max(int(round(height / resolution_m)), 1)
        xs = (np.arange(nx) + 0.5) * (width / nx)
        ys = (np.arange(ny) + 0.5) * (height / ny)
        gx, gy = np.meshgrid(xs, ys)
        points = np.column_stack([gx.ravel(), gy.ravel()])
        return cls(points, np.full(len(points), 1.0 / len(points)), float(resolution_m), "uniform", tuple(area_m))

    @classmethod
    def point(cls, x, y):
        return cls(np.array([[x, y]]), np.ones(1), None, "point")

    @classmethod
    def from_csv(cls, path):
        try:
            df = pd.read_csv(path, comment="#")
        except FileNotFoundError as e:
            raise ConfigError(f"spatial distribution file not found: {path}") from e
        missing = {"x_m", "y_m", "mass"} - set(df.columns)
        if missing:
            raise ConfigError(f"{path}: missing columns {', '.join(sorted(missing))}")
        mass = df["mass"].to_numpy(dtype=float)
        if np.any(mass < 0) or mass.sum() <= 0:
            raise ConfigError(f"{path}: mass must be >= 0 with a positive total")
        xs = np.unique(df["x_m"])
        resolution = float(np.min(np.diff(xs))) if len(xs) > 1 else None
        return cls(df[["x_m", "y_m"]].to_numpy(dtype=float), mass / mass.sum(), resolution, "raster")

    @classmethod
    def parse(cls, spec, area_m, resolution_m=DEFAULT_RESOLUTION_M):
        """'uniform', 'point(x,y)' or the path of a raster CSV."""
        if spec == "uniform":
            return cls.uniform(area_m, resolution_m)
        match = _POINT_RE.match(spec)
        if match:
            return cls.point(float(match.group(1)), float(match.group(2)))
        return cls.from_csv(spec)

    def refined(self):
        if self.kind != "uniform":
            raise DomainError("only uniform rasters can be refined")
        return SpatialDistribution.uniform(self.area_m, self.resolution_m / 2.0)


@dataclass(frozen=True, eq=False)
class CoverageMap:
    """Serving station of every support point in one state, and the region masses p_c(b)."""

    state_id: int
    serving: np.ndarray
    region_mass: np.ndarray

    def p(self, station):
        return float(self.region_mass[station])


@dataclass(frozen=True)
class ShareEstimate:
    value: float
    stderr: float = 0.0
    method: str = "exact"


@dataclass(frozen=True, eq=False)
class GroupProfile:
    """A group as the asymptotic model sees it: size and centre-of-gravity law."""

    id: int
    size: int
    distribution: SpatialDistribution


def _check_resolution(dist, network):
    if dist.resolution_m is not None and dist.resolution_m > network.deployment.min_spacing():
        logger.warning(
            f"Raster resolution {dist.resolution_m} m is coarser than the minimum station spacing "
            f"{network.deployment.min_spacing():.1f} m"
        )


def _received(dist, network):
    return mean_received_power(dist.points, network.deployment, network.pathloss)


def coverage_map(dist, state, network, rx=None):
    rx = _received(dist, network) if rx is None else rx
    serving = serving_stations(rx, state.mask)
    ok = serving >= 0
    region = np.bincount(serving[ok], weights=dist.mass[ok], minlength=network.n_stations)
    return CoverageMap(state.id, serving, region)


def expected_state_efficiency(dist, group_size, state, network, rx=None):
    """E[zeta_c^s] = sum over support points of L_c times the centroid-mode efficiency."""
    _check_resolution(dist, network)
    rx = _received(dist, network) if rx is None else rx
    serving = serving_stations(rx, state.mask)
    zeta = centroid_efficiency(rx, serving, state.mask, group_size, network)
    return float(dist.mass @ zeta)


def quadrature_change(dist, group_size, state, network):
    """Relative change of E[zeta] when the raster resolution is halved; warns above 1 %."""
    coarse = expected_state_efficiency(dist, group_size, state, network)
    fine = expected_state_efficiency(dist.refined(), group_size, state, network)
    change = abs(fine - coarse) / fine if fine else abs(fine - coarse)
    if change >= CONVERGENCE_TOL:
        logger.warning(f"Quadrature for state {state.id} moved by {change:.2%} after halving the resolution")
    return change


def asymptotic_efficiency(dist, group_size, probabilities, states, network):
    """sum_s P^s E[zeta_c^s]."""
    p = check_simplex(getattr(probabilities, "p", probabilities))
    if len(p) != len(states):
        raise DomainError("one probability per state is required")
    rx = _received(dist, network)
    per_state = np.array([expected_state_efficiency(dist, group_size, s, network, rx) for s in states])
    return float(per_state @ p)


def _share_power_set(u_c, p, u, k_sym):
    probs = np.ones(1)
    totals = np.zeros(1)
    for p_i, u_i in zip(p, u):
        probs = np.concatenate([probs * (1.0 - p_i), probs * p_i])
        totals = np.concatenate([totals, totals + u_i])
    return float(k_sym * np.sum(probs * (u_c / (u_c + totals))))


def _share_convolution(u_c, p, u, k_sym):
    sizes = np.asarray(u)
    if not np.all(sizes == np.round(sizes)):
        raise DomainError("convolution method needs integer group sizes")
    dist = np.ones(1)
    for p_i, u_i in zip(p, sizes.astype(int)):
        grown = np.zeros(len(dist) + u_i)
        grown[: len(dist)] += dist * (1.0 - p_i)
        grown[u_i:] += dist * p_i
        dist = grown
    totals = np.arange(len(dist))
    return float(k_sym * np.sum(dist * (u_c / (u_c + totals))))


def _share_monte_carlo(u_c, p, u, k_sym, n_samples, rng):
    if len(p) == 0:
        return float(k_sym), 0.0
    samples = np.empty(n_samples)
    chunk = 50_000
    for start in range(0, n_samples, chunk):
        stop = min(start + chunk, n_samples)
        placed = rng.random((stop - start, len(p))) < p
        samples[start:stop] = k_sym * u_c / (u_c + placed @ u)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n_samples))


def expected_share(u_c, others_p, others_u, k_sym, method="auto", n_samples=100_000, rng=None):
    """E[D_c | b]: expected symbols/s of group c given the other groups' placement
    probabilities p_i(b) in the same cell and their sizes U_i.

    method: 'exact' (power set, up to 22 other groups), 'monte-carlo',
    'convolution' (exact over integer total size) or 'auto'.
    """
    p = np.asarray(others_p, dtype=float).reshape(-1)
    u = np.asarray(others_u, dtype=float).reshape(-1)
    if p.shape != u.shape:
        raise DomainError("one size per placement probability is required")
    if np.any((p < 0) | (p > 1)):
        raise DomainError("placement probabilities must lie in [0, 1]")
    if u_c < 1 or np.any(u < 1):
        raise DomainError("group sizes must be >= 1")
    if method in ("auto", "monte-carlo") and np.all((p == 0) | (p == 1)):
        # placements are certain
        return ShareEstimate(float(k_sym * u_c / (u_c + u[p == 1].sum())), 0.0, "exact")
    if method == "auto":
        method = "exact" if len(p) <= MAX_EXACT_GROUPS else "monte-carlo"
    if method == "exact":
        if len(p) > MAX_EXACT_GROUPS:
            raise ResourceError(f"power set over {len(p)} groups; use method='monte-carlo'")
        return ShareEstimate(_share_power_set(u_c, p, u, k_sym), 0.0, "exact")
    if method == "convolution":
        return ShareEstimate(_share_convolution(u_c, p, u, k_sym), 0.0, "convolution")
    if method == "monte-carlo":
        rng = np.random.default_rng(0) if rng is None else rng
        value, stderr = _share_monte_carlo(u_c, p, u, k_sym, n_samples, rng)
        return ShareEstimate(value, stderr, "monte-carlo")
    raise DomainError(f"unknown share method {method!r}")


def expected_share_homogeneous(n_groups, p, k_sym):
    """Binomial closed form of E[D_c|b] when every group has the same size and law."""
    if n_groups < 1:
        raise DomainError("n_groups must be >= 1")
    k = np.arange(n_groups)
    weights = comb(n_groups - 1, k) * p ** k * (1.0 - p) ** (n_groups - 1 - k)
    return float(np.sum(weights * k_sym / (k + 1)))


def share_table(profiles, network, method="auto", n_samples=100_000, seed=0, state=None, rng=None):
    """E[D_c|b] for every group and station.

    Placement probabilities p_i(b) come from the coverage regions of `state`
    (all-active by default). E[D_c|b] conditions on c being under b, so only the
    other groups' p_i(b) enter.
    """
    state = AbsState.all_active(network.n_stations) if state is None else state
    rng = np.random.default_rng(seed) if rng is None else rng
    cache = {}
    region = np.zeros((len(profiles), network.n_stations))
    for i, prof in enumerate(profiles):
        key = id(prof.distribution)
        if key not in cache:
            cache[key] = coverage_map(prof.distribution, state, network).region_mass
        region[i] = cache[key]
    sizes = np.array([prof.size for prof in profiles], dtype=float)
    shares = np.zeros_like(region)
    worst = 0.0
    # groups with the same law and size see the same population of others
    done = {}
    for i, prof in enumerate(profiles):
        key = (id(prof.distribution), prof.size)
        if key in done:
            shares[i] = shares[done[key]]
            continue
        done[key] = i
        others = np.arange(len(profiles)) != i
        for b in np.flatnonzero(state.mask):
            est = expected_share(sizes[i], region[others, b], sizes[others], network.k_sym, method, n_samples, rng)
            shares[i, b] = est.value
            worst = max(worst, est.stderr)
    if worst:
        logger.debug(f"Largest Monte-Carlo share standard error: {worst:.3g} symbols/s")
    return shares


def expected_state_throughput(c, state, profiles, network, shares=None, rx=None):
    """E[Gamma_c^s] = sum_{b in B_s} E[D_c|b] * integral over A_b of L_c zeta_c^s."""
    prof = profiles[c]
    shares = share_table(profiles, network) if shares is None else shares
    rx = _received(prof.distribution, network) if rx is None else rx
    serving = serving_stations(rx, state.mask)
    zeta = centroid_efficiency(rx, serving, state.mask, prof.size, network)
    ok = serving >= 0
    return float(np.sum(prof.distribution.mass[ok] * zeta[ok] * shares[c, serving[ok]]))


def throughput_matrix(profiles, states, network, share_method="auto", n_samples=100_000, seed=0, coverage="state"):
    """ThroughputMatrix of E[Gamma_c^s] with PF weights w_c = U_c.

    coverage="state" takes E[D_c|b] from each state's own regions; "all-active"
    computes it once from the all-active regions for every state.
    """
    if coverage not in ("all-active", "state"):
        raise DomainError(f"unknown coverage {coverage!r}")
    rng = np.random.default_rng(seed)
    shares = share_table(profiles, network, share_method, n_samples, rng=rng) if coverage == "all-active" else None
    values = np.zeros((len(profiles), len(states)))
    rx_cache = {}
    for prof in profiles:
        if id(prof.distribution) not in rx_cache:
            _check_resolution(prof.distribution, network)
            rx_cache[id(prof.distribution)] = _received(prof.distribution, network)
    for j, state in enumerate(states):
        state_shares = shares if shares is not None else share_table(
            profiles, network, share_method, n_samples, state=state, rng=rng
        )
        zeta_cache = {}
        for i, prof in enumerate(profiles):
            key = (id(prof.distribution), prof.size)
            if key not in zeta_cache:
                rx = rx_cache[id(prof.distribution)]
                serving = serving_stations(rx, state.mask)
                zeta_cache[key] = (serving, centroid_efficiency(rx, serving, state.mask, prof.size, network))
            serving, zeta = zeta_cache[key]
            ok = serving >= 0
            values[i, j] = np.sum(prof.distribution.mass[ok] * zeta[ok] * state_shares[i, serving[ok]])
    logger.info(f"Asymptotic throughput matrix: {len(profiles)} groups x {len(states)} states ({coverage} coverage)")
    return ThroughputMatrix(
        values,
        tuple(s.id for s in states),
        np.array([prof.size for prof in profiles], dtype=float),
        tuple(prof.id for prof in profiles),
    )


def asymptotic_throughput(matrix, probabilities):
    """Per-group sum_s P^s E[Gamma_c^s]; linear in P."""
    p = check_simplex(getattr(probabilities, "p", probabilities))
    return matrix.values @ p
