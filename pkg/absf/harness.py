"""Scenario definition and experiment orchestration behind the CLI and the lab pages."""

import hashlib
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
import toml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from scipy import stats

import absf
from absf.asymptotic import DEFAULT_RESOLUTION_M, GroupProfile, SpatialDistribution, throughput_matrix
from absf.deployment import dbm_to_w, generate_grid_deployment, load_deployment
from absf.errors import ConfigError
from absf.optimizer import (
    STANDARD_PATTERN_LENGTH,
    AbsPattern,
    StateProbabilities,
    ThroughputMatrix,
    build_pattern,
    export_probabilities,
    fixed_ratio_pattern,
    solve_asymptotic_pf,
    solve_dynamic_pf,
    solve_max_throughput,
)
from absf.radio import PathlossModel, default_mcs_table, load_mcs_table
from absf.sim import SimConfig, batch_means_ci, parse_policy, run_experiment, simulate_static_state
from absf.states import (
    DEFAULT_K_SYM,
    AbsState,
    Network,
    cell_summary,
    enumerate_states,
    instantaneous_throughput,
    random_snapshot,
    relay_gain,
    throughput_by_state,
    throughput_table,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Scenario",
    "load_scenario",
    "dump_scenario",
    "generate_grid_deployment",
    "build_network",
    "build_snapshot",
    "run_suite",
    "analyze",
    "optimize",
    "validate",
]

VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "simpy", "pydantic", "toml")


class DeploymentSpec(BaseModel):
    kind: Literal["grid", "file"] = "grid"
    n_stations: int = Field(7, ge=1)
    isd_m: float = Field(50.0, gt=0)
    power_mw: float = Field(250.0, gt=0)
    path: Optional[str] = None
    area_m: Tuple[float, float] = (150.0, 150.0)

    @model_validator(mode="after")
    def _check_file(self):
        if self.kind == "file":
            if not self.path:
                raise ValueError("deployment.kind = 'file' needs deployment.path")
            if not os.path.exists(self.path):
                raise ValueError(f"deployment file not found: {self.path}")
        if min(self.area_m) <= 0:
            raise ValueError("area_m must be positive")
        return self


class GroupSpec(BaseModel):
    count: int = Field(50, ge=1)
    size_min: int = Field(1, ge=1)
    size_max: int = Field(5, ge=1)
    sizes: Optional[List[int]] = None
    member_radius_m: float = Field(5.0, ge=0)
    distribution: str = "uniform"

    @model_validator(mode="after")
    def _check_sizes(self):
        if self.size_max < self.size_min:
            raise ValueError("size_max must be >= size_min")
        if self.sizes is not None:
            if len(self.sizes) != self.count:
                raise ValueError(f"{len(self.sizes)} explicit sizes for {self.count} groups")
            if any(s < 1 for s in self.sizes):
                raise ValueError("group sizes must be >= 1")
        if self.distribution != "uniform" and not self.distribution.startswith("point(") and not os.path.exists(
            self.distribution
        ):
            raise ValueError(f"spatial distribution file not found: {self.distribution}")
        return self


class MobilitySpec(BaseModel):
    model: Literal["rwp", "static"] = "rwp"
    speed_min_mps: float = Field(1.0, gt=0)
    speed_max_mps: float = Field(10.0, gt=0)
    pause_max_s: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check_speeds(self):
        if self.speed_max_mps < self.speed_min_mps:
            raise ValueError("speed_max_mps must be >= speed_min_mps")
        return self


class RadioSpec(BaseModel):
    noise_dbm: float = -101.0
    noise_model: Literal["gaussian-squared", "constant"] = "gaussian-squared"
    sim_noise_model: Literal["gaussian-squared", "constant"] = "constant"
    k_sym: float = Field(DEFAULT_K_SYM, gt=0)
    mcs_path: Optional[str] = None
    pathloss: PathlossModel = Field(default_factory=PathlossModel)

    @field_validator("mcs_path")
    @classmethod
    def _mcs_exists(cls, v):
        if v is not None and not os.path.exists(v):
            raise ValueError(f"MCS table not found: {v}")
        return v


class SimSpec(BaseModel):
    duration_s: float = Field(500.0, gt=0)
    subframe_ms: float = Field(1.0, gt=0)
    t_interval_ms: float = Field(500.0, gt=0)
    pattern_length: int = Field(STANDARD_PATTERN_LENGTH, ge=1)
    history_window: int = Field(20, ge=0)
    history_decay: Optional[float] = None
    history_current_weight: Optional[float] = Field(None, ge=1)
    history_mode: Literal["closed-loop", "open-loop"] = "closed-loop"
    efficiency_mode: Literal["centroid", "exact"] = "centroid"
    ci_batches: int = Field(20, ge=2)
    confidence: float = Field(0.95, gt=0, lt=1)
    workers: int = Field(1, ge=1)


class OptimizerSpec(BaseModel):
    max_states: Optional[int] = None
    share_method: Literal["auto", "exact", "monte-carlo", "convolution"] = "auto"
    share_samples: int = Field(100_000, ge=1)
    raster_resolution_m: float = Field(DEFAULT_RESOLUTION_M, gt=0)
    coverage: Literal["state", "all-active"] = "state"


class ValidationSpec(BaseModel):
    subframes: int = Field(20_000, ge=2)
    n_states: int = Field(10, ge=1)
    states: Optional[List[int]] = None
    group_sizes: List[int] = Field(default_factory=lambda: [1, 5])
    confidence: float = Field(0.95, gt=0, lt=1)


class OutputSpec(BaseModel):
    dir: str = "results"


class Scenario(BaseModel):
    name: str = "scenario"
    deployment: DeploymentSpec = Field(default_factory=DeploymentSpec)
    groups: GroupSpec = Field(default_factory=GroupSpec)
    mobility: MobilitySpec = Field(default_factory=MobilitySpec)
    radio: RadioSpec = Field(default_factory=RadioSpec)
    sim: SimSpec = Field(default_factory=SimSpec)
    optimizer: OptimizerSpec = Field(default_factory=OptimizerSpec)
    validation: ValidationSpec = Field(default_factory=ValidationSpec)
    policies: List[str] = Field(default_factory=lambda: ["legacy"], min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator("policies")
    @classmethod
    def _check_policies(cls, v):
        for name in v:
            parse_policy(name)
        return v

    def canonical_json(self):
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _resolve_paths(raw, base_dir):
    """Rewrite relative file references so they resolve against the scenario's directory."""

    def fix(section, key):
        value = raw.get(section, {}).get(key)
        if not isinstance(value, str) or os.path.isabs(value) or value == "uniform" or value.startswith("point("):
            return
        candidate = os.path.join(base_dir, value)
        if os.path.exists(candidate):
            raw[section][key] = os.path.abspath(candidate)

    fix("deployment", "path")
    fix("groups", "distribution")
    fix("radio", "mcs_path")
    return raw


def load_scenario(path):
    path = Path(path)
    if path.suffix not in (".toml", ".json"):
        raise ConfigError(f"{path}: scenario files must be .toml or .json")
    try:
        with open(path) as f:
            raw = toml.load(f) if path.suffix == ".toml" else json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"scenario file not found: {path}") from e
    except (toml.TomlDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: cannot parse: {e}") from e
    try:
        scenario = Scenario.model_validate(_resolve_paths(raw, str(path.parent)))
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.info(f"Loaded scenario '{scenario.name}' from {path}")
    return scenario


def dump_scenario(scenario, path):
    path = Path(path)
    data = scenario.model_dump(mode="json", exclude_none=True)
    with open(path, "w") as f:
        if path.suffix == ".toml":
            toml.dump(data, f)
        elif path.suffix == ".json":
            json.dump(data, f, indent=2)
        else:
            raise ConfigError(f"{path}: scenario files must be .toml or .json")


# -- builders -------------------------------------------------------------


def build_deployment(scenario):
    spec = scenario.deployment
    if spec.kind == "file":
        return load_deployment(spec.path, spec.area_m)
    return generate_grid_deployment(spec.n_stations, spec.isd_m, spec.power_mw, spec.area_m)


def build_network(scenario, noise_model=None):
    radio = scenario.radio
    return Network(
        deployment=build_deployment(scenario),
        pathloss=radio.pathloss,
        mcs=load_mcs_table(radio.mcs_path) if radio.mcs_path else default_mcs_table(),
        noise_var=float(dbm_to_w(radio.noise_dbm)),
        noise_model=noise_model or radio.noise_model,
        k_sym=radio.k_sym,
    )


def build_snapshot(scenario, seed, deployment=None):
    """Group sizes and starting positions for one seed."""
    deployment = build_deployment(scenario) if deployment is None else deployment
    rng = np.random.default_rng(seed)
    spec = scenario.groups
    if spec.sizes is not None:
        sizes = list(spec.sizes)
    else:
        sizes = rng.integers(spec.size_min, spec.size_max + 1, size=spec.count).tolist()
    return random_snapshot(deployment, sizes, spec.member_radius_m, rng)


def build_profiles(scenario, snapshot):
    if scenario.mobility.model == "static":
        return [GroupProfile(g.id, g.size, SpatialDistribution.point(*g.centroid)) for g in snapshot.groups]
    dist = SpatialDistribution.parse(
        scenario.groups.distribution, scenario.deployment.area_m, scenario.optimizer.raster_resolution_m
    )
    return [GroupProfile(g.id, g.size, dist) for g in snapshot.groups]


def build_states(scenario, n_stations, seed=0):
    return enumerate_states(n_stations, scenario.optimizer.max_states, seed)


def sim_config(scenario, seed):
    sim, mob, opt = scenario.sim, scenario.mobility, scenario.optimizer
    return SimConfig(
        duration_s=sim.duration_s,
        subframe_ms=sim.subframe_ms,
        seed=seed,
        k_sym=scenario.radio.k_sym,
        area_m=scenario.deployment.area_m,
        mobility=mob.model,
        speed_min_mps=mob.speed_min_mps,
        speed_max_mps=mob.speed_max_mps,
        pause_max_s=mob.pause_max_s,
        interval_ms=sim.t_interval_ms,
        noise_model=scenario.radio.sim_noise_model,
        pattern_length=sim.pattern_length,
        history_window=sim.history_window,
        history_decay=sim.history_decay,
        history_current_weight=sim.history_current_weight,
        history_mode=sim.history_mode,
        efficiency_mode=sim.efficiency_mode,
        max_states=opt.max_states,
        share_method=opt.share_method,
        raster_resolution_m=opt.raster_resolution_m,
        asymptotic_coverage=opt.coverage,
        ci_batches=sim.ci_batches,
        confidence=sim.confidence,
    )


def asymptotic_matrix(scenario, snapshot, network, states):
    opt = scenario.optimizer
    coverage = "state" if scenario.mobility.model == "static" else opt.coverage
    return throughput_matrix(
        build_profiles(scenario, snapshot), states, network, opt.share_method, opt.share_samples, seed=0, coverage=coverage
    )


def _slug(policy):
    return re.sub(r"[^A-Za-z0-9]+", "-", policy).strip("-")


# -- suite ------------------------------------------------------------------


def run_one(scenario, policy, seed):
    """One (policy, seed) run of the event-driven simulator."""
    network = build_network(scenario, noise_model=scenario.radio.sim_noise_model)
    snapshot = build_snapshot(scenario, seed, network.deployment)
    config = sim_config(scenario, seed)
    matrix = None
    if parse_policy(policy)[0] == "asymptotic-pf":
        states = build_states(scenario, network.n_stations, seed)
        matrix = asymptotic_matrix(scenario, snapshot, network, states)
    return run_experiment(network, snapshot.groups, config, policy, asymptotic_matrix=matrix)


def _run_one_json(scenario_json, policy, seed):
    return run_one(Scenario.model_validate_json(scenario_json), policy, seed)


@dataclass
class SuiteResult:
    summary: pd.DataFrame
    pooled: pd.DataFrame
    manifest: dict
    reports: dict = field(default_factory=dict)

    @property
    def failures(self):
        return self.manifest["failures"]

    @property
    def ok(self):
        return not self.failures


def package_versions():
    versions = {"absf": absf.__version__}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def pool_runs(summary, confidence=0.95):
    """Across-seed mean per policy; the CI is a t-interval over seeds, or the run's own CI for one seed."""
    rows = []
    for policy, runs in summary.groupby("policy", sort=False):
        values = runs["system_throughput"].to_numpy()
        mean = float(values.mean())
        if len(values) > 1:
            half = float(stats.t.ppf((1 + confidence) / 2, len(values) - 1) * values.std(ddof=1) / np.sqrt(len(values)))
            low, high = mean - half, mean + half
        else:
            low, high = float(runs["ci_low"].iloc[0]), float(runs["ci_high"].iloc[0])
        rows.append(
            {
                "policy": policy,
                "runs": len(values),
                "system_throughput": mean,
                "jfi": float(runs["jfi"].mean()),
                "jfi_windowed": float(runs["jfi_windowed"].mean()),
                "ci_low": low,
                "ci_high": high,
            }
        )
    return pd.DataFrame(rows, columns=["policy", "runs", "system_throughput", "jfi", "jfi_windowed", "ci_low", "ci_high"])


def run_suite(scenario, out_dir=None):
    """Every (policy, seed) pair, one CSV per run, summary/pooled tables and a manifest."""
    out = Path(out_dir or scenario.output.dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    tasks = [(policy, seed) for policy in scenario.policies for seed in scenario.seeds]
    logger.info(f"Running {len(tasks)} simulations for scenario '{scenario.name}'")

    reports, failures = {}, []

    def record(policy, seed, report=None, error=None):
        if error is not None:
            logger.warning(f"Run {policy} / seed {seed} failed: {error}")
            failures.append({"policy": policy, "seed": seed, "error": str(error)})
            return
        reports[(policy, seed)] = report
        report.timeseries.to_csv(out / "runs" / f"{_slug(policy)}_seed{seed}.csv", index=False)

    if scenario.sim.workers == 1:
        for policy, seed in tasks:
            try:
                record(policy, seed, run_one(scenario, policy, seed))
            except Exception as e:
                record(policy, seed, error=e)
    else:
        payload = scenario.canonical_json()
        with ProcessPoolExecutor(max_workers=scenario.sim.workers) as pool:
            futures = {pool.submit(_run_one_json, payload, policy, seed): (policy, seed) for policy, seed in tasks}
            for future in as_completed(futures):
                policy, seed = futures[future]
                try:
                    record(policy, seed, future.result())
                except Exception as e:
                    record(policy, seed, error=e)

    rows = [reports[key].summary_row() for key in tasks if key in reports]
    columns = ["policy", "seed", "system_throughput", "jfi", "jfi_windowed", "ci_low", "ci_high"]
    summary = pd.DataFrame(rows, columns=columns)
    pooled = pool_runs(summary, scenario.sim.confidence)
    summary.to_csv(out / "summary.csv", index=False)
    pooled.to_csv(out / "pooled.csv", index=False)

    manifest = {
        "scenario": scenario.model_dump(mode="json"),
        "config_sha256": scenario.config_hash(),
        "policies": list(scenario.policies),
        "seeds": list(scenario.seeds),
        "versions": package_versions(),
        "failures": failures,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    logger.info(f"Wrote {len(rows)} run summaries to {out} ({len(failures)} failed)")
    return SuiteResult(summary, pooled, manifest, reports)


# -- analysis subcommands -----------------------------------------------------


def analyze(scenario, out_dir=None, seed=None, relay_size=5):
    """Per-state throughput, per-cell figures of the all-active state and the relay gain."""
    seed = scenario.seeds[0] if seed is None else seed
    out = Path(out_dir or scenario.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    network = build_network(scenario)
    snapshot = build_snapshot(scenario, seed, network.deployment)
    states = build_states(scenario, network.n_stations, seed)
    mode = scenario.sim.efficiency_mode

    states_df = throughput_table(snapshot, states, network, mode)
    all_active = AbsState.all_active(network.n_stations)
    cells_df = cell_summary(snapshot, all_active, network, mode)
    gain = relay_gain(snapshot, all_active, network, relay_size)
    gain_df = pd.DataFrame([{"state_id": all_active.id, "group_size": relay_size, "gain": gain}])

    states_df.to_csv(out / "states.csv", index=False)
    cells_df.to_csv(out / "cells.csv", index=False)
    gain_df.to_csv(out / "relay_gain.csv", index=False)
    logger.info(f"Analyzed {len(states)} states; relay gain at U={relay_size}: {gain:.3f}")
    return {"states": states_df, "cells": cells_df, "relay_gain": gain_df}


def optimize(scenario, out_dir=None, policy="asymptotic-pf", seed=None):
    """State probabilities and the ABS pattern the policy would issue at time 0."""
    seed = scenario.seeds[0] if seed is None else seed
    kind, ratio = parse_policy(policy)
    out = Path(out_dir or scenario.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    network = build_network(scenario)
    n = network.n_stations
    length = scenario.sim.pattern_length

    if kind == "legacy":
        pattern = AbsPattern.constant(2**n - 1, n, length)
        probabilities = StateProbabilities.vertex((2**n - 1,), 2**n - 1)
    elif kind == "fixed-ratio":
        pattern = fixed_ratio_pattern(ratio, n, length, seed)
        freq = pattern.frequencies()
        probabilities = StateProbabilities(tuple(freq.index), freq.to_numpy() / freq.sum())
    else:
        snapshot = build_snapshot(scenario, seed, network.deployment)
        states = build_states(scenario, n, seed)
        if kind == "asymptotic-pf":
            probabilities = solve_asymptotic_pf(asymptotic_matrix(scenario, snapshot, network, states)).probabilities
        else:
            values = throughput_by_state(snapshot, states, network, scenario.sim.efficiency_mode)
            matrix = ThroughputMatrix(values, tuple(s.id for s in states), snapshot.sizes.astype(float))
            if kind == "dynamic-pf":
                probabilities = solve_dynamic_pf(matrix, None).probabilities
            else:
                probabilities = solve_max_throughput(matrix, weighted=False)
        pattern = build_pattern(probabilities, length, seed, n)

    export_probabilities(probabilities, out / "probabilities.csv")
    pattern.to_text(out / "pattern.txt")
    logger.info(f"{policy}: {int((probabilities.p > 1e-6).sum())} states in support, pattern of {len(pattern)} subframes")
    return probabilities, pattern


def validation_states(scenario, n_stations, seed=0):
    """Explicit list, or all-active plus all-but-one states, then random others."""
    spec = scenario.validation
    if spec.states:
        return [AbsState(s, n_stations) for s in spec.states]
    full = 2**n_stations - 1
    ids = [full] + [full ^ (1 << b) for b in range(n_stations)]
    rng = np.random.default_rng(seed)
    pool = [s for s in range(1, full) if s not in ids]
    rng.shuffle(pool)
    ids = (ids + pool)[: spec.n_states]
    return [AbsState(s, n_stations) for s in ids]


def validate(scenario, out_dir=None, seed=None):
    """Analytical per-state system throughput against the simulator with groups frozen."""
    seed = scenario.seeds[0] if seed is None else seed
    spec = scenario.validation
    out = Path(out_dir or scenario.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    sim_noise = scenario.radio.sim_noise_model
    network = build_network(scenario, noise_model=sim_noise)
    reference = replace(network, noise_model=scenario.radio.noise_model)
    base = build_snapshot(scenario, seed, network.deployment)
    rows = []
    for size in spec.group_sizes:
        snapshot = base.resized(size)
        for state in validation_states(scenario, network.n_stations, seed):
            series = simulate_static_state(snapshot, state, network, spec.subframes, seed, sim_noise)
            mean, low, high = batch_means_ci(series, scenario.sim.ci_batches, spec.confidence)
            analytical = instantaneous_throughput(snapshot, state, network).total
            rows.append(
                {
                    "state_id": state.id,
                    "active": state.bits(),
                    "group_size": size,
                    "analytical_bps": analytical,
                    "analytical_reference_bps": instantaneous_throughput(snapshot, state, reference).total,
                    "simulated_bps": mean,
                    "ci_low": low,
                    "ci_high": high,
                    "inside_ci": bool(low <= analytical <= high),
                    "rel_error": (mean - analytical) / analytical if analytical else np.nan,
                }
            )
    df = pd.DataFrame(rows)
    df.to_csv(out / "validation.csv", index=False)
    inside = int(df["inside_ci"].sum())
    logger.info(f"Validation: {inside}/{len(df)} analytical values inside the simulated CI")
    if inside < len(df):
        logger.warning(f"{len(df) - inside} analytical values fall outside the simulated CI")
    return df
