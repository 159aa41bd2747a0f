"""Link-level machinery: pathloss, SINR distribution, group-max CDF and MCS efficiency.

All math is in linear units; dB only appears when tables are read from disk.
A base station that is blanked contributes no power at all.
"""

import logging
import os
from functools import cached_property
from typing import List, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from absf.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

NoiseModel = Literal["gaussian-squared", "constant"]

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")
DEFAULT_MCS_PATH = os.path.join(DATA_DIR, "mcs_cqi15.csv")


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(lin):
    return 10.0 * np.log10(np.asarray(lin, dtype=float))


class McsEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    t_min: float = Field(..., description="Lower SINR bound, linear")
    t_max: float = Field(..., description="Upper SINR bound, linear")
    bits_per_symbol: float = Field(..., ge=0)


class McsTable(BaseModel):
    """Ordered SINR-threshold to bits/symbol mapping covering [t_min_0, inf)."""

    entries: List[McsEntry]

    @model_validator(mode="after")
    def _check_entries(self):
        if not self.entries:
            raise ValueError("MCS table needs at least one entry")
        if self.entries[0].t_min < 0:
            raise ValueError("first t_min must be >= 0")
        if not np.isinf(self.entries[-1].t_max):
            raise ValueError("last t_max must be +inf")
        for prev, nxt in zip(self.entries, self.entries[1:]):
            if not np.isclose(prev.t_max, nxt.t_min, rtol=1e-12, atol=0.0):
                raise ValueError(f"entries not contiguous at {prev.t_max} / {nxt.t_min}")
            if nxt.bits_per_symbol <= prev.bits_per_symbol:
                raise ValueError("bits_per_symbol must be strictly increasing")
        for entry in self.entries:
            if entry.t_max <= entry.t_min:
                raise ValueError(f"empty SINR interval [{entry.t_min}, {entry.t_max})")
        return self

    @classmethod
    def from_tuples(cls, rows):
        return cls(entries=[McsEntry(t_min=a, t_max=b, bits_per_symbol=c) for a, b, c in rows])

    @cached_property
    def t_min(self):
        return np.array([e.t_min for e in self.entries])

    @cached_property
    def bits(self):
        return np.array([e.bits_per_symbol for e in self.entries])

    @property
    def max_bits(self):
        return float(self.bits[-1])

    def bits_for(self, sinr):
        """Bits/symbol of the entry whose interval holds each SINR, 0 below the table."""
        sinr = np.asarray(sinr, dtype=float)
        idx = np.searchsorted(self.t_min, sinr, side="right") - 1
        out = np.where(idx >= 0, self.bits[np.clip(idx, 0, None)], 0.0)
        return float(out) if out.ndim == 0 else out

    def to_frame(self):
        with np.errstate(divide="ignore"):
            return pd.DataFrame(
                {
                    "t_min_db": linear_to_db(self.t_min),
                    "t_max_db": linear_to_db([e.t_max for e in self.entries]),
                    "bits_per_symbol": self.bits,
                }
            )


def load_mcs_table(path=DEFAULT_MCS_PATH):
    try:
        df = pd.read_csv(path, comment="#")
    except FileNotFoundError as e:
        raise ConfigError(f"MCS table not found: {path}") from e
    expected = ["t_min_db", "t_max_db", "bits_per_symbol"]
    if list(df.columns) != expected:
        raise ConfigError(f"{path}: header must be {','.join(expected)}")
    try:
        table = McsTable.from_tuples(
            zip(
                db_to_linear(df["t_min_db"].astype(float)),
                db_to_linear(df["t_max_db"].astype(float)),
                df["bits_per_symbol"].astype(float),
            )
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.debug(f"Loaded {len(table.entries)}-entry MCS table from {path}")
    return table


_default_table = None


def default_mcs_table():
    global _default_table
    if _default_table is None:
        _default_table = load_mcs_table(DEFAULT_MCS_PATH)
    return _default_table


class LinkBudget(BaseModel):
    """Rates of the exponential powers seen by one receiver: lambda = 1 / mean power."""

    model_config = ConfigDict(frozen=True)

    lambda_s: float = Field(..., gt=0)
    interferers: List[float] = Field(default_factory=list)
    noise_var: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check_rates(self):
        if any(lam <= 0 for lam in self.interferers):
            raise ValueError("interferer rates must be positive")
        return self


class PathlossModel(BaseModel):
    """Log-distance pathloss PL(d) = PL0 + 10 n log10(d / d0), d clamped below."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["log-distance"] = "log-distance"
    ref_loss_db: float = 128.1
    ref_distance_m: float = Field(1000.0, gt=0)
    exponent: float = Field(3.76, gt=0)
    min_distance_m: float = Field(1.0, gt=0)

    def loss_db(self, distance_m):
        d = np.maximum(np.asarray(distance_m, dtype=float), self.min_distance_m)
        return self.ref_loss_db + 10.0 * self.exponent * np.log10(d / self.ref_distance_m)

    def gain(self, distance_m):
        return 10.0 ** (-self.loss_db(distance_m) / 10.0)


def mean_received_power(points, deployment, pathloss):
    """Average received power (W) from every station at every point, shape (..., |B|)."""
    points = np.asarray(points, dtype=float)
    diff = points[..., None, :] - deployment.positions
    dist = np.hypot(diff[..., 0], diff[..., 1])
    return deployment.tx_power_w * pathloss.gain(dist)


def _noise_factor(y, noise_model):
    # y = lambda_S * N * x
    if noise_model == "gaussian-squared":
        return 1.0 / np.sqrt(1.0 + 2.0 * y)
    if noise_model == "constant":
        return np.exp(-y)
    raise DomainError(f"unknown noise model {noise_model!r}")


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("SINR argument must be >= 0")
    return x


def sinr_cdf(x, budget, noise_model="gaussian-squared"):
    """CDF of exponential signal over exponential interferers plus noise.

    F(x) = 1 - (1 + 2 lambda_S N x)^(-1/2) * prod_j lambda_j / (lambda_j + x lambda_S)
    """
    x = _check_x(x)
    if budget.noise_var == 0 and not budget.interferers:
        raise DomainError("noise-free budget without interferers has no proper SINR distribution")
    s = budget.lambda_s
    survival = _noise_factor(s * budget.noise_var * x, noise_model)
    for lam in budget.interferers:
        survival = survival * (lam / (lam + x * s))
    out = 1.0 - survival
    return float(out) if out.ndim == 0 else out


def sinr_cdf_from_powers(x, signal_w, interference_w, noise_var, noise_model="gaussian-squared"):
    """Vectorised sinr_cdf over receivers given mean powers.

    signal_w has shape (...,), interference_w (..., J) with zeros for silent
    stations, x shape (K,); the result has shape (..., K).
    """
    x = _check_x(x)
    signal_w = np.asarray(signal_w, dtype=float)
    interference_w = np.asarray(interference_w, dtype=float)
    if np.any(signal_w <= 0):
        raise DomainError("mean useful power must be positive")
    if noise_var == 0 and np.any(interference_w.sum(axis=-1) == 0):
        raise DomainError("noise-free budget without interferers has no proper SINR distribution")
    ratio = interference_w / signal_w[..., None]
    survival = _noise_factor((noise_var / signal_w)[..., None] * x, noise_model)
    survival = survival * np.prod(1.0 / (1.0 + ratio[..., :, None] * x), axis=-2)
    return 1.0 - survival


def group_cdf_exact(x, budgets, noise_model="gaussian-squared"):
    """CDF of the member-wise maximum SINR for independent members."""
    if not budgets:
        raise DomainError("a group needs at least one member")
    out = 1.0
    for budget in budgets:
        out = out * np.asarray(sinr_cdf(x, budget, noise_model))
    return float(out) if np.ndim(out) == 0 else out


def group_cdf_centroid(x, budget_at_centroid, group_size, noise_model="gaussian-squared"):
    """[F(x)]^U_c with every member placed at the centre of gravity."""
    if group_size < 1:
        raise DomainError("group_size must be >= 1")
    out = np.asarray(sinr_cdf(x, budget_at_centroid, noise_model)) ** group_size
    return float(out) if out.ndim == 0 else out


def transmission_efficiency(cdf, mcs):
    """Average bits/symbol: sum_k b_k [F(T_k^max) - F(T_k^min)].

    `cdf` is called once with the finite thresholds (shape (K,)) and may
    return (..., K) to evaluate many receivers at once.
    """
    lower = np.asarray(cdf(mcs.t_min), dtype=float)
    ones = np.ones(lower.shape[:-1] + (1,))
    upper = np.concatenate([lower[..., 1:], ones], axis=-1)
    out = np.sum(mcs.bits * (upper - lower), axis=-1)
    return float(out) if out.ndim == 0 else out


def link_budget_at(point, serving, active, pathloss, noise_var):
    """Link budget at a point served by `serving` with all other `active` stations interfering."""
    active = list(active)
    if serving.id not in {bs.id for bs in active}:
        raise DomainError(f"serving station {serving.id} is not active")
    px, py = point

    def rate(bs):
        power = bs.tx_power_w * float(pathloss.gain(np.hypot(px - bs.x_m, py - bs.y_m)))
        return 1.0 / power

    return LinkBudget(
        lambda_s=rate(serving),
        interferers=[rate(bs) for bs in active if bs.id != serving.id],
        noise_var=noise_var,
    )


def sample_noise(noise_var, size, rng, noise_model="gaussian-squared"):
    if noise_model == "gaussian-squared":
        return rng.normal(0.0, np.sqrt(noise_var), size) ** 2
    if noise_model == "constant":
        return np.full(size, float(noise_var))
    raise DomainError(f"unknown noise model {noise_model!r}")


def sample_sinr(budget, n, rng, noise_model="gaussian-squared"):
    """Monte-Carlo SINR draws matching the assumptions behind sinr_cdf."""
    signal = rng.exponential(1.0 / budget.lambda_s, n)
    interference = np.zeros(n)
    for lam in budget.interferers:
        interference += rng.exponential(1.0 / lam, n)
    return signal / (interference + sample_noise(budget.noise_var, n, rng, noise_model))
