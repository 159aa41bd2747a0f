import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from absf.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

DEPLOYMENT_COLUMNS = ["id", "x_m", "y_m", "tx_power_dbm"]


def dbm_to_w(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def w_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


@dataclass(frozen=True)
class BaseStation:
    id: int
    x_m: float
    y_m: float
    tx_power_dbm: float

    @property
    def tx_power_w(self):
        return float(dbm_to_w(self.tx_power_dbm))


@dataclass(frozen=True)
class Deployment:
    """The set B of base stations inside a rectangular world [0, w] x [0, h]."""

    stations: tuple
    area_m: tuple = (150.0, 150.0)

    def __post_init__(self):
        if not self.stations:
            raise DomainError("a deployment needs at least one base station")
        width, height = self.area_m
        for bs in self.stations:
            if not (0.0 <= bs.x_m <= width and 0.0 <= bs.y_m <= height):
                raise DomainError(f"station {bs.id} at ({bs.x_m}, {bs.y_m}) lies outside the {width}x{height} m area")

    def __len__(self):
        return len(self.stations)

    @property
    def positions(self):
        return np.array([[bs.x_m, bs.y_m] for bs in self.stations], dtype=float)

    @property
    def tx_power_w(self):
        return dbm_to_w([bs.tx_power_dbm for bs in self.stations])

    @property
    def ids(self):
        return [bs.id for bs in self.stations]

    def contains(self, points):
        points = np.atleast_2d(points)
        width, height = self.area_m
        return (points[:, 0] >= 0) & (points[:, 0] <= width) & (points[:, 1] >= 0) & (points[:, 1] <= height)

    def min_spacing(self):
        pos = self.positions
        if len(pos) < 2:
            return math.inf
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        return float(dist[np.triu_indices(len(pos), k=1)].min())

    def to_frame(self):
        return pd.DataFrame([vars(bs) for bs in self.stations], columns=DEPLOYMENT_COLUMNS)


def generate_grid_deployment(n=7, isd_m=50.0, power_mw=250.0, area_m=(150.0, 150.0)):
    """Place n equal-power stations on a hexagonal lattice centred in the area.

    Lattice points are taken ring by ring around the centre, so n=7 gives the
    usual centre-plus-six layout and n=1 a single centred station.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    if isd_m <= 0:
        raise DomainError("isd_m must be positive")
    width, height = area_m
    cx, cy = width / 2.0, height / 2.0
    reach = int(math.ceil(math.sqrt(n))) + 1
    a1 = np.array([isd_m, 0.0])
    a2 = np.array([isd_m / 2.0, isd_m * math.sqrt(3.0) / 2.0])
    candidates = []
    for i in range(-reach, reach + 1):
        for j in range(-reach, reach + 1):
            offset = i * a1 + j * a2
            dist = round(float(np.hypot(*offset)), 6)
            angle = round(math.atan2(offset[1], offset[0]) % (2 * math.pi), 9)
            candidates.append((dist, angle, offset))
    candidates.sort(key=lambda c: (c[0], c[1]))

    power_dbm = float(w_to_dbm(power_mw / 1000.0))
    stations = []
    for idx, (_, _, offset) in enumerate(candidates[:n]):
        x, y = cx + offset[0], cy + offset[1]
        if not (0.0 <= x <= width and 0.0 <= y <= height):
            raise DomainError(f"{n} stations with ISD {isd_m} m do not fit in a {width}x{height} m area")
        stations.append(BaseStation(id=idx, x_m=float(x), y_m=float(y), tx_power_dbm=power_dbm))
    logger.info(f"Generated grid deployment: {n} stations, ISD {isd_m} m, {power_mw} mW")
    return Deployment(stations=tuple(stations), area_m=(float(width), float(height)))


def load_deployment(path, area_m):
    path = Path(path)
    try:
        df = pd.read_csv(path, comment="#")
    except FileNotFoundError as e:
        raise ConfigError(f"deployment file not found: {path}") from e
    missing = [col for col in DEPLOYMENT_COLUMNS if col not in df.columns]
    if missing:
        raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
    df = df.sort_values("id").reset_index(drop=True)
    stations = tuple(
        BaseStation(id=int(row.id), x_m=float(row.x_m), y_m=float(row.y_m), tx_power_dbm=float(row.tx_power_dbm))
        for row in df.itertuples(index=False)
    )
    logger.info(f"Loaded {len(stations)} stations from {path}")
    return Deployment(stations=stations, area_m=(float(area_m[0]), float(area_m[1])))


def save_deployment(deployment, path):
    deployment.to_frame().to_csv(path, index=False)
