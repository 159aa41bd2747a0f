"""Stochastic ABS optimisation: proportional-fair and max-throughput state probabilities,
and their realisation as ABS patterns."""

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import pandas as pd

from absf.errors import DomainError, InfeasibleError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9
KKT_TOL = 1e-6
GAP_TOL = 1e-9
SNAP_TOL = 1e-9
MAX_ITERATIONS = 10_000
STANDARD_PATTERN_LENGTH = 80


@dataclass(frozen=True, eq=False)
class ThroughputMatrix:
    """g[c][s] = E[Gamma_c^s] (bit/s) with per-group PF weights w_c."""

    values: np.ndarray
    state_ids: tuple
    weights: np.ndarray
    group_ids: tuple = ()

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "state_ids", tuple(int(s) for s in self.state_ids))
        if not self.group_ids:
            object.__setattr__(self, "group_ids", tuple(range(values.shape[0])))
        if values.shape != (len(self.group_ids), len(self.state_ids)):
            raise DomainError(f"matrix shape {values.shape} does not match groups/states")
        if weights.shape != (values.shape[0],):
            raise DomainError("one weight per group is required")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise DomainError("throughput entries must be finite and >= 0")
        if np.any(weights <= 0):
            raise DomainError("weights must be > 0")

    @property
    def n_groups(self):
        return self.values.shape[0]

    @property
    def n_states(self):
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class StateProbabilities:
    state_ids: tuple
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "state_ids", tuple(int(s) for s in self.state_ids))
        if p.shape != (len(self.state_ids),):
            raise DomainError("one probability per state is required")
        check_simplex(p)

    @classmethod
    def vertex(cls, state_ids, state_id):
        state_ids = tuple(state_ids)
        p = np.zeros(len(state_ids))
        p[state_ids.index(state_id)] = 1.0
        return cls(state_ids, p)

    @classmethod
    def uniform(cls, state_ids):
        return cls(tuple(state_ids), np.full(len(state_ids), 1.0 / len(state_ids)))

    def to_frame(self):
        return pd.DataFrame({"state_id": self.state_ids, "prob": self.p})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path):
        df = pd.read_csv(path)
        return cls(tuple(df["state_id"]), df["prob"].to_numpy())


def export_probabilities(probabilities, path):
    """state_id,prob CSV of the full state list, zeros included."""
    probabilities.to_csv(path)
    logger.debug(f"Wrote {len(probabilities.state_ids)} state probabilities to {path}")


def check_simplex(p, tol=SIMPLEX_TOL):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise DomainError("probabilities must be a non-empty vector")
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise DomainError("probabilities must lie in [0, 1]")
    if abs(p.sum() - 1.0) > tol:
        raise DomainError(f"probabilities sum to {p.sum():.12f}, not 1")
    return p


class History:
    """Past interval throughputs per group and the filter coefficients alpha_0..alpha_p.

    alpha_0 weighs the interval being decided; alpha_k the k-th most recent past one.
    """

    def __init__(self, window=20, alpha=None):
        if window < 0:
            raise DomainError("window must be >= 0")
        alpha = np.ones(window + 1) if alpha is None else np.asarray(alpha, dtype=float)
        if alpha.shape != (window + 1,):
            raise DomainError(f"alpha needs {window + 1} coefficients")
        if np.any(alpha < 0) or np.any(np.diff(alpha) > 0):
            raise DomainError("alpha must be non-negative and non-increasing with age")
        if alpha[0] <= 0:
            raise DomainError("alpha_0 must be > 0")
        self.window = window
        self.alpha = alpha
        self._past = deque(maxlen=window if window else 0)

    @classmethod
    def exponential(cls, window=20, decay=0.9):
        if not 0 < decay <= 1:
            raise DomainError("decay must be in (0, 1]")
        return cls(window, decay ** np.arange(window + 1))

    @classmethod
    def receding(cls, window=20, current_weight=None):
        """Unit weights for the past intervals; the interval being decided weighs
        `current_weight` (default: the window length), standing in for the
        intervals still to come before it leaves the window."""
        current = float(max(window, 1) if current_weight is None else current_weight)
        if current < 1:
            raise DomainError("current_weight must be >= 1")
        return cls(window, np.concatenate([[current], np.ones(window)]))

    def __len__(self):
        return len(self._past)

    def push(self, throughputs):
        if self.window:
            self._past.append(np.asarray(throughputs, dtype=float).copy())

    def past_sum(self, n_groups):
        total = np.zeros(n_groups)
        for age, values in enumerate(reversed(self._past), start=1):
            total += self.alpha[age] * values
        return total


@dataclass(frozen=True, eq=False)
class SolveResult:
    probabilities: StateProbabilities
    objective: float
    iterations: int
    kkt_residual: float
    excluded: tuple = field(default_factory=tuple)


def pf_objective(matrix, p, history=None):
    """sum_c w_c log(H_c + alpha_0 sum_s P^s g_cs), with H_c = 0 without history."""
    offset, alpha0 = _history_terms(matrix, history)
    with np.errstate(divide="ignore"):
        return float(matrix.weights @ np.log(offset + alpha0 * (matrix.values @ np.asarray(p, dtype=float))))


def _history_terms(matrix, history):
    if history is None:
        return np.zeros(matrix.n_groups), 1.0
    return history.past_sum(matrix.n_groups), float(history.alpha[0])


def _kkt_residual(p, grad, lam):
    gap = (grad - lam) / lam
    return float(max(np.max(np.maximum(gap, 0.0)), np.max(p * np.abs(gap))))


def _duality_gap(p, grad):
    """max_s grad_s - p.grad: bounds f* - f(p) from above for a concave f on the simplex."""
    return float(grad.max() - p @ grad)


def _exponentiated_gradient(g, w, offset, alpha0, tol=KKT_TOL, max_iter=MAX_ITERATIONS):
    """Maximise sum_c w_c log(offset_c + alpha0 g_c . p) over the simplex.

    Multiplicative updates p <- p exp(eta grad / lambda), renormalised, with a
    backtracking step that only accepts ascent. Stops once the duality gap is
    below GAP_TOL relative to the objective and the KKT residual below `tol`.
    """
    n_states = g.shape[1]
    p = np.full(n_states, 1.0 / n_states)

    def objective(q):
        return float(w @ np.log(offset + alpha0 * (g @ q)))

    def gradient(q):
        return alpha0 * ((w / (offset + alpha0 * (g @ q))) @ g)

    value = objective(p)
    eta = 1.0
    residual = gap = 0.0
    iteration = 0
    for iteration in range(1, max_iter + 1):
        grad = gradient(p)
        lam = float(p @ grad)
        residual = _kkt_residual(p, grad, lam)
        gap = _duality_gap(p, grad)
        if residual <= tol and gap <= GAP_TOL * max(abs(value), 1.0):
            break
        scaled = (grad - grad.max()) / lam
        while True:
            q = np.maximum(p * np.exp(eta * scaled), 1e-300)
            q /= q.sum()
            new_value = objective(q)
            kl = float(np.sum(q * np.log(q / p)))
            if new_value >= value and new_value >= value + grad @ (q - p) - lam * kl / eta:
                break
            eta *= 0.5
            if eta < 1e-12:
                break
        if eta < 1e-12:
            logger.debug("Step size collapsed; stopping at current iterate")
            break
        p, value = q, new_value
        eta = min(eta * 2.0, 1e6)
    else:
        logger.warning(f"PF solver hit {max_iter} iterations (KKT residual {residual:.2e}, gap {gap:.2e})")
    return p / p.sum(), value, iteration, residual


def _polish(p, value, objective, vertex_values):
    """Drop negligible masses and fall back to the best vertex when it scores higher."""
    support = p >= SNAP_TOL * p.max()
    if not support.all():
        snapped = np.where(support, p, 0.0)
        snapped /= snapped.sum()
        snapped_value = objective(snapped)
        if snapped_value >= value:
            p, value = snapped, snapped_value
    best = int(np.argmax(vertex_values))
    if vertex_values[best] > value:
        p = np.zeros_like(p)
        p[best] = 1.0
        value = float(vertex_values[best])
    return p, value


def _solve_pf(matrix, history, strict):
    offset, alpha0 = _history_terms(matrix, history)
    dead = ~(matrix.values > 0).any(axis=1) & (offset <= 0)
    if dead.any():
        ids = [matrix.group_ids[i] for i in np.flatnonzero(dead)]
        if strict or dead.all():
            raise InfeasibleError(f"groups {ids} get zero throughput in every state", ids)
        logger.warning(f"Excluding groups {ids} from the PF objective: zero throughput in every state")
    keep = ~dead
    g, w, h = matrix.values[keep], matrix.weights[keep], offset[keep]
    if matrix.n_states == 1:
        p, iterations, residual = np.ones(1), 0, 0.0
        value = float(w @ np.log(h + alpha0 * g[:, 0]))
    else:
        p, value, iterations, residual = _exponentiated_gradient(g, w, h, alpha0)
        with np.errstate(divide="ignore"):
            vertex_values = w @ np.log(h[:, None] + alpha0 * g)
        p, value = _polish(p, value, lambda q: float(w @ np.log(h + alpha0 * (g @ q))), vertex_values)
    excluded = tuple(matrix.group_ids[i] for i in np.flatnonzero(dead))
    probs = StateProbabilities(matrix.state_ids, p)
    logger.debug(f"PF solve: objective {value:.6f} after {iterations} iterations, KKT {residual:.2e}")
    return SolveResult(probs, value, iterations, residual, excluded)


def solve_asymptotic_pf(matrix, strict=False):
    """Maximise sum_c w_c log(sum_s P^s E[Gamma_c^s]) on the simplex.

    Groups with an all-zero row are dropped with a warning unless strict.
    """
    return _solve_pf(matrix, None, strict)


def solve_dynamic_pf(matrix_now, history, strict=False):
    """PF over a sliding window: past intervals enter as constants inside each log."""
    return _solve_pf(matrix_now, history, strict)


def solve_max_throughput(matrix, weighted=True):
    """All mass on the state maximising sum_c w_c g_cs; ties split uniformly."""
    weights = matrix.weights if weighted else np.ones(matrix.n_groups)
    scores = weights @ matrix.values
    best = scores.max()
    tied = np.isclose(scores, best, rtol=1e-12, atol=0.0)
    p = tied / tied.sum()
    return StateProbabilities(matrix.state_ids, p)


@dataclass(frozen=True, eq=False)
class AbsPattern:
    """One ABS state id per subframe; repeated when the run outlasts it."""

    states: np.ndarray
    n_stations: int

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        object.__setattr__(self, "states", states)
        if states.ndim != 1 or len(states) == 0:
            raise DomainError("a pattern needs at least one subframe")
        if np.any(states < 0) or np.any(states >= 2 ** self.n_stations):
            raise DomainError("pattern holds an invalid state id")

    def __len__(self):
        return len(self.states)

    def state_at(self, subframe):
        return int(self.states[subframe % len(self.states)])

    def activity(self):
        """(length x n_stations) activity bits extracted from each state's bitmask."""
        return ((self.states[:, None] >> np.arange(self.n_stations)) & 1).astype(bool)

    def frequencies(self):
        ids, counts = np.unique(self.states, return_counts=True)
        return pd.Series(counts / len(self.states), index=ids, name="frequency")

    def to_text(self, path):
        with open(path, "w") as f:
            for row in self.activity():
                f.write(",".join(str(int(v)) for v in row) + "\n")

    @classmethod
    def constant(cls, state_id, n_stations, length=1):
        return cls(np.full(length, state_id), n_stations)


def build_pattern(probabilities, length, seed, n_stations):
    """Draw each subframe's state i.i.d. from the probabilities."""
    if length < 1:
        raise DomainError("pattern length must be >= 1")
    rng = np.random.default_rng(seed)
    p = np.clip(probabilities.p, 0.0, None)
    states = rng.choice(np.asarray(probabilities.state_ids), size=length, p=p / p.sum())
    return AbsPattern(states, n_stations)


def parse_ratio(ratio):
    """Return (used, total) subframes; the denominator stays unreduced ("4/8" -> (4, 8))."""
    if isinstance(ratio, tuple):
        used, total = ratio
    elif isinstance(ratio, str) and "/" in ratio:
        used, total = (int(v) for v in ratio.split("/"))
    else:
        frac = Fraction(str(ratio)).limit_denominator(8)
        used, total = frac.numerator, frac.denominator
    if total <= 0 or not 0 < used <= total:
        raise DomainError(f"application ratio {ratio!r} must be in (0, 1]")
    return int(used), int(total)


def fixed_ratio_pattern(ratio, n_stations, length=STANDARD_PATTERN_LENGTH, seed=0):
    """Standard random ABS: every station independently keeps `used` of each `total`
    subframes at random positions; the block is repeated to fill the pattern."""
    used, total = parse_ratio(ratio)
    rng = np.random.default_rng(seed)
    reps = -(-length // total)
    states = np.zeros(length, dtype=np.int64)
    for b in range(n_stations):
        block = np.zeros(total, dtype=np.int64)
        block[rng.choice(total, size=used, replace=False)] = 1
        states |= np.tile(block, reps)[:length] << b
    return AbsPattern(states, n_stations)
