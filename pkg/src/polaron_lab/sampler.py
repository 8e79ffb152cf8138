"""Alternating Gibbs sampler for the path measure and its interval process.

Discrete model on a uniform time grid with nodes ``t_0 < ... < t_n``:

* the path is a 3-d random walk with independent ``N(0, step)`` increments;
* intervals join node pairs ``i < j`` and carry a weight ``u > 0``;
* node ``k`` owns the dual cell ``[t_k - step/2, t_k + step/2]`` clipped to the
  window, and the pair base mass is ``K_ij = int_{cell_i} int_{cell_j} e^{-(t-s)}``.

Given the path, intervals form a Poisson process with intensity
``coupling sqrt(2/pi) K_ij exp(-u^2 z_ij^2 / 2) gamma(du)``, ``z_ij = |w(t_j) - w(t_i)|``,
restricted to ``u <= step^{-3/2}``. Without that cutoff the discrete pair tilt
``exp(coupling K_ij / z_ij)`` is not integrable at ``z_ij = 0`` and chains collapse
onto pinned pairs; the cutoff bounds the pair potential by ``sqrt(2/pi) step^{-3/2}``
and is removed as ``step -> 0``.
Given the intervals, the path is Gaussian with density proportional to
``exp(-1/2 sum u^2 |w(t_j) - w(t_i)|^2)`` relative to the random walk. Both
conditionals are sampled exactly, so the joint discrete law is invariant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky, cholesky_banded, solve_banded, solve_triangular
from scipy.spatial.distance import pdist
from scipy.special import erf, erfc, gamma as gamma_fn, gammainc, gammaincinv, ndtri

from .errors import FactorizationError, ValidationError
from .quadform import IntervalConfig

log = logging.getLogger(__name__)

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)
SQRT2 = math.sqrt(2.0)
Z_FLOOR = 1e-6
RNG_ALGORITHM = "numpy.random.Generator(PCG64)"
DEFAULT_BAND_CAP = 192

KINDS = ("coulomb", "truncated", "band", "power")


# ---------------------------------------------------------------------------
# Grid and path


@dataclass(frozen=True)
class TimeGrid:
    t_lo: float
    t_hi: float
    step: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t_lo) and math.isfinite(self.t_hi) and self.t_hi > self.t_lo):
            raise ValidationError("time grid needs t_lo < t_hi")
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValidationError("step must be positive")
        n = round((self.t_hi - self.t_lo) / self.step)
        if n < 1 or abs(n * self.step - (self.t_hi - self.t_lo)) > 1e-12 * max(1.0, self.t_hi - self.t_lo):
            raise ValidationError("window length must be an integer multiple of step")

    @classmethod
    def symmetric(cls, T: float, step: float) -> "TimeGrid":
        return cls(-float(T), float(T), float(step))

    @property
    def n_cells(self) -> int:
        return int(round((self.t_hi - self.t_lo) / self.step))

    @property
    def window(self) -> tuple[float, float]:
        return (self.t_lo, self.t_hi)

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.t_lo + self.step * np.arange(self.n_cells + 1, dtype=float)
        x[-1] = self.t_hi
        x.flags.writeable = False
        return x

    @cached_property
    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        """Dual cells ``[a_k, b_k]`` of the nodes."""
        x = self.nodes
        a = np.clip(x - 0.5 * self.step, self.t_lo, self.t_hi)
        b = np.clip(x + 0.5 * self.step, self.t_lo, self.t_hi)
        return a, b

    @cached_property
    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        i, j = np.triu_indices(self.n_cells + 1, k=1)
        return i.astype(np.int64), j.astype(np.int64)

    @cached_property
    def pair_base_mass(self) -> np.ndarray:
        """``int_{cell_i} int_{cell_j} exp(-(t - s)) ds dt`` for each pair ``i < j``."""
        a, b = self.cells
        i, j = self.pairs
        # cells are disjoint for i < j, so t > s throughout
        ref = self.t_lo
        left = np.exp(b[i] - ref) - np.exp(a[i] - ref)
        right = np.exp(-(a[j] - ref)) - np.exp(-(b[j] - ref))
        out = left * right
        out.flags.writeable = False
        return out

    @property
    def u_cap(self) -> float:
        """Grid cutoff on interval weights, ``step^{-3/2}``."""
        return self.step ** -1.5

    def node_index(self, times: np.ndarray) -> np.ndarray:
        k = np.rint((np.asarray(times, dtype=float) - self.t_lo) / self.step).astype(np.int64)
        if np.any(np.abs(self.nodes[np.clip(k, 0, self.n_cells)] - times) > 1e-9 * max(1.0, self.step)) or np.any(
            (k < 0) | (k > self.n_cells)
        ):
            raise ValidationError("interval endpoints must lie on grid nodes")
        return k


@dataclass(frozen=True)
class PathSample:
    grid: TimeGrid
    increments: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=float)
        if inc.shape != (self.grid.n_cells, 3):
            raise ValidationError(f"increments must have shape ({self.grid.n_cells}, 3)")
        if not np.all(np.isfinite(inc)):
            raise ValidationError("increments must be finite")
        inc = inc.copy()
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @cached_property
    def positions(self) -> np.ndarray:
        pos = np.zeros((self.grid.n_cells + 1, 3))
        np.cumsum(self.increments, axis=0, out=pos[1:])
        pos.flags.writeable = False
        return pos

    def displacement(self, s: float, t: float) -> np.ndarray:
        """``w(t) - w(s)`` for grid times ``s, t``."""
        k = self.grid.node_index(np.array([s, t]))
        return self.positions[k[1]] - self.positions[k[0]]

    @property
    def end_to_end_sq(self) -> float:
        d = self.positions[-1] - self.positions[0]
        return float(np.dot(d, d))


# ---------------------------------------------------------------------------
# Mixture potentials


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian-mixture pair interaction ``sqrt(2/pi) int exp(-u^2 z^2 / 2) gamma(du)``.

    ``coulomb``: gamma = du on (0, inf), potential 1/z.
    ``truncated``: du on (0, cap].
    ``band``: du on [a, b].
    ``power``: ``sqrt(pi/2) A_p u^{p-1} du`` with ``A_p = 1 / (2^{p/2-1} Gamma(p/2))``, potential ``z^{-p}``.
    """

    kind: str
    coupling: float
    window: Optional[tuple[float, float]] = None
    cap: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    p: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown mixture kind {self.kind!r}")
        if not (math.isfinite(self.coupling) and self.coupling >= 0):
            raise ValidationError("coupling must be finite and nonnegative")
        if self.kind == "truncated" and not (self.cap is not None and self.cap > 0):
            raise ValidationError("truncated kind needs cap > 0")
        if self.kind == "band":
            if self.a is None or self.b is None or not (0 <= self.a < self.b):
                raise ValidationError("band kind needs 0 <= a < b")
        if self.kind == "power" and not (self.p is not None and 0 < self.p < 2):
            raise ValidationError("power kind needs 0 < p < 2")
        if self.window is not None:
            object.__setattr__(self, "window", (float(self.window[0]), float(self.window[1])))

    @classmethod
    def coulomb_spec(cls, alpha: float, window=None) -> "MixtureSpec":
        return cls("coulomb", alpha, window)

    def with_coupling(self, coupling: float) -> "MixtureSpec":
        return MixtureSpec(self.kind, coupling, self.window, self.cap, self.a, self.b, self.p)

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @property
    def support(self) -> tuple[float, float]:
        if self.kind == "truncated":
            return (0.0, float(self.cap))
        if self.kind == "band":
            return (float(self.a), float(self.b))
        return (0.0, math.inf)

    def _power_const(self) -> float:
        p = float(self.p)
        return SQRT_PI_OVER_2 / (2.0 ** (p / 2 - 1) * gamma_fn(p / 2))

    def G(self, z: np.ndarray) -> np.ndarray:
        """``int exp(-u^2 z^2 / 2) gamma(du)``; ``sqrt(2/pi) G(z)`` is the potential."""
        return self.partial_G(z, 0.0, math.inf)

    def partial_G(self, z: np.ndarray, lo: float, hi: float) -> np.ndarray:
        """``int_{[lo, hi]} exp(-u^2 z^2 / 2) gamma(du)``."""
        z = np.maximum(np.asarray(z, dtype=float), Z_FLOOR)
        s_lo, s_hi = self.support
        lo, hi = max(lo, s_lo), min(hi, s_hi)
        if not hi > lo:
            return np.zeros_like(z)
        if self.kind == "power":
            p = float(self.p)
            c = SQRT_PI_OVER_2 * z ** (-p)
            up = 1.0 if math.isinf(hi) else gammainc(p / 2, 0.5 * (hi * z) ** 2)
            dn = gammainc(p / 2, 0.5 * (lo * z) ** 2) if lo > 0 else 0.0
            return c * (up - dn)
        if math.isinf(hi):
            if lo == 0:
                return SQRT_PI_OVER_2 / z
            return SQRT_PI_OVER_2 * erfc(lo * z / SQRT2) / z
        if lo == 0:
            out = SQRT_PI_OVER_2 / z
            # erf(x / sqrt 2) == 1 in double precision for x >= 9
            small = hi * z < 9.0
            out[small] *= erf(hi * z[small] / SQRT2)
            return out
        return SQRT_PI_OVER_2 * (erf(hi * z / SQRT2) - erf(lo * z / SQRT2)) / z

    def sample_u(self, z: np.ndarray, rng: np.random.Generator, u_cap: float = math.inf) -> np.ndarray:
        """Draw ``u`` with density proportional to ``exp(-u^2 z^2 / 2) gamma(du)`` on ``u <= u_cap``."""
        z = np.maximum(np.asarray(z, dtype=float), Z_FLOOR)
        if z.size == 0:
            return np.zeros(0)
        lo, hi = self.support
        hi = min(hi, u_cap)
        if self.kind == "power":
            a = float(self.p) / 2
            v = rng.random(z.shape)
            top = 1.0 if math.isinf(hi) else gammainc(a, 0.5 * (hi * z) ** 2)
            g = gammaincinv(a, v * top)
            return np.minimum(np.sqrt(2.0 * g) / z, hi)
        if lo == 0 and math.isinf(hi):
            return np.abs(rng.standard_normal(z.shape)) / z
        # inverse CDF of the half-normal restricted to [lo z, hi z]
        v = rng.random(z.shape)
        far = lo * z > 5.0
        w = np.empty_like(z)
        near = ~far
        c_lo = erf(lo * z[near] / SQRT2)
        c_hi = erf(hi * z[near] / SQRT2)
        w[near] = ndtri(0.5 * (1.0 + c_lo + v[near] * (c_hi - c_lo)))
        if np.any(far):
            # upper tails keep precision when the whole band sits far out
            t_lo = erfc(lo * z[far] / SQRT2)
            t_hi = erfc(hi * z[far] / SQRT2)
            w[far] = -ndtri(0.5 * (t_lo - v[far] * (t_lo - t_hi)))
        return np.clip(w / z, lo, hi)


# ---------------------------------------------------------------------------
# Conditional: intervals given path


@dataclass(frozen=True)
class IntensityTable:
    """Poisson masses ``m_ij`` for node pairs ``i < j`` together with ``z_ij``."""

    grid: TimeGrid
    i: np.ndarray = field(repr=False)
    j: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        return float(np.sum(self.mass))

    def region_total(self, s_range: tuple[float, float], t_range: tuple[float, float]) -> float:
        return float(np.sum(self.mass[self.region_mask(s_range, t_range)]))

    def region_mask(self, s_range, t_range) -> np.ndarray:
        x = self.grid.nodes
        si, tj = x[self.i], x[self.j]
        return (si >= s_range[0]) & (si <= s_range[1]) & (tj >= t_range[0]) & (tj <= t_range[1])


def _check_window(grid: TimeGrid, spec: MixtureSpec) -> None:
    if spec.window is not None:
        lo, hi = spec.window
        if abs(lo - grid.t_lo) > 1e-12 or abs(hi - grid.t_hi) > 1e-12:
            raise ValidationError("spec window does not match the grid window")


def pair_distances(path: PathSample) -> np.ndarray:
    """``|w(t_j) - w(t_i)|`` for all pairs ``i < j`` in ``TimeGrid.pairs`` order."""
    return pdist(path.positions)


def intensity_field(path: PathSample, spec: MixtureSpec) -> IntensityTable:
    """Per-pair Poisson masses of the interval process given the path."""
    grid = path.grid
    _check_window(grid, spec)
    i, j = grid.pairs
    z = pair_distances(path)
    mass = spec.coupling * SQRT_2_OVER_PI * grid.pair_base_mass * spec.partial_G(z, 0.0, grid.u_cap)
    return IntensityTable(grid, i, j, z, mass)


def sample_intervals_given_path(
    path: PathSample, spec: MixtureSpec, rng: np.random.Generator, table: Optional[IntensityTable] = None
) -> IntervalConfig:
    """Draw the Poisson interval configuration given the path."""
    grid = path.grid
    if table is None:
        table = intensity_field(path, spec)
    total = table.total
    count = int(rng.poisson(total)) if total > 0 else 0
    if count == 0:
        return IntervalConfig(grid.window)
    cum = np.cumsum(table.mass)
    pick = np.searchsorted(cum, rng.random(count) * cum[-1], side="right")
    pick = np.minimum(pick, cum.size - 1)
    pick.sort()
    u = spec.sample_u(table.z[pick], rng, grid.u_cap)
    x = grid.nodes
    return IntervalConfig(grid.window, x[table.i[pick]], x[table.j[pick]], u)


# ---------------------------------------------------------------------------
# Conditional: path given intervals


_warned_caps: set[int] = set()


def path_precision(intervals: IntervalConfig, grid: TimeGrid) -> tuple[np.ndarray, int]:
    """Dense per-coordinate precision of the increments and its bandwidth."""
    n = grid.n_cells
    diff = np.zeros((n + 1, n + 1))
    bw = 0
    if len(intervals):
        a = grid.node_index(intervals.s)
        b = grid.node_index(intervals.t)
        u2 = intervals.u**2
        np.add.at(diff, (a, a), u2)
        np.add.at(diff, (a, b), -u2)
        np.add.at(diff, (b, a), -u2)
        np.add.at(diff, (b, b), u2)
        bw = int(np.max(b - a)) - 1
    prec = np.cumsum(np.cumsum(diff, axis=0), axis=1)[:n, :n]
    prec[np.diag_indices(n)] += 1.0 / grid.step
    return prec, bw


def _cell_ranges(intervals: IntervalConfig, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Increment cells ``a..b-1`` spanned by each interval."""
    if not len(intervals):
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return grid.node_index(intervals.s), grid.node_index(intervals.t)


def _banded_precision(a: np.ndarray, b: np.ndarray, u2: np.ndarray, grid: TimeGrid, bw: int) -> np.ndarray:
    """Upper banded storage of the increment precision, built per diagonal in O(bw (n + m))."""
    n = grid.n_cells
    ab = np.zeros((bw + 1, n))
    for d in range(bw + 1):
        # diagonal d gets u^2 at (k, k + d) for a <= k and k + d <= b - 1
        sel = b - a > d
        diff = np.zeros(n + 1)
        np.add.at(diff, a[sel], u2[sel])
        np.add.at(diff, b[sel] - d, -u2[sel])
        ab[bw - d, d:] = np.cumsum(diff)[: n - d]
    ab[bw] += 1.0 / grid.step
    return ab


def sample_path_given_intervals(
    intervals: IntervalConfig,
    grid: TimeGrid,
    rng: np.random.Generator,
    band_cap: int = DEFAULT_BAND_CAP,
) -> PathSample:
    """Exact Gaussian draw of the increments given the intervals."""
    if tuple(intervals.window) != tuple(grid.window):
        raise ValidationError("interval window does not match the grid window")
    n = grid.n_cells
    z = rng.standard_normal((n, 3))
    a, b = _cell_ranges(intervals, grid)
    bw = int(np.max(b - a)) - 1 if a.size else 0
    try:
        if bw <= band_cap:
            cb = cholesky_banded(_banded_precision(a, b, intervals.u**2, grid, bw), lower=False)
            x = solve_banded((0, bw), cb, z)
        else:
            if band_cap not in _warned_caps:
                _warned_caps.add(band_cap)
                log.warning("bandwidth %d exceeds cap %d; using dense factorization", bw, band_cap)
            up = cholesky(path_precision(intervals, grid)[0], lower=False)
            x = solve_triangular(up, z, lower=False)
    except LinAlgError as exc:
        raise FactorizationError("path precision is not positive definite") from exc
    return PathSample(grid, x)


def brownian_path(grid: TimeGrid, rng: np.random.Generator) -> PathSample:
    return PathSample(grid, math.sqrt(grid.step) * rng.standard_normal((grid.n_cells, 3)))


# ---------------------------------------------------------------------------
# Chain


@dataclass(frozen=True)
class GibbsState:
    path: PathSample
    intervals: IntervalConfig
    sweep_index: int
    rng_state: dict = field(repr=False, compare=False)


def gibbs_chain(
    spec: MixtureSpec,
    grid: TimeGrid,
    sweeps: int,
    burn_in: Optional[int] = None,
    thin: int = 1,
    seed: int = 0,
    band_cap: int = DEFAULT_BAND_CAP,
) -> Iterator[GibbsState]:
    """Yield every ``thin``-th state after ``burn_in`` sweeps (default: 25% of sweeps).

    Starts from no intervals and a free random-walk path; each sweep draws the
    intervals given the path and then the path given the intervals.
    """
    if burn_in is None:
        burn_in = sweeps // 4
    if int(sweeps) != sweeps or int(burn_in) != burn_in or int(thin) != thin:
        raise ValidationError("sweeps, burn_in and thin must be integers")
    if not (sweeps > burn_in >= 0):
        raise ValidationError("need sweeps > burn_in >= 0")
    if thin < 1:
        raise ValidationError("thin must be >= 1")
    if not (0 <= int(seed) < 2**64):
        raise ValidationError("seed must be a 64-bit unsigned integer")
    _check_window(grid, spec)
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    path = brownian_path(grid, rng)
    intervals = IntervalConfig(grid.window)
    for sweep in range(1, int(sweeps) + 1):
        if spec.coupling > 0:
            intervals = sample_intervals_given_path(path, spec, rng)
        path = sample_path_given_intervals(intervals, grid, rng, band_cap)
        if sweep > burn_in and (sweep - burn_in) % thin == 0:
            yield GibbsState(path, intervals, sweep, rng.bit_generator.state)


def run_chain(spec: MixtureSpec, grid: TimeGrid, sweeps: int, burn_in=None, thin: int = 1, seed: int = 0) -> list[GibbsState]:
    return list(gibbs_chain(spec, grid, sweeps, burn_in, thin, seed))
