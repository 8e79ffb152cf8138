"""Bad sets, good and very good points, and the greedy interval-run construction.

Layout: block ``k`` pairs left endpoints in ``[2k, 2k+1]`` with right endpoints
in ``[2k+2, 2k+3]`` for ``k = 0..block_count-1``; the time horizon is
``[0, T0]`` with ``T0 >= 2 block_count + 1``. A run is a chain of intervals
``[s_j, t_j]``, ``j = 1..block_count-1``, with ``s_j`` in block ``j-1``'s left
range and ``t_j`` in the middle third of ``[2j, 2j+1]``.

Masks are boolean grids of shape ``(n_a, n_b)`` over a block; cell ``i`` of the
left range is represented by its centre ``2k + (i + 1/2)/n_a``. Masks may be
dense arrays or scipy sparse matrices, which allows resolutions fine enough to
hold sets of measure below ``1e-7``. All classification thresholds are compared
in exact integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import maximum_filter1d
from scipy.special import erf, erfc

from .errors import ValidationError
from .quadform import IntervalConfig
from .sampler import SQRT_2_OVER_PI, MixtureSpec, PathSample, TimeGrid, gibbs_chain

SQRT_PI_OVER_2 = math.sqrt(math.pi / 2.0)
SQRT2 = math.sqrt(2.0)

FAILURE_REASONS = ("none", "no_candidate", "bad_measure_blowup")

MaskLike = Union[np.ndarray, sp.spmatrix, sp.sparray]


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class PathfinderParams:
    alpha: float
    C1: float
    eps: float = 1e-10
    delta: float = 0.05
    T0: Optional[float] = None
    block_count: int = 32
    grid_res: float = 1.0 / 256
    good_threshold: float = 0.1
    vg_threshold: float = 1e-3
    measure_threshold: float = 1e-7

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.C1 > 0 and self.delta > 0):
            raise ValidationError("alpha, C1 and delta must be positive")
        if not (0 < self.eps < 1):
            raise ValidationError("eps must lie in (0, 1)")
        if self.delta * self.alpha**2 < 1:
            raise ValidationError("need delta * alpha^2 >= 1")
        if int(self.block_count) != self.block_count or self.block_count < 2:
            raise ValidationError("block_count must be an integer >= 2")
        n = 1.0 / self.grid_res if self.grid_res > 0 else 0.0
        if not (self.grid_res > 0 and abs(n - round(n)) < 1e-9 and round(n) >= 3):
            raise ValidationError("grid_res must be 1/n for an integer n >= 3")
        T0 = self.horizon
        if T0 < 2 * self.block_count + 1 - 1e-12:
            raise ValidationError("T0 must cover the block layout, T0 >= 2 block_count + 1")
        for name in ("good_threshold", "vg_threshold", "measure_threshold"):
            if not (0 < getattr(self, name) < 1):
                raise ValidationError(f"{name} must lie in (0, 1)")

    @property
    def horizon(self) -> float:
        return float(self.T0) if self.T0 is not None else 2.0 * self.block_count + 1.0

    @property
    def cells(self) -> int:
        return int(round(1.0 / self.grid_res))

    @property
    def runs(self) -> int:
        """Number of runs, ``floor(delta alpha^2)``."""
        return int(math.floor(self.delta * self.alpha**2 + 1e-12))

    @property
    def saturation(self) -> float:
        """Occupancy second moment assigned to a failed construction, ``(delta alpha^2)^2``."""
        return (self.delta * self.alpha**2) ** 2

    @property
    def u_band(self) -> tuple[float, float]:
        """Super-standard weights ``[alpha / C1^4, 2 alpha / C1^4]``."""
        lo = self.alpha / self.C1**4
        return lo, 2.0 * lo

    @property
    def bad_threshold(self) -> float:
        return self.alpha**2 / self.C1**5

    def ordering_report(self) -> dict[str, bool]:
        """Which of the scale separations ``1 << 1/eps``, ``C1 << alpha``, ``C1 << 1/delta << alpha`` hold numerically.

        Reported only; desk-scale runs generally violate some of them.
        """
        return {
            "inv_eps_gt_1": 1.0 / self.eps > 1.0,
            "C1_lt_alpha": self.C1 < self.alpha,
            "C1_lt_inv_delta": self.C1 < 1.0 / self.delta,
            "inv_delta_lt_alpha": 1.0 / self.delta < self.alpha,
        }

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["T0"] = self.horizon
        return d


# ---------------------------------------------------------------------------
# Super-standard intensity and bad sets


def _band_integral(z: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """``int_lo^hi exp(-u^2 z^2 / 2) du`` in closed form."""
    z = np.asarray(z, dtype=float)
    out = np.full(z.shape, hi - lo)
    pos = z > 0
    zp = z[pos]
    tail = lo * zp > 1.0
    val = np.empty_like(zp)
    zt, zh = zp[tail], zp[~tail]
    val[tail] = SQRT_PI_OVER_2 * (erfc(lo * zt / SQRT2) - erfc(hi * zt / SQRT2)) / zt
    val[~tail] = SQRT_PI_OVER_2 * (erf(hi * zh / SQRT2) - erf(lo * zh / SQRT2)) / zh
    out[pos] = val
    return out


def _block_axes(k: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(n) + 0.5) / n
    return 2 * k + c, 2 * k + 2 + c


def _positions_at(path: PathSample, times: np.ndarray) -> np.ndarray:
    x = path.grid.nodes
    pos = path.positions
    return np.stack([np.interp(times, x, pos[:, c]) for c in range(3)], axis=1)


def sstd_intensity(path: PathSample, params: PathfinderParams) -> list[np.ndarray]:
    """Super-standard intensity density on each block grid, shape ``(n, n)`` per block.

    ``alpha sqrt(2/pi) e^{-(b - a)} int_{alpha/C1^4}^{2 alpha/C1^4} exp(-u^2 |w(b) - w(a)|^2 / 2) du``
    at cell centres, with the path linearly interpolated between its nodes.
    """
    g = path.grid
    if g.t_lo > 1e-12 or g.t_hi < 2 * params.block_count + 1 - 1e-12:
        raise ValidationError("path must cover [0, 2 block_count + 1]")
    n = params.cells
    lo, hi = params.u_band
    out = []
    for k in range(params.block_count):
        a, b = _block_axes(k, n)
        pa, pb = _positions_at(path, a), _positions_at(path, b)
        z = np.sqrt(np.sum((pb[None, :, :] - pa[:, None, :]) ** 2, axis=2))
        dens = params.alpha * SQRT_2_OVER_PI * np.exp(-(b[None, :] - a[:, None])) * _band_integral(z, lo, hi)
        out.append(dens)
    return out


@dataclass(frozen=True)
class BadSetGrid:
    """Bad pairs of block ``k`` on an ``(n_a, n_b)`` grid; ``measure`` is the covered area."""

    k: int
    mask: MaskLike = field(repr=False)

    def __post_init__(self) -> None:
        m = self.mask
        if sp.issparse(m):
            m = sp.csr_matrix(m, dtype=bool)
            m.sum_duplicates()
            m.eliminate_zeros()
        else:
            m = np.asarray(m, dtype=bool)
        if m.ndim != 2 or min(m.shape) < 1:
            raise ValidationError("mask must be a non-empty 2-d grid")
        object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.mask.shape)

    @property
    def row_counts(self) -> np.ndarray:
        """Number of bad ``b``-cells in each ``a``-row (int64)."""
        if sp.issparse(self.mask):
            return np.diff(self.mask.indptr).astype(np.int64)
        return np.count_nonzero(self.mask, axis=1).astype(np.int64)

    @property
    def cell_count(self) -> int:
        return int(self.row_counts.sum())

    @property
    def measure(self) -> float:
        n_a, n_b = self.shape
        return self.cell_count / (n_a * n_b)

    def a_centres(self) -> np.ndarray:
        n_a = self.shape[0]
        return 2 * self.k + (np.arange(n_a) + 0.5) / n_a

    def with_rows(self, rows: np.ndarray) -> "BadSetGrid":
        """Union with full ``b``-rows at the given ``a``-cells."""
        rows = np.asarray(rows, dtype=bool)
        if not rows.any():
            return self
        if sp.issparse(self.mask):
            return BadSetGrid(self.k, (self.mask + _sparse_rows(rows, self.shape[1])).astype(bool))
        m = self.mask.copy()
        m[rows, :] = True
        return BadSetGrid(self.k, m)


def _sparse_rows(rows: np.ndarray, n_b: int) -> sp.csr_matrix:
    r = np.flatnonzero(rows)
    data = np.ones(r.size * n_b, dtype=bool)
    ii = np.repeat(r, n_b)
    jj = np.tile(np.arange(n_b), r.size)
    return sp.csr_matrix((data, (ii, jj)), shape=(rows.size, n_b))


def compute_bad_sets(intensity: Sequence[np.ndarray], params: PathfinderParams) -> list[BadSetGrid]:
    """``S_k``: cells where the super-standard density is at most ``alpha^2 / C1^5``."""
    thr = params.bad_threshold
    return [BadSetGrid(k, np.asarray(d) <= thr) for k, d in enumerate(intensity)]


# ---------------------------------------------------------------------------
# Point classes


@dataclass(frozen=True)
class PointClasses:
    """Good and very good ``a``-cells of a block; ``very_good`` implies ``good``."""

    k: int
    good: np.ndarray = field(repr=False)
    very_good: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.good.size

    @property
    def good_measure(self) -> float:
        return float(np.count_nonzero(self.good)) / self.n

    @property
    def vg_measure(self) -> float:
        return float(np.count_nonzero(self.very_good)) / self.n

    def centres(self) -> np.ndarray:
        return 2 * self.k + (np.arange(self.n) + 0.5) / self.n

    def cell_of(self, x: np.ndarray) -> np.ndarray:
        """Cell index of points in ``[2k, 2k+1]``; the right end belongs to the last cell."""
        i = np.floor((np.asarray(x, dtype=float) - 2 * self.k) * self.n + 1e-9).astype(np.int64)
        return np.clip(i, 0, self.n - 1)


def _ratio(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def middle_third(n: int) -> np.ndarray:
    """Cells whose centre ``(i + 1/2)/n`` lies in ``[1/3, 2/3]``, decided exactly."""
    c = 3 * (2 * np.arange(n) + 1)
    return (c >= 2 * n) & (c <= 4 * n)


def classify_points(
    bad: BadSetGrid, good_threshold: float = 0.1, vg_threshold: float = 1e-3
) -> PointClasses:
    """Good cells have ``g(a) <= good_threshold``; very good cells are middle-third cells
    whose right-anchored window averages of ``g`` over ``x = m/n_a`` for every
    ``m = 1..floor(n_a/3)`` stay at or below ``vg_threshold``.

    ``g(a)`` is the fraction of bad ``b``-cells in row ``a``. The window test
    uses ``Q_i = den P_i - num n_b i`` with prefix sums ``P`` of the row counts:
    every window from ``i`` is below threshold iff ``max Q`` over ``(i, i+M]``
    is at most ``Q_i``.
    """
    n_a, n_b = bad.shape
    counts = bad.row_counts
    gt, vt = _ratio(good_threshold), _ratio(vg_threshold)
    good = counts * gt.denominator <= gt.numerator * n_b
    M = n_a // 3
    if n_a * n_b * max(vt.denominator, 1) >= 2**62:
        raise ValidationError("mask too large for exact classification")
    P = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    Q = P * vt.denominator - vt.numerator * n_b * np.arange(n_a + 1, dtype=np.int64)
    vg = middle_third(n_a)
    if M >= 1:
        # fwd[i] = max(Q[i .. i+M-1]), so fwd[i+1] covers the windows starting at cell i
        fwd = maximum_filter1d(Q, size=M, origin=-(M // 2), mode="constant", cval=np.iinfo(np.int64).min)
        vg &= fwd[1:] <= Q[:-1]
    vg &= good
    return PointClasses(bad.k, good, vg)


# ---------------------------------------------------------------------------
# Proposition-backed bounds


@dataclass(frozen=True)
class BoundCheck:
    measure: float
    vg_measure: float
    min_good_window_fraction: float
    min_connection_measure: float
    applicable: bool

    @property
    def passed(self) -> bool:
        return (not self.applicable) or (
            self.vg_measure >= 0.33 and self.min_good_window_fraction >= 0.9 and self.min_connection_measure >= 0.2
        )


def _upsample(x: np.ndarray, n: int) -> np.ndarray:
    if n % x.size:
        raise ValidationError("grid resolutions must divide each other")
    return np.repeat(x, n // x.size)


def _min_good_window_fraction(classes: PointClasses) -> float:
    n = classes.n
    M = n // 3
    vg = np.flatnonzero(classes.very_good)
    if vg.size == 0 or M == 0:
        return 1.0
    bad = np.flatnonzero(~classes.good)
    if bad.size == 0:
        return 1.0
    worst = 1.0
    if bad.size <= vg.size:
        # from a fixed start the worst window ends at a non-good cell
        N = np.concatenate([[0], np.cumsum(~classes.good)]).astype(np.int64)
        for j in bad:
            i = vg[np.searchsorted(vg, j - M + 1) : np.searchsorted(vg, j, side="right")]
            if i.size:
                frac = 1.0 - (N[j + 1] - N[i]) / (j - i + 1)
                worst = min(worst, float(frac.min()))
        return worst
    P = np.concatenate([[0], np.cumsum(classes.good.astype(np.int64))])
    m = np.arange(1, M + 1)
    for i in vg:
        top = min(i + M, n) - i
        frac = (P[i + m[:top]] - P[i]) / m[:top]
        worst = min(worst, float(frac.min()))
    return worst


def _connection_measures(bad0: BadSetGrid, classes0: PointClasses, classes1: PointClasses) -> np.ndarray:
    """For each good ``a`` of block 0: measure of ``b`` in ``VG(S_1)`` with ``(a, b)`` not bad."""
    n_b = bad0.shape[1]
    vg1 = classes1.very_good
    if vg1.size > n_b:
        if vg1.size % n_b:
            raise ValidationError("grid resolutions must divide each other")
        r = vg1.size // n_b
        vg_frac = vg1.reshape(n_b, r).mean(axis=1)  # fraction of each b-cell that is very good
        mask = bad0.mask
        total = vg_frac.sum() / n_b
        hit = (mask @ vg_frac if sp.issparse(mask) else mask.astype(float) @ vg_frac) / n_b
    else:
        vg_up = _upsample(vg1.astype(float), n_b)
        mask = bad0.mask
        total = vg_up.sum() / n_b
        hit = (mask @ vg_up if sp.issparse(mask) else mask.astype(float) @ vg_up) / n_b
    out = total - np.asarray(hit).ravel()
    return out[classes0.good]


def maximal_density_bound(
    bad0: BadSetGrid,
    bad1: BadSetGrid,
    measure_threshold: float = 1e-7,
    good_threshold: float = 0.1,
    vg_threshold: float = 1e-3,
) -> BoundCheck:
    """Evaluate the three class guarantees for consecutive bad sets.

    Computes the very-good measure of block 0, the smallest good-point fraction
    over right windows from very good points, and the smallest connection measure
    over good points. The guarantees apply when both measures are at most
    ``measure_threshold``; ``applicable`` records that.
    """
    c0 = classify_points(bad0, good_threshold, vg_threshold)
    c1 = classify_points(bad1, good_threshold, vg_threshold)
    conn = _connection_measures(bad0, c0, c1)
    mu = max(bad0.measure, bad1.measure)
    return BoundCheck(
        mu,
        c0.vg_measure,
        _min_good_window_fraction(c0),
        float(conn.min()) if conn.size else math.inf,
        mu <= measure_threshold,
    )


# ---------------------------------------------------------------------------
# Runs


@dataclass(frozen=True)
class RunsResult:
    """Transcript of the run construction.

    ``runs[L]`` lists the ``(s, t)`` pairs of run ``L + 1``; ``items[L]`` the
    matching indices into the interval configuration; ``t0[L]`` the start point.
    On failure the transcript is partial and ``failure_at = (L, j)``.
    """

    runs: list[list[tuple[float, float]]]
    items: list[list[int]]
    t0: list[float]
    failed: bool
    failure_reason: str
    occupancy_second_moment: float
    failure_at: Optional[tuple[int, int]] = None
    vg_measure_min: float = math.nan
    bad_measure_max: float = math.nan

    _run_length: int = field(default=0, repr=False)

    def summary(self) -> dict:
        return {
            "failed": self.failed,
            "reason": self.failure_reason,
            "second_moment": self.occupancy_second_moment,
            "vg_measure_min": self.vg_measure_min,
            "bad_measure_max": self.bad_measure_max,
            "runs_completed": sum(1 for r in self.runs if len(r) == self._run_length),
        }


def super_standard(intervals: IntervalConfig, params: PathfinderParams) -> np.ndarray:
    """Mask of intervals with weight in the super-standard band and endpoints in some block pair."""
    lo, hi = params.u_band
    s, t, u = intervals.s, intervals.t, intervals.u
    k = np.floor(s / 2.0).astype(np.int64)
    in_s = (s >= 2 * k) & (s <= 2 * k + 1)
    in_t = (t >= 2 * k + 2) & (t <= 2 * k + 3)
    return (u >= lo) & (u <= hi) & in_s & in_t & (k >= 0) & (k < params.block_count)


def _gap_rows(n: int, k: int, gaps: list[tuple[float, float]]) -> np.ndarray:
    centres = 2 * k + (np.arange(n) + 0.5) / n
    rows = np.zeros(n, dtype=bool)
    for a, b in gaps:
        # half-open so that a gap covers about (b - a) n cells and an empty gap none
        rows |= (centres >= a) & (centres < b)
    return rows


def build_runs(intervals: IntervalConfig, bad_sets: Sequence[BadSetGrid], params: PathfinderParams) -> RunsResult:
    """Greedy construction of ``floor(delta alpha^2)`` runs of super-standard intervals.

    Each run picks ``t_0`` as the smallest very good cell centre of block 0 and
    then, for ``j = 1..block_count-1``, the unused super-standard interval with
    the smallest left end ``s >= t_{j-1}`` in block ``j-1`` such that ``s`` is
    good and ``t`` is very good in block ``j`` (ties: smaller ``t``, then index).
    Before each run the bad sets are augmented with the gap rows of earlier
    runs; a bad set of measure at least ``measure_threshold`` or a missing
    candidate stops the construction. The construction is deterministic.
    """
    B = params.block_count
    if len(bad_sets) != B:
        raise ValidationError(f"need {B} bad sets, got {len(bad_sets)}")
    for k, S in enumerate(bad_sets):
        if S.k != k:
            raise ValidationError("bad sets must be ordered by block")
    ss = np.flatnonzero(super_standard(intervals, params))
    s_all, t_all = intervals.s, intervals.t
    used = np.zeros(len(intervals), dtype=bool)
    gaps: list[list[tuple[float, float]]] = [[] for _ in range(B)]
    runs: list[list[tuple[float, float]]] = []
    items: list[list[int]] = []
    t0s: list[float] = []
    vg_min, mu_max = math.inf, 0.0

    def finish(reason: str, where) -> RunsResult:
        failed = reason != "none"
        second = params.saturation if failed else occupancy_profile_from(runs, t0s, params)[1]
        return RunsResult(runs, items, t0s, failed, reason, second, where, vg_min, mu_max, B - 1)

    for L in range(1, params.runs + 1):
        current = [S.with_rows(_gap_rows(S.shape[0], S.k, gaps[S.k])) for S in bad_sets]
        mu = max(S.measure for S in current)
        mu_max = max(mu_max, mu)
        if mu >= params.measure_threshold:
            return finish("bad_measure_blowup", (L, 0))
        classes = [classify_points(S, params.good_threshold, params.vg_threshold) for S in current]
        vg_min = min(vg_min, min(c.vg_measure for c in classes))
        vg0 = np.flatnonzero(classes[0].very_good)
        run: list[tuple[float, float]] = []
        idx: list[int] = []
        runs.append(run)
        items.append(idx)
        if vg0.size == 0:
            return finish("no_candidate", (L, 0))
        t_prev = float(classes[0].centres()[vg0[0]])
        t0s.append(t_prev)
        for j in range(1, B):
            lo_blk, hi_blk = 2.0 * (j - 1), 2.0 * (j - 1) + 1.0
            cand = ss[~used[ss]]
            s_c, t_c = s_all[cand], t_all[cand]
            ok = (s_c >= t_prev - 1e-12) & (s_c <= hi_blk + 1e-12) & (s_c >= lo_blk - 1e-12)
            ok &= (t_c >= 2 * j + 1.0 / 3 - 1e-12) & (t_c <= 2 * j + 2.0 / 3 + 1e-12)
            if ok.any():
                cand, s_c, t_c = cand[ok], s_c[ok], t_c[ok]
                ok = classes[j - 1].good[classes[j - 1].cell_of(s_c)] & classes[j].very_good[classes[j].cell_of(t_c)]
                cand, s_c, t_c = cand[ok], s_c[ok], t_c[ok]
            if cand.size == 0:
                return finish("no_candidate", (L, j))
            pick = np.lexsort((cand, t_c, s_c))[0]
            i = int(cand[pick])
            used[i] = True
            run.append((float(s_all[i]), float(t_all[i])))
            idx.append(i)
            gaps[j - 1].append((t_prev, float(s_all[i])))
            t_prev = float(t_all[i])
    return finish("none", None)


# ---------------------------------------------------------------------------
# Occupancy


@dataclass(frozen=True)
class OccupancyProfile:
    """Piecewise-constant ``U`` on ``[0, T0]``: value ``values[i]`` on ``[edges[i], edges[i+1])``."""

    edges: np.ndarray
    values: np.ndarray
    second_moment: float

    def __call__(self, x) -> np.ndarray:
        i = np.searchsorted(self.edges, np.asarray(x, dtype=float), side="right") - 1
        i = np.clip(i, 0, self.values.size - 1)
        return self.values[i]


def _gaps_of(runs: Sequence[Sequence[tuple[float, float]]], t0s: Sequence[float]) -> list[tuple[float, float]]:
    out = []
    for run, t0 in zip(runs, t0s):
        t_prev = t0
        for s, t in run:
            out.append((t_prev, s))
            t_prev = t
    return out


def occupancy_profile_from(
    runs: Sequence[Sequence[tuple[float, float]]], t0s: Sequence[float], params: PathfinderParams
) -> tuple[OccupancyProfile, float]:
    T0 = params.horizon
    gaps = _gaps_of(runs, t0s)
    pts = sorted({0.0, T0, *(a for a, _ in gaps), *(b for _, b in gaps)})
    edges = np.array(pts)
    mids = 0.5 * (edges[:-1] + edges[1:])
    values = np.zeros(mids.size, dtype=np.int64)
    for a, b in gaps:
        values += (mids >= a) & (mids <= b)
    second = float(np.sum(values.astype(float) ** 2 * np.diff(edges)) / T0)
    prof = OccupancyProfile(edges, values, second)
    return prof, second


def occupancy_profile(result: RunsResult, params: PathfinderParams) -> tuple[OccupancyProfile, float]:
    """Gap-count profile ``U`` and ``(1/T0) int U^2``; failed results give ``(delta alpha^2)^2``.

    A point shared by two gaps is counted once per gap; such points have measure
    zero and do not affect the second moment.
    """
    if result.failed:
        T0 = params.horizon
        sat = params.delta * params.alpha**2
        prof = OccupancyProfile(np.array([0.0, T0]), np.array([sat]), params.saturation)
        return prof, params.saturation
    return occupancy_profile_from(result.runs, result.t0, params)


# ---------------------------------------------------------------------------
# Audit


def audit_transcript(result: RunsResult, intervals: IntervalConfig, params: PathfinderParams) -> list[str]:
    """Brute-force check of a transcript; returns human-readable violations (empty if clean)."""
    bad: list[str] = []
    seen: dict[int, int] = {}
    lo_u, hi_u = params.u_band
    for L, (run, idx) in enumerate(zip(result.runs, result.items), start=1):
        if len(run) != len(idx):
            bad.append(f"run {L}: pair and index lists differ in length")
            continue
        for j, ((s, t), i) in enumerate(zip(run, idx), start=1):
            if i in seen:
                bad.append(f"run {L}: interval {i} already used in run {seen[i]}")
            seen[i] = L
            if not (intervals.s[i] == s and intervals.t[i] == t):
                bad.append(f"run {L}, j={j}: recorded pair does not match interval {i}")
            if not (lo_u <= intervals.u[i] <= hi_u):
                bad.append(f"run {L}, j={j}: weight outside the super-standard band")
            if not (2 * (j - 1) + 1 / 3 - 1e-12 <= s <= 2 * (j - 1) + 1 + 1e-12):
                bad.append(f"run {L}, j={j}: s={s} outside [2(j-1)+1/3, 2(j-1)+1]")
            if not (2 * j + 1 / 3 - 1e-12 <= t <= 2 * j + 2 / 3 + 1e-12):
                bad.append(f"run {L}, j={j}: t={t} outside [2j+1/3, 2j+2/3]")
        for j in range(len(run)):
            for jj in range(j + 1, len(run)):
                (s1, t1), (s2, t2) = run[j], run[jj]
                if min(t1, t2) > max(s1, s2):
                    bad.append(f"run {L}: intervals {j + 1} and {jj + 1} overlap")
        for j in range(len(run) - 1):
            if run[j + 1][0] < run[j][1]:
                bad.append(f"run {L}: intervals {j + 1} and {j + 2} out of order")
    for L1 in range(len(result.items)):
        for L2 in range(L1 + 1, len(result.items)):
            if set(result.items[L1]) & set(result.items[L2]):
                bad.append(f"runs {L1 + 1} and {L2 + 1} share intervals")
    return bad


# ---------------------------------------------------------------------------
# End-to-end fixture


@dataclass(frozen=True)
class PathfindOutcome:
    seed: int
    result: RunsResult
    audit: list[str]
    interval_count: int
    super_standard_count: int


def pathfind_from_chain(
    params: PathfinderParams, seed: int, step: float = 1.0 / 8, sweeps: int = 200
) -> PathfindOutcome:
    """Run a Coulomb chain on ``[0, T0]`` and apply the construction to its final state."""
    grid = TimeGrid(0.0, params.horizon, step)
    spec = MixtureSpec("coulomb", params.alpha)
    state = None
    for state in gibbs_chain(spec, grid, sweeps, sweeps - 1, 1, seed):
        pass
    assert state is not None
    bad = compute_bad_sets(sstd_intensity(state.path, params), params)
    result = build_runs(state.intervals, bad, params)
    return PathfindOutcome(
        seed,
        result,
        audit_transcript(result, state.intervals, params),
        len(state.intervals),
        int(np.count_nonzero(super_standard(state.intervals, params))),
    )
