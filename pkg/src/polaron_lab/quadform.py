"""Exact evaluation of the variance functional of a weighted interval configuration.

For a window ``[t_lo, t_hi]`` of length ``L`` and intervals ``(s_i, t_i, u_i)``

    value = 3 sup_f [ 2 (f(t_hi) - f(t_lo)) / sqrt(L) - int f'^2 - sum_i u_i^2 (f(t_i) - f(s_i))^2 ].

Between consecutive breakpoints (window ends and interval endpoints) the
maximizer is linear, so the supremum is ``3 b^T A^{-1} b`` for the finite SPD
system assembled by :func:`reduce_breakpoints`, with the gauge ``f(t_lo) = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cho_solve_banded, cholesky_banded

from ._numerics import batch_means
from .errors import FactorizationError, ValidationError

log = logging.getLogger(__name__)

BAND_CAP = 64
STIFF_LIMIT = 1e6  # max u^2 (t - s) handled by the banded path
HARD_U = 1e6


@dataclass(frozen=True)
class IntervalConfig:
    """Finite set of weighted intervals ``(s, t, u)`` inside a time window, sorted by ``s``."""

    window: tuple[float, float]
    s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        lo, hi = (float(self.window[0]), float(self.window[1]))
        if not (math.isfinite(lo) and math.isfinite(hi)) or not hi > lo:
            raise ValidationError(f"empty or invalid window ({lo}, {hi})")
        s = np.asarray(self.s, dtype=float).reshape(-1)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(-1)
        if not (s.shape == t.shape == u.shape):
            raise ValidationError("s, t, u must have equal lengths")
        bad = np.flatnonzero(~(np.isfinite(s) & np.isfinite(t) & np.isfinite(u)))
        if bad.size:
            raise ValidationError(f"non-finite entry in item {int(bad[0])}")
        bad = np.flatnonzero(~(s < t))
        if bad.size:
            raise ValidationError(f"item {int(bad[0])} has s >= t")
        bad = np.flatnonzero(~(u > 0))
        if bad.size:
            raise ValidationError(f"item {int(bad[0])} has u <= 0")
        bad = np.flatnonzero((s < lo) | (t > hi))
        if bad.size:
            raise ValidationError(f"item {int(bad[0])} leaves the window")
        order = np.argsort(s, kind="stable")
        for name, arr in (("s", s), ("t", t), ("u", u)):
            arr = arr[order].copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "window", (lo, hi))

    @classmethod
    def from_items(cls, window: tuple[float, float], items: Iterable[tuple[float, float, float]]) -> "IntervalConfig":
        arr = np.asarray(list(items), dtype=float).reshape(-1, 3)
        return cls(window, arr[:, 0], arr[:, 1], arr[:, 2])

    @property
    def items(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.s, self.t, self.u)]

    @property
    def length(self) -> float:
        return self.window[1] - self.window[0]

    def __len__(self) -> int:
        return int(self.s.size)

    def add(self, s: float, t: float, u: float) -> "IntervalConfig":
        return IntervalConfig(
            self.window, np.append(self.s, s), np.append(self.t, t), np.append(self.u, u)
        )

    def shifted(self, delta: float) -> "IntervalConfig":
        lo, hi = self.window
        return IntervalConfig((lo + delta, hi + delta), self.s + delta, self.t + delta, self.u)

    def select(self, mask: np.ndarray) -> "IntervalConfig":
        return IntervalConfig(self.window, self.s[mask], self.t[mask], self.u[mask])


@dataclass(frozen=True)
class VarianceSolution:
    value: float
    per_coordinate: float
    breakpoints: np.ndarray = field(repr=False)
    f_values: np.ndarray = field(repr=False)
    residual: float = 0.0
    method: str = "banded"

    @property
    def optimizer(self) -> list[tuple[float, float]]:
        return [(float(x), float(f)) for x, f in zip(self.breakpoints, self.f_values)]


@dataclass(frozen=True)
class _System:
    breakpoints: np.ndarray
    edge: np.ndarray  # 1 / Delta_j for j = 0..m-1
    s_slot: np.ndarray  # unknown index of s (-1 for the gauge node)
    t_slot: np.ndarray
    u2: np.ndarray
    rhs_scale: float

    @property
    def size(self) -> int:
        return self.breakpoints.size - 1

    @property
    def spans(self) -> np.ndarray:
        return np.where(self.s_slot >= 0, self.t_slot - self.s_slot, 0)

    def rhs(self) -> np.ndarray:
        b = np.zeros(self.size)
        b[-1] = self.rhs_scale
        return b

    def sparse(self) -> sp.csr_matrix:
        m = self.size
        c = self.edge
        diag = c.copy()
        diag[:-1] += c[1:]
        rows = [np.arange(m), np.arange(m - 1), np.arange(1, m)]
        cols = [np.arange(m), np.arange(1, m), np.arange(m - 1)]
        vals = [diag, -c[1:], -c[1:]]
        inside = self.s_slot >= 0
        rows += [self.t_slot, self.s_slot[inside], self.s_slot[inside], self.t_slot[inside]]
        cols += [self.t_slot, self.s_slot[inside], self.t_slot[inside], self.s_slot[inside]]
        vals += [self.u2, self.u2[inside], -self.u2[inside], -self.u2[inside]]
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m)
        ).tocsr()


def _assemble(config: IntervalConfig) -> _System:
    lo, hi = config.window
    pts = np.unique(np.concatenate([[lo, hi], config.s, config.t]))
    edge = 1.0 / np.diff(pts)
    s_slot = np.searchsorted(pts, config.s) - 1
    t_slot = np.searchsorted(pts, config.t) - 1
    return _System(pts, edge, s_slot, t_slot, config.u**2, 1.0 / math.sqrt(hi - lo))


def reduce_breakpoints(config: IntervalConfig) -> tuple[np.ndarray, sp.csr_matrix, np.ndarray]:
    """Breakpoints, SPD matrix ``A`` and vector ``b`` of the reduced problem.

    ``A`` acts on ``f`` at every breakpoint except ``t_lo`` (gauge ``f(t_lo) = 0``);
    ``b`` is ``1/sqrt(L)`` at the ``t_hi`` slot and zero elsewhere.
    """
    sysm = _assemble(config)
    return sysm.breakpoints, sysm.sparse(), sysm.rhs()


def _band_matrix(sysm: _System, narrow: np.ndarray, bw: int) -> np.ndarray:
    """Upper banded storage ``ab[bw + i - j, j] = A[i, j]`` of the narrow part."""
    m = sysm.size
    ab = np.zeros((bw + 1, m))
    c = sysm.edge
    ab[bw] += c
    ab[bw, :-1] += c[1:]
    if bw >= 1:
        ab[bw - 1, 1:] -= c[1:]
    ts, ss, u2 = sysm.t_slot[narrow], sysm.s_slot[narrow], sysm.u2[narrow]
    np.add.at(ab[bw], ts, u2)
    inside = ss >= 0
    np.add.at(ab[bw], ss[inside], u2[inside])
    np.add.at(ab, (bw + ss[inside] - ts[inside], ts[inside]), -u2[inside])
    return ab


def _band_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    bw = ab.shape[0] - 1
    y = ab[bw] * x
    for k in range(1, bw + 1):
        row = ab[bw - k, k:]
        y[:-k] += row * x[k:]
        y[k:] += row * x[:-k]
    return y


def _solve_banded(sysm: _System, bw: int) -> tuple[np.ndarray, float]:
    b = sysm.rhs()
    ab = _band_matrix(sysm, np.ones(sysm.u2.size, dtype=bool), bw)
    try:
        cb = cholesky_banded(ab, lower=False)
    except LinAlgError as exc:
        raise FactorizationError("banded Cholesky failed") from exc
    x = cho_solve_banded((cb, False), b)
    r = b - _band_matvec(ab, x)
    res = float(np.linalg.norm(r) / np.linalg.norm(b))
    if res > 1e-14:
        x_new = x + cho_solve_banded((cb, False), r)
        r_new = b - _band_matvec(ab, x_new)
        res_new = float(np.linalg.norm(r_new) / np.linalg.norm(b))
        if res_new < res:
            x, res = x_new, res_new
    return x, res


def _solve_woodbury(config: IntervalConfig, sysm: _System) -> tuple[np.ndarray, float]:
    """Low-rank solve in increment coordinates.

    With increments ``y`` the matrix is ``D + sum_i u_i^2 v_i v_i^T`` where ``D`` is
    diagonal with entries ``1/Delta_j`` and ``v_i`` indicates the cells of interval
    ``i``. Woodbury with the capacitance rescaled by ``diag(u)`` reduces to the
    overlap Gram matrix ``O_ij = |I_i cap I_j|`` plus ``diag(1/u^2)``, which stays
    well conditioned when some ``u`` are huge.
    """
    L = config.length
    s, t = config.s, config.t
    gram = np.minimum(t[:, None], t[None, :]) - np.maximum(s[:, None], s[None, :])
    np.maximum(gram, 0.0, out=gram)
    gram[np.diag_indices_from(gram)] += 1.0 / sysm.u2
    g = (t - s) / math.sqrt(L)
    try:
        cf = cho_factor(gram, lower=False)
    except LinAlgError as exc:
        raise FactorizationError("capacitance Cholesky failed") from exc
    z = cho_solve(cf, g)
    r = g - gram @ z
    z = z + cho_solve(cf, r)
    res = float(np.linalg.norm(g - gram @ z) / np.linalg.norm(g))
    # increments: y_j = Delta_j (1/sqrt(L) - sum_{i covers j} z_i)
    cover = np.zeros(sysm.size + 1)
    np.add.at(cover, sysm.s_slot + 1, z)
    np.add.at(cover, sysm.t_slot + 1, -z)
    load = np.cumsum(cover)[:-1]
    y = (1.0 / math.sqrt(L) - load) / sysm.edge
    return np.cumsum(y), res


def _stiffness(config: IntervalConfig) -> float:
    if len(config) == 0:
        return 0.0
    return float(np.max(config.u**2 * (config.t - config.s)))


def _solve(config: IntervalConfig, sysm: _System, band_cap: int, method: Optional[str]) -> tuple[np.ndarray, float, str]:
    spans = sysm.spans
    bw = int(max(1, spans.max(initial=0)))
    if method is None:
        stiff = _stiffness(config) > STIFF_LIMIT
        crowded = len(config) > sysm.size
        method = "banded" if (not stiff and (bw <= band_cap or crowded)) else "woodbury"
    if method == "banded":
        x, res = _solve_banded(sysm, bw)
    elif method == "woodbury":
        if len(config) == 0:
            x, res = _solve_banded(sysm, 1)
        else:
            x, res = _solve_woodbury(config, sysm)
    else:
        raise ValidationError(f"unknown method {method!r}")
    return x, res, method


def sigma2_exact(
    config: IntervalConfig, band_cap: int = BAND_CAP, method: Optional[str] = None
) -> VarianceSolution:
    """Value and piecewise-linear maximizer of the variance functional.

    ``method`` forces ``"banded"`` or ``"woodbury"``. By default the banded Cholesky
    is used when no interval is stiff and either the bandwidth is at most
    ``band_cap`` or there are more intervals than unknowns.
    """
    sysm = _assemble(config)
    x, res, method = _solve(config, sysm, band_cap, method)
    per = float(sysm.rhs_scale * x[-1])
    if not (per > 0 and math.isfinite(per)):
        raise FactorizationError(f"non-positive quadratic form value {per}")
    f = np.concatenate([[0.0], x])
    return VarianceSolution(3.0 * per, per, sysm.breakpoints, f, res, method)


def quadratic_penalty(config: IntervalConfig, breakpoints: np.ndarray, f_values: np.ndarray) -> float:
    """``int f'^2 + sum u^2 (f(t) - f(s))^2`` for piecewise-linear ``f`` on ``breakpoints``."""
    dirichlet = float(np.sum(np.diff(f_values) ** 2 / np.diff(breakpoints)))
    fs = np.interp(config.s, breakpoints, f_values)
    ft = np.interp(config.t, breakpoints, f_values)
    return dirichlet + float(np.sum(config.u**2 * (ft - fs) ** 2))


def square_root_bound_holds(config: IntervalConfig, K: float) -> bool:
    """Check the implication: a linear-term bound with constant ``K`` forces ``value <= 3/K^2``.

    The bound ``(f(t_hi) - f(t_lo))/sqrt(L) <= sqrt(Q(f)) / K`` is tested at the
    maximizer, where the ratio is largest. Returns True when the implication holds.
    """
    sol = sigma2_exact(config)
    q = quadratic_penalty(config, sol.breakpoints, sol.f_values)
    lin = (sol.f_values[-1] - sol.f_values[0]) / math.sqrt(config.length)
    premise = lin <= math.sqrt(q) / K * (1 + 1e-12)
    return (not premise) or sol.value <= 3.0 / K**2 * (1 + 1e-9)


def sigma2_chain_average(configs: Iterable[IntervalConfig], batches: int = 32) -> tuple[float, float]:
    """Mean and batch-means standard error of ``sigma2_exact`` over a stream."""
    values = [sigma2_exact(c).value for c in configs]
    if len(values) == 0:
        raise ValidationError("empty configuration stream")
    if len(values) < 2:
        raise ValidationError("need at least two configurations")
    return batch_means(values, batches)
