"""Radial solver for the Pekar variational problem and derived constants.

The functional is ``C(psi) - K(psi)`` over unit-norm radial profiles, with
``C = iint psi^2(x) psi^2(y) / |x - y|`` and ``K = 1/2 int |grad psi|^2``.

Discretization: nodes ``r_k = k * dr`` for ``k = 1..n`` with ``psi(r_max) = 0``;
shell masses ``m_k = 4 pi r_k^2 dr psi_k^2``. The kinetic term uses forward
differences weighted by ``(r_k + dr/2)^2``. Shell pairs interact through the
angular average of the kernel, which is ``1 / max(r, s)`` for Coulomb and
``(W(r + s) - W(|r - s|)) / (2 r s)`` with ``W' (w) = w V(w)`` in general.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import erf

from .errors import ConvergenceError, ValidationError

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
DEFAULT_DAMPING = 0.5

RadialFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class RadialGrid:
    """Uniform radial grid ``r_k = k * r_max / n``, ``k = 1..n``."""

    r_max: float = 12.0
    n: int = 2000

    def __post_init__(self) -> None:
        if not (math.isfinite(self.r_max) and self.r_max > 0):
            raise ValidationError(f"r_max must be positive and finite, got {self.r_max}")
        if int(self.n) != self.n or self.n < 16:
            raise ValidationError(f"grid too coarse: n must be an integer >= 16, got {self.n}")

    @property
    def step(self) -> float:
        return self.r_max / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = self.step * np.arange(1, self.n + 1, dtype=float)
        nodes[-1] = self.r_max
        nodes.flags.writeable = False
        return nodes

    @cached_property
    def weights(self) -> np.ndarray:
        """Shell volumes ``4 pi r^2 dr``."""
        w = FOUR_PI * self.nodes**2 * self.step
        w.flags.writeable = False
        return w

    @cached_property
    def edge_coefficients(self) -> np.ndarray:
        """``4 pi (r_k + dr/2)^2 / dr`` for the edge between nodes k and k+1."""
        mid = self.nodes[:-1] + 0.5 * self.step
        c = FOUR_PI * mid**2 / self.step
        c.flags.writeable = False
        return c


@dataclass(frozen=True)
class RadialProfile:
    """Nonnegative radial wave function sampled at the grid nodes."""

    grid: RadialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValidationError(f"profile needs {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("profile values must be finite")
        if np.any(v < 0):
            raise ValidationError("profile values must be nonnegative")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def l2_norm(self) -> float:
        return math.sqrt(float(np.dot(self.grid.weights, self.values**2)))

    @property
    def shell_masses(self) -> np.ndarray:
        return self.grid.weights * self.values**2

    def normalized(self) -> "RadialProfile":
        norm = self.l2_norm
        if norm == 0:
            raise ValidationError("cannot normalize the zero profile")
        return RadialProfile(self.grid, self.values / norm)


@dataclass(frozen=True)
class PekarReport:
    g0: float
    kinetic: float
    coulomb: float
    virial_ratio: float
    mu: float
    residual: float
    iterations: int

    def as_dict(self) -> dict:
        return {
            "g0": self.g0,
            "kinetic": self.kinetic,
            "coulomb": self.coulomb,
            "virial_ratio": self.virial_ratio,
            "mu": self.mu,
            "residual": self.residual,
            "iterations": self.iterations,
        }


# ---------------------------------------------------------------------------
# Energies


def _coulomb_potential(grid: RadialGrid, masses: np.ndarray) -> np.ndarray:
    """Shell-theorem potential ``sum_l m_l / max(r_k, r_l)`` in O(n)."""
    r = grid.nodes
    inner = np.cumsum(masses) / r
    outer_terms = masses / r
    outer = np.cumsum(outer_terms[::-1])[::-1]
    outer = np.concatenate([outer[1:], [0.0]])
    return inner + outer


def coulomb_double_integral(profile: RadialProfile) -> float:
    """Double Coulomb integral of ``psi^2``, via cumulative sums."""
    m = profile.shell_masses
    return float(np.dot(m, _coulomb_potential(profile.grid, m)))


def kinetic_energy(profile: RadialProfile) -> float:
    """Half the squared gradient norm, forward differences, ``psi(r_max) = 0``."""
    psi = profile.values
    diff = np.diff(psi)
    k = 0.5 * float(np.dot(profile.grid.edge_coefficients, diff**2))
    return k


def rescale(profile: RadialProfile, lam: float) -> RadialProfile:
    """Return ``lam^{3/2} psi(lam r)`` on the correspondingly rescaled grid."""
    if not lam > 0:
        raise ValidationError("scale factor must be positive")
    grid = RadialGrid(profile.grid.r_max / lam, profile.grid.n)
    return RadialProfile(grid, lam**1.5 * profile.values)


# ---------------------------------------------------------------------------
# General bounded kernels


def _kernel_antiderivative(grid: RadialGrid, V: RadialFunction, order: int = 8) -> np.ndarray:
    """``W(j dr) = int_0^{j dr} w V(w) dw`` for ``j = 0..2n`` by Gauss-Legendre."""
    x, wts = np.polynomial.legendre.leggauss(order)
    dr = grid.step
    left = dr * np.arange(2 * grid.n, dtype=float)
    pts = left[:, None] + 0.5 * dr * (x[None, :] + 1.0)
    vals = np.asarray(V(pts), dtype=float)
    if vals.shape != pts.shape or not np.all(np.isfinite(vals)):
        raise ValidationError("V must be finite and vectorized on [0, 2 r_max]")
    seg = 0.5 * dr * np.sum(wts[None, :] * pts * vals, axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def shell_kernel(grid: RadialGrid, V: RadialFunction) -> np.ndarray:
    """Angular average of ``V(|x - y|)`` between shells ``r_k`` and ``r_l``."""
    W = _kernel_antiderivative(grid, V)
    idx = np.arange(1, grid.n + 1)
    plus = idx[:, None] + idx[None, :]
    minus = np.abs(idx[:, None] - idx[None, :])
    r = grid.nodes
    return (W[plus] - W[minus]) / (2.0 * r[:, None] * r[None, :])


def pair_expectation(profile: RadialProfile, V: RadialFunction) -> float:
    """``iint psi^2(x) psi^2(y) V(|x - y|)`` for a bounded radial ``V``."""
    m = profile.shell_masses
    return float(m @ shell_kernel(profile.grid, V) @ m)


# ---------------------------------------------------------------------------
# Self-consistent field iteration


@dataclass
class _Operator:
    grid: RadialGrid
    eta: float = 0.0
    kernel: Optional[np.ndarray] = None

    def potential(self, psi: np.ndarray) -> np.ndarray:
        m = self.grid.weights * psi**2
        phi = _coulomb_potential(self.grid, m)
        if self.kernel is not None and self.eta != 0.0:
            phi = phi + self.eta * (self.kernel @ m)
        return phi

    def symmetric_tridiagonal(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of ``W^{-1/2} (S/2) W^{-1/2} - 2 Phi`` on free nodes."""
        w = self.grid.weights[:-1]
        c = self.grid.edge_coefficients
        left = np.concatenate([[0.0], c[:-1]])
        diag = 0.5 * (left + c) / w - 2.0 * phi[:-1]
        off = -0.5 * c[:-1] / np.sqrt(w[:-1] * w[1:])
        return diag, off


def _ground_state(op: _Operator, phi: np.ndarray) -> tuple[float, np.ndarray]:
    d, e = op.symmetric_tridiagonal(phi)
    vals, vecs = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
    v = vecs[:, 0]
    if v.sum() < 0:
        v = -v
    psi = np.zeros(op.grid.n)
    psi[:-1] = np.clip(v, 0.0, None) / np.sqrt(op.grid.weights[:-1])
    return float(vals[0]), psi


def _residual(op: _Operator, psi: np.ndarray) -> tuple[float, float]:
    """Relative L2 residual of the Euler-Lagrange equation and fitted ``mu``."""
    phi = op.potential(psi)
    d, e = op.symmetric_tridiagonal(phi)
    v = np.sqrt(op.grid.weights[:-1]) * psi[:-1]
    hv = d * v
    hv[:-1] += e * v[1:]
    hv[1:] += e * v[:-1]
    vv = float(np.dot(v, v))
    mu = -float(np.dot(v, hv)) / vv
    res = hv + mu * v
    return float(np.linalg.norm(res) / math.sqrt(vv)), mu


def _functional(op: _Operator, psi: np.ndarray) -> tuple[float, float]:
    prof = RadialProfile(op.grid, psi)
    m = prof.shell_masses
    coulomb = float(np.dot(m, op.potential(psi)))
    return coulomb, kinetic_energy(prof)


def _initial_profile(grid: RadialGrid, initial: Optional[np.ndarray]) -> np.ndarray:
    if initial is None:
        psi = np.exp(-grid.nodes / 2.0)
    else:
        psi = np.abs(np.asarray(initial, dtype=float)).copy()
        if psi.shape != (grid.n,):
            raise ValidationError("initial profile has the wrong length")
    psi[-1] = 0.0
    norm = math.sqrt(float(np.dot(grid.weights, psi**2)))
    if norm == 0:
        raise ValidationError("initial profile vanishes on the free nodes")
    return psi / norm


def _scf(
    op: _Operator,
    tol: float,
    max_iter: int,
    damping: float,
    initial: Optional[np.ndarray],
) -> tuple[np.ndarray, int, float, float]:
    if not (0 < tol <= 1e-2):
        raise ValidationError("tol must lie in (0, 1e-2]")
    if int(max_iter) != max_iter or max_iter < 1:
        raise ValidationError("max_iter must be an integer >= 1")
    if not (0 < damping <= 1):
        raise ValidationError("damping must lie in (0, 1]")
    grid = op.grid
    psi = _initial_profile(grid, initial)
    change = math.inf
    for it in range(1, int(max_iter) + 1):
        _, target = _ground_state(op, op.potential(psi))
        new = (1.0 - damping) * psi + damping * target
        new /= math.sqrt(float(np.dot(grid.weights, new**2)))
        change = float(np.max(np.abs(new - psi)))
        psi = new
        if change < tol:
            res, mu = _residual(op, psi)
            if res < 10.0 * tol:
                return psi, it, res, mu
    res, _ = _residual(op, psi)
    raise ConvergenceError("fixed-point iteration did not converge", max(change, res), max_iter)


def solve_pekar(
    grid: RadialGrid,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    damping: float = DEFAULT_DAMPING,
    initial: Optional[np.ndarray] = None,
) -> tuple[RadialProfile, PekarReport]:
    """Maximize the Pekar functional on ``grid`` by damped ground-state iteration.

    Each step solves for the lowest eigenvector of ``-1/2 Laplacian - 2 Phi_psi``
    and mixes it into the current iterate with weight ``damping``.
    """
    op = _Operator(grid)
    psi, iters, res, mu = _scf(op, tol, max_iter, damping, initial)
    return _package(op, psi, iters, res, mu)


def _package(op: _Operator, psi: np.ndarray, iters: int, res: float, mu: float):
    profile = RadialProfile(op.grid, psi)
    coulomb, kinetic = _functional(op, psi)
    report = PekarReport(
        g0=coulomb - kinetic,
        kinetic=kinetic,
        coulomb=coulomb,
        virial_ratio=coulomb / (2.0 * kinetic),
        mu=mu,
        residual=res,
        iterations=iters,
    )
    return profile, report


def stationarity_residual(profile: RadialProfile) -> tuple[float, float]:
    """Relative Euler-Lagrange residual and least-squares multiplier at ``profile``."""
    return _residual(_Operator(profile.grid), np.asarray(profile.values, dtype=float))


def perturbed_energy(
    V: RadialFunction,
    eta: float,
    grid: RadialGrid,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    damping: float = DEFAULT_DAMPING,
) -> float:
    """Supremum of the functional with pair kernel ``1/w + eta V(w)``."""
    if abs(eta) > 0.1:
        raise ValidationError("|eta| must not exceed 0.1")
    if eta == 0.0:
        return solve_pekar(grid, tol, max_iter, damping)[1].g0
    op = _Operator(grid, eta=float(eta), kernel=shell_kernel(grid, V))
    psi, iters, res, mu = _scf(op, tol, max_iter, damping, None)
    _, report = _package(op, psi, iters, res, mu)
    return report.g0


# ---------------------------------------------------------------------------
# Distribution of |x - y| under psi^2 (x) psi^2


@dataclass(frozen=True)
class _PairDistance:
    """Exact CDF of ``|x - y|``: on ``[j dr, (j+1) dr)`` it equals ``A_j rho^2 - B_j + M_j``."""

    step: float
    A: np.ndarray
    B: np.ndarray
    M: np.ndarray

    def cdf(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        j = np.clip(np.floor(rho / self.step).astype(np.int64), 0, len(self.A) - 1)
        out = self.A[j] * rho**2 - self.B[j] + self.M[j]
        return np.where(rho <= 0, 0.0, np.clip(out, 0.0, 1.0))

    def edges(self) -> np.ndarray:
        return self.step * np.arange(len(self.A) + 1, dtype=float)


def _pair_distance(profile: RadialProfile) -> _PairDistance:
    grid = profile.grid
    n = grid.n
    m = profile.shell_masses
    r = grid.nodes
    idx = np.arange(1, n + 1)
    lo = np.abs(idx[:, None] - idx[None, :]).ravel()
    hi = (idx[:, None] + idx[None, :]).ravel()
    mm = np.outer(m, m)
    a = (mm / (4.0 * np.outer(r, r))).ravel()
    d2 = (grid.step * lo) ** 2
    size = 2 * n + 1
    dA = np.bincount(lo, a, size) - np.bincount(hi, a, size)
    dB = np.bincount(lo, a * d2, size) - np.bincount(hi, a * d2, size)
    dM = np.bincount(hi, mm.ravel(), size)
    return _PairDistance(grid.step, np.cumsum(dA), np.cumsum(dB), np.cumsum(dM))


def pair_distance_cdf(profile: RadialProfile, rho: Sequence[float]) -> np.ndarray:
    """CDF of ``|x - y|`` for independent ``x, y`` with density ``psi^2``."""
    return _pair_distance(profile).cdf(np.asarray(rho, dtype=float))


def pair_distance_density(profile: RadialProfile, r_nodes: Sequence[float]) -> list[tuple[float, float]]:
    """Density of ``|x - y|`` as bin averages over ``[r_i, r_{i+1})``.

    The value attached to the last node is the average over ``[r_last, inf)``,
    which is zero once ``r_last >= 2 r_max``. With nodes spanning ``[0, 2 r_max]``
    the forward sum ``sum density_i (r_{i+1} - r_i)`` equals one.
    """
    rho = np.asarray(r_nodes, dtype=float)
    if rho.size == 0:
        raise ValidationError("r_nodes must be nonempty")
    if np.any(np.diff(rho) <= 0) or rho[0] < 0:
        raise ValidationError("r_nodes must be nonnegative and strictly increasing")
    F = np.maximum.accumulate(_pair_distance(profile).cdf(rho))
    dens = np.zeros_like(rho)
    if rho.size > 1:
        dens[:-1] = np.diff(F) / np.diff(rho)
    return [(float(x), float(y)) for x, y in zip(rho, dens)]


def inverse_distance_moment(profile: RadialProfile) -> float:
    """``E[1 / |x - y|]`` integrated exactly against the pair-distance law."""
    pd = _pair_distance(profile)
    return float(2.0 * pd.step * np.sum(pd.A))


def _erf_integral(c: float, rho: np.ndarray) -> np.ndarray:
    """Antiderivative of ``erf(c rho / sqrt 2)`` in ``rho``."""
    return rho * erf(c * rho / math.sqrt(2.0)) + SQRT_2_OVER_PI * np.exp(-0.5 * (c * rho) ** 2) / c


def u_band_constant(profile: RadialProfile, A: float, B: float) -> float:
    """``sqrt(2/pi) int_A^B dz E[exp(-z^2 |x - y|^2 / 2)]`` against the pair-distance law."""
    if not (A > 0 and B > 0):
        raise ValidationError("band limits must be positive")
    if A > B:
        raise ValidationError("band requires A <= B")
    if A == B:
        return 0.0
    pd = _pair_distance(profile)
    e = pd.edges()
    band = (_erf_integral(B, e[1:]) - _erf_integral(B, e[:-1])) - (
        _erf_integral(A, e[1:]) - _erf_integral(A, e[:-1])
    )
    return float(2.0 * np.sum(pd.A * band))
