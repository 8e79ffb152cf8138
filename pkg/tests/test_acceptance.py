"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as the tests run and again in the terminal summary.
Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from scipy import stats as sps

from polaron_lab import cli, stats
from polaron_lab._numerics import combined_se
from polaron_lab.pathfinder import (
    BadSetGrid,
    PathfinderParams,
    audit_transcript,
    build_runs,
    classify_points,
    maximal_density_bound,
    occupancy_profile,
    pathfind_from_chain,
)
from polaron_lab.pekar import RadialGrid, pair_expectation, perturbed_energy, solve_pekar, u_band_constant
from polaron_lab.quadform import IntervalConfig, sigma2_exact
from polaron_lab.sampler import (
    SQRT_2_OVER_PI,
    MixtureSpec,
    PathSample,
    TimeGrid,
    intensity_field,
    run_chain,
    sample_intervals_given_path,
    sample_path_given_intervals,
)

from conftest import ACCEPTANCE_LINES
from oracles import brute_classify, dense_sigma2, pekar_lbfgs

pytestmark = pytest.mark.slow

GRID = RadialGrid(12.0, 2000)


def record(k: int, ok: bool, detail: str) -> bool:
    line = f"criterion {k:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[k] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def pekar():
    t0 = time.perf_counter()
    prof, rep = solve_pekar(GRID, tol=1e-8)
    return prof, rep, time.perf_counter() - t0


def test_criterion_01_virial(pekar):
    _, rep, elapsed = pekar
    dev = abs(rep.coulomb / (2 * rep.kinetic) - 1)
    assert record(1, dev <= 1e-3 and elapsed < 60, f"|coulomb/(2 kinetic) - 1| = {dev:.2e}, solve {elapsed:.2f} s")


def test_criterion_02_pekar_oracle(pekar):
    _, rep, _ = pekar
    oracle = abs(pekar_lbfgs(200) / rep.g0 - 1)
    fine = abs(solve_pekar(RadialGrid(12.0, 4000), tol=1e-8)[1].g0 / rep.g0 - 1)
    ok = oracle <= 5e-3 and fine <= 5e-3
    assert record(2, ok, f"g0 = {rep.g0:.6f}, oracle rel diff {oracle:.2e}, doubling rel diff {fine:.2e}")


def test_criterion_03_perturbation(pekar):
    prof, rep, _ = pekar

    def V(w):
        return np.exp(-w)

    eta = 1e-3
    gp = perturbed_energy(V, eta, GRID, tol=1e-8)
    gm = perturbed_energy(V, -eta, GRID, tol=1e-8)
    target = pair_expectation(prof, V)
    rel = abs((gp - rep.g0) / eta - target) / target
    second = (gp - 2 * rep.g0 + gm) / eta**2
    ok = rel <= 0.01 and second >= -1e-6
    assert record(3, ok, f"derivative rel err {rel:.2e}, second difference {second:.3e}")


def test_criterion_04_variance_functional():
    window = (-8.0, 8.0)
    empty = abs(sigma2_exact(IntervalConfig(window)).value - 3.0)
    hard = max(
        abs(sigma2_exact(IntervalConfig.from_items(window, [(s, t, 1e6)])).value / (3 * (1 - (t - s) / 16)) - 1)
        for s, t in [(-2.0, 1.0), (3.0, 3.5), (-8.0, 7.0)]
    )
    rng = np.random.default_rng(40)
    h = 16 / 10_000
    dense = 0.0
    for _ in range(20):
        items = []
        for _ in range(int(rng.integers(1, 6))):
            a, b = np.sort(rng.choice(10_001, 2, replace=False))
            items.append((-8 + a * h, -8 + b * h, float(np.exp(rng.uniform(-2, math.log(1e3))))))
        cfg = IntervalConfig.from_items(window, items)
        dense = max(dense, abs(sigma2_exact(cfg).value / dense_sigma2(window, cfg.items) - 1))
    violations = 0
    for _ in range(1000):
        k = int(rng.integers(0, 12))
        items = [(*np.sort(rng.uniform(-8, 8, 2)), float(np.exp(rng.uniform(-2, 3)))) for _ in range(k)]
        cfg = IntervalConfig.from_items(window, items)
        s, t = np.sort(rng.uniform(-8, 8, 2))
        if sigma2_exact(cfg.add(s, t, float(np.exp(rng.uniform(-2, 3))))).value > sigma2_exact(cfg).value * (1 + 1e-12):
            violations += 1
    ok = empty <= 1e-12 and hard <= 1e-6 and dense <= 1e-4 and violations == 0
    detail = f"empty {empty:.1e}, hard rel {hard:.1e}, dense oracle rel {dense:.1e}, monotonicity violations {violations}"
    assert record(4, ok, detail)


def test_criterion_05_sampler_conditionals():
    # (i) zero path, band(0, 1): count of intervals in [0,1] x [1,2] is Poisson with closed-form mean
    h = 1 / 16
    grid = TimeGrid(-h / 2, 2 + h / 2, h)
    coupling = 5.0
    spec = MixtureSpec("band", coupling, a=0.0, b=1.0)
    path = PathSample(grid, np.zeros((grid.n_cells, 3)))
    tab = intensity_field(path, spec)
    mean = coupling * SQRT_2_OVER_PI * (math.e - 1) ** 2 * math.exp(-2)
    rng = np.random.default_rng(51)
    counts = np.empty(10_000, dtype=int)
    for r in range(counts.size):
        cfg = sample_intervals_given_path(path, spec, rng, tab)
        counts[r] = np.count_nonzero((cfg.s > 0) & (cfg.s < 1) & (cfg.t > 1) & (cfg.t < 2))
    top = 8
    obs = np.array([np.sum(counts == k) for k in range(top)] + [np.sum(counts >= top)])
    pk = sps.poisson(mean)
    expected = counts.size * np.array([pk.pmf(k) for k in range(top)] + [pk.sf(top - 1)])
    p_chi = sps.chisquare(obs, expected).pvalue

    # (ii) bridged increment of a single interval
    grid = TimeGrid(0.0, 2.0, 1 / 8)
    s, t, u = 0.25, 1.0, 2.0
    cfg = IntervalConfig.from_items(grid.window, [(s, t, u)])
    n = 100_000
    d = np.empty((n, 3))
    for r in range(n):
        pos = sample_path_given_intervals(cfg, grid, rng).positions
        d[r] = pos[8] - pos[2]
    sd = math.sqrt((t - s) / (1 + u * u * (t - s)))
    p_ks = min(sps.kstest(d[:, c], sps.norm(0, sd).cdf).pvalue for c in range(3))

    # (iii) u |w_t - w_s| is half-normal given the path
    grid = TimeGrid.symmetric(4.0, 1 / 16)
    spec = MixtureSpec.coulomb_spec(1.0)
    path = run_chain(spec, grid, 200, 199, 1, 53)[-1].path
    tab = intensity_field(path, spec)
    prod = []
    while sum(p.size for p in prod) < 20_000:
        cfg = sample_intervals_given_path(path, spec, rng, tab)
        z = np.linalg.norm(path.positions[grid.node_index(cfg.t)] - path.positions[grid.node_index(cfg.s)], axis=1)
        keep = z * grid.u_cap >= 8.0
        prod.append(cfg.u[keep] * z[keep])
    p_half = sps.kstest(np.concatenate(prod), sps.halfnorm.cdf).pvalue
    ok = min(p_chi, p_ks, p_half) > 0.01
    assert record(5, ok, f"Poisson chi2 p = {p_chi:.3f}, bridge KS min p = {p_ks:.3f}, half-normal KS p = {p_half:.3f}")


def test_criterion_06_duality(long_chain):
    chain = long_chain("coulomb", 1.0)
    chk = stats.count_intensity_check(chain, MixtureSpec.coulomb_spec(1.0))
    rows = stats.laplace_duality_check(
        chain, 1.0, [((-1.0, 1.0), (-1.0, 1.0)), ((-4.0, 0.0), (0.0, 4.0))], [0.5, 1.0]
    )
    zmax = max(abs(r.z) for r in rows)
    ok = chk.passed and zmax <= 3
    detail = f"count {chk.count_mean:.3f} vs intensity {chk.intensity_mean:.3f} (z = {chk.z:.2f}), Laplace max |z| = {zmax:.2f}"
    assert record(6, ok, detail)


def test_criterion_07_estimator_equivalence(long_chain):
    parts, ok = [], True
    for a in (0.5, 1.0, 2.0):
        ch = long_chain("coulomb", a)
        p, q = stats.variance_estimator_path(ch), stats.variance_estimator_quadform(ch)
        z = (p[0] - q[0]) / combined_se(p[1], q[1])
        ok &= abs(z) <= 3 and 0 < q[0] / 3 < 1 and 0 < p[0] / 3 < 1
        parts.append(f"a={a:g}: {p[0]:.3f}/{q[0]:.3f} z={z:.2f}")
    p0 = stats.variance_estimator_path(long_chain("coulomb", 0.0))
    ok &= abs(p0[0] - 3) <= 3 * p0[1]
    parts.append(f"a=0: {p0[0]:.3f} +- {p0[1]:.3f}")
    assert record(7, ok, "; ".join(parts))


def test_criterion_08_monotonicity_and_fkg(long_chain):
    alphas = [0.5, 1.0, 2.0, 4.0]
    rep = stats.monotonicity_experiment(alphas, stats.ChainParams(), chains={a: long_chain("coulomb", a) for a in alphas})
    rows = stats.fkg_comparison(
        1.0,
        stats.ChainParams(),
        cap=1.0,
        chains={"truncated": long_chain("truncated", 1.0), "coulomb": long_chain("coulomb", 1.0)},
    )
    ok = rep.passed and all(r.status != "violated" for r in rows)
    mono = ", ".join(f"{p.lower:g}->{p.higher:g} {p.status}" for p in rep.pairs)
    fkg = ", ".join(f"{r.name} z={r.z:.1f}" for r in rows)
    assert record(8, ok, f"sigma2 order [{mono}]; FKG [{fkg}]")


def test_criterion_09_subadditivity(long_chain):
    rep = stats.subadditivity_experiment(
        4.0, 4.0, 1.0, stats.ChainParams(), chains={4.0: long_chain("half_window", 1.0), 8.0: long_chain("coulomb", 1.0)}
    )
    assert record(9, rep.passed, f"gap {rep.gap:.3f} +- {rep.gap_se:.3f} (normalised {rep.normalized_gap:.4f})")


@pytest.fixture(scope="module")
def interval_trend(long_chain):
    prof, rep = solve_pekar(GRID, tol=1e-8)
    target_n, target_u = 2 * rep.g0, u_band_constant(prof, 1.0, 2.0)
    out = {a: stats.interval_statistics(long_chain("coulomb", a), a) for a in (2.0, 4.0, 6.0)}
    return out, target_n, target_u


def _trend_ok(values, errors, target):
    dist = [abs(v - target) for v in values]
    steps = all(d1 <= d0 + 3 * e for d0, d1, e in zip(dist, dist[1:], errors[1:]))
    return steps and dist[-1] < dist[0]


@pytest.mark.xfail(
    strict=True,
    reason="at alpha=4 the length law is not yet Exp(1), and the density ratio approaches 2 g0 from below; see ledger",
)
def test_criterion_10_interval_statistics(interval_trend):
    out, target_n, target_u = interval_trend
    al = sorted(out)
    dens = [out[a].density_ratio for a in al]
    dens_se = [out[a].density_ratio_se for a in al]
    band = [out[a].u_band_ratio((1.0, 2.0)) for a in al]
    band_se = [out[a].u_band_rate_se[(1.0, 2.0)] / a**2 for a in al]
    ks = out[4.0].length_ks
    trend_n, trend_u = _trend_ok(dens, dens_se, target_n), _trend_ok(band, band_se, target_u)
    detail = (
        f"length KS at alpha=4 {ks:.3f} (<= 0.05 required); "
        f"density ratio {[round(x, 3) for x in dens]} -> {target_n:.4f} trend {'ok' if trend_n else 'not monotone'}; "
        f"u-band ratio {[round(x, 4) for x in band]} -> {target_u:.4f} trend {'ok' if trend_u else 'not monotone'}"
    )
    assert record(10, ks <= 0.05 and trend_n and trend_u, detail)


def _random_mask(rng, n):
    kind = rng.integers(0, 4)
    if kind == 0:
        return rng.random((n, n)) < 10 ** rng.uniform(-5, -2)
    if kind == 1:
        m = np.zeros((n, n), dtype=bool)
        rows = rng.integers(0, n, int(rng.integers(1, 6)))
        m[rows] = rng.random((rows.size, n)) < rng.uniform(0.0, 0.4)
        return m
    if kind == 2:
        return rng.random((n, n)) < rng.uniform(0.05, 0.2)
    m = rng.random((n, n)) < 1e-3
    a = int(rng.integers(n // 3, 2 * n // 3))
    m[a : a + int(rng.integers(1, 4)), : int(rng.integers(1, n))] = True
    return m


def test_criterion_11_pathfinder():
    rng = np.random.default_rng(110)
    mismatches = 0
    for _ in range(100):
        m = _random_mask(rng, 512)
        c = classify_points(BadSetGrid(0, m))
        g, v = brute_classify(m)
        mismatches += int(not (np.array_equal(c.good, g) and np.array_equal(c.very_good, v)))

    bound_cases, violations = 0, 0
    n_a, n_b = 2**13, 2**17
    for _ in range(100):
        cells = int(rng.integers(0, 11))
        pair = []
        for k in range(2):
            r, col = rng.integers(0, n_a, cells), rng.integers(0, n_b, cells)
            pair.append(BadSetGrid(k, sp.csr_matrix((np.ones(cells, dtype=bool), (r, col)), shape=(n_a, n_b))))
        chk = maximal_density_bound(*pair, measure_threshold=1e-7)
        bound_cases += int(chk.applicable)
        violations += int(chk.applicable and not chk.passed)
    strip_rows = np.full(6, 2**21)
    strip = sp.csr_matrix((np.ones(6, dtype=bool), (strip_rows, np.arange(6))), shape=(2**22, 16))
    chk = maximal_density_bound(BadSetGrid(0, strip), BadSetGrid(1, strip), measure_threshold=1e-7)
    bound_cases += int(chk.applicable)
    violations += int(chk.applicable and not chk.passed)

    params = PathfinderParams(alpha=6.0, C1=30.0)
    audits, saturated, failed = 0, 0, 0
    for seed in range(20):
        out = pathfind_from_chain(params, seed)
        audits += len(out.audit)
        if out.result.failed:
            failed += 1
            sat = out.result.occupancy_second_moment == (params.delta * params.alpha**2) ** 2
            saturated += int(sat and occupancy_profile(out.result, params)[1] == params.saturation)
    synth = PathfinderParams(alpha=6.0, C1=30.0, delta=0.1, block_count=6)
    x = (np.arange(synth.cells) + 0.5) / synth.cells
    u = 1.5 * synth.alpha / synth.C1**4
    items = [(2 * k + xi, 2 * k + 2 + xi, u) for k in range(6) for xi in x for _ in range(3)]
    cfg = IntervalConfig.from_items((0.0, synth.horizon), items)
    empty = [BadSetGrid(k, np.zeros((synth.cells, synth.cells), dtype=bool)) for k in range(6)]
    res = build_runs(cfg, empty, synth)
    audits += len(audit_transcript(res, cfg, synth))

    ok = mismatches == 0 and violations == 0 and audits == 0 and saturated == failed and not res.failed
    detail = (
        f"classify mismatches {mismatches}/100; bound violations {violations}/{bound_cases}; "
        f"audit violations {audits}; saturated {saturated}/{failed} failed runs; synthetic runs {len(res.runs)}"
    )
    assert record(11, ok, detail)


def test_criterion_12_scaling(long_chain):
    alphas = [2.0, 4.0, 8.0]
    rep = stats.scaling_experiment(alphas, stats.ChainParams(), chains={a: long_chain("coulomb", a) for a in alphas})
    ok = rep.negative and "-4" in rep.label
    vals = ", ".join(f"{m:.4f}" for m, _ in rep.sigma2_quadform)
    y = [math.log(m) for m, _ in rep.sigma2_quadform]
    local = ", ".join(f"{(y1 - y0) / math.log(a1 / a0):.2f}" for y0, y1, a0, a1 in zip(y, y[1:], alphas, alphas[1:]))
    detail = f"sigma2 [{vals}], slope {rep.loglog_slope:.2f} (local {local}), 95% CI ({rep.slope_ci[0]:.2f}, {rep.slope_ci[1]:.2f}); {rep.label}"
    assert record(12, ok, detail)


REPLAY_COMMANDS = [
    ["pekar", "--n", "400"],
    ["gibbs", "--alpha", "1", "--t", "2", "--sweeps", "200", "--seed", "5"],
    ["stats", "--alpha", "1", "--t", "2", "--sweeps", "200", "--seed", "5"],
    ["scaling", "--alphas", "1", "2", "4", "--t", "1", "--sweeps", "150"],
    ["fkg", "--alpha", "1", "--t", "1", "--sweeps", "150"],
    ["subadd", "--alpha", "1", "--t1", "1", "--t2", "1", "--sweeps", "150"],
    ["pathfind", "--alpha", "6", "--c1", "30", "--blocks", "3", "--grid-res", "0.0625", "--seeds", "2", "--sweeps", "5"],
]


def test_criterion_13_reproducibility(tmp_path):
    mismatched = []
    (tmp_path / "i.csv").write_text("s,t,u\n-0.5,0.25,2\n0,1,0.5\n")
    commands = REPLAY_COMMANDS + [["sigma2", "--intervals", str(tmp_path / "i.csv"), "--t", "1"]]
    for k, argv in enumerate(commands):
        first, again = tmp_path / f"run{k}", tmp_path / f"replay{k}"
        cli.run(argv + ["--out", str(first)])
        cli.run(["replay", "--manifest", str(first / "manifest.json"), "--out", str(again)])
        a = {p.name: p.read_bytes() for p in Path(first).glob("*.csv")}
        b = {p.name: p.read_bytes() for p in Path(again).glob("*.csv")}
        if not a or a != b:
            mismatched.append(argv[0])
    ok = not mismatched
    assert record(13, ok, f"{len(commands)} commands replayed, mismatches {mismatched or 'none'}")
