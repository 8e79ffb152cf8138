"""Command-line experiment runner.

Every subcommand writes its outputs into a fresh temporary directory next to
``--out`` and renames it into place only after all files and the manifest are
written. CSV numbers use 17 significant digits so that re-runs from a manifest
can be compared byte for byte.

Exit codes: 0 success, 2 invalid input, 3 internal failure. Failures print a
one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import shutil
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .errors import ValidationError
from .quadform import IntervalConfig, sigma2_exact

EXIT_OK, EXIT_VALIDATION, EXIT_INTERNAL = 0, 2, 3
THREADS_ENV = "POLARON_LAB_THREADS"
# Test hook: abort after this many files have been written into the staging directory.
FAULT_ENV = "POLARON_LAB_FAULT_AFTER_FILES"

# ---------------------------------------------------------------------------
# Formatting and IO


def fmt(x: Any) -> str:
    """17-significant-digit text for floats; integers, booleans and strings verbatim."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serialisable: {type(x)}")


def load_intervals_csv(path: str | os.PathLike, window: tuple[float, float]) -> IntervalConfig:
    """Read ``s,t,u`` rows (with header) into an :class:`IntervalConfig` on ``window``.

    Violations are reported with the 1-based file line number.
    """
    lo, hi = float(window[0]), float(window[1])
    rows: list[tuple[float, float, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: missing header line") from None
        try:
            cols = [header.index(c) for c in ("s", "t", "u")]
        except ValueError:
            raise ValidationError(f"{path}: line 1: header must contain columns s,t,u") from None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                s, t, u = (float(row[c]) for c in cols)
            except (ValueError, IndexError):
                raise ValidationError(f"{path}: line {line}: cannot parse {row!r}") from None
            if not all(math.isfinite(v) for v in (s, t, u)):
                raise ValidationError(f"{path}: line {line}: non-finite value")
            if not s < t:
                raise ValidationError(f"{path}: line {line}: s >= t")
            if not u > 0:
                raise ValidationError(f"{path}: line {line}: u <= 0")
            if s < lo or t > hi:
                raise ValidationError(f"{path}: line {line}: interval leaves the window [{lo}, {hi}]")
            rows.append((s, t, u))
    return IntervalConfig.from_items((lo, hi), rows)


def write_intervals_csv(path: str | os.PathLike, config: IntervalConfig) -> None:
    _write_csv(Path(path), ["s", "t", "u"], zip(config.s, config.t, config.u))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


class _Staging:
    """Collects output files in a temporary sibling directory of the target."""

    def __init__(self, out: Path) -> None:
        self.out = out
        out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=f".{out.name}.tmp-", dir=out.parent))
        self.files: list[str] = []
        fault = os.environ.get(FAULT_ENV)
        self._fault_after = int(fault) if fault else None

    def _written(self, name: str) -> None:
        self.files.append(name)
        if self._fault_after is not None and len(self.files) >= self._fault_after:
            raise RuntimeError(f"injected fault after {len(self.files)} files")

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        _write_csv(self.dir / name, header, rows)
        self._written(name)

    def json(self, name: str, obj: Any) -> None:
        with open(self.dir / name, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        self._written(name)

    def hashes(self) -> dict[str, str]:
        out = {}
        for name in sorted(self.files):
            out[name] = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        return out

    def commit(self) -> None:
        os.replace(self.dir, self.out)

    def discard(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def _git_describe() -> str:
    try:
        r = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def workers() -> int:
    """Worker count: ``POLARON_LAB_THREADS`` capped by the CPU count, default 1."""
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer") from None
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer")
    return min(n, os.cpu_count() or 1)


def _pmap(fn: Callable, items: Sequence) -> list:
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# Argument parsing


def _add_chain_flags(p: argparse.ArgumentParser, alpha: bool = True) -> None:
    if alpha:
        p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--kind", choices=("coulomb", "truncated", "band", "power"), default="coulomb")
    p.add_argument("--cap", type=float)
    p.add_argument("--band", type=float, nargs=2, metavar=("A", "B"))
    p.add_argument("--p", type=float)
    p.add_argument("--t", type=float, default=8.0, help="half-width T of the window [-T, T]")
    p.add_argument("--step", type=float, default=1.0 / 16)
    p.add_argument("--sweeps", type=int, default=20000)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polaron-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", required=True, help="output directory (must not exist unless --force)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--force", action="store_true", help="replace an existing output directory")
        return p

    p = cmd("pekar", "solve the radial Pekar problem")
    p.add_argument("--rmax", type=float, default=12.0)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-8)

    p = cmd("sigma2", "evaluate the variance functional of an interval CSV")
    p.add_argument("--intervals", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--t", type=float, help="use the window [-T, T]")

    p = cmd("gibbs", "run one Gibbs chain and record per-sweep observables")
    _add_chain_flags(p)

    p = cmd("stats", "interval statistics, estimators and duality checks of one chain")
    _add_chain_flags(p, alpha=False)
    p.add_argument("--alpha", type=float)
    p.add_argument("--chain-dir", help="regenerate the chain recorded by a gibbs run")
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.5])
    p.add_argument("--region", type=float, nargs=4, action="append", metavar=("A0", "A1", "B0", "B1"))

    p = cmd("scaling", "variance over several couplings: monotonicity and log-log slope")
    _add_chain_flags(p, alpha=False)
    p.add_argument("--alphas", type=float, nargs="+", required=True)

    p = cmd("fkg", "compare truncated and full Coulomb chains at equal coupling")
    _add_chain_flags(p)

    p = cmd("subadd", "subadditivity gap of the unnormalised variance")
    _add_chain_flags(p)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--t2", type=float, required=True)

    p = cmd("pathfind", "interval-run construction on Gibbs paths")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--c1", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--blocks", type=int, default=32)
    p.add_argument("--grid-res", type=float, default=1.0 / 256)
    p.add_argument("--seeds", type=int, default=20, help="number of seeds, starting at --seed")
    p.add_argument("--step", type=float, default=1.0 / 8)
    p.add_argument("--sweeps", type=int, default=200)

    p = sub.add_parser("replay", help="re-run the experiment recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    return parser


def _chain_params(a: argparse.Namespace, seed: Optional[int] = None):
    from .stats import ChainParams

    band = a.band or (None, None)
    return ChainParams(
        T=a.t,
        step=a.step,
        sweeps=a.sweeps,
        burn_in=a.burn_in,
        thin=a.thin,
        seed=a.seed if seed is None else seed,
        kind=a.kind,
        cap=a.cap,
        a=band[0],
        b=band[1],
        p=a.p,
    )


def _check_chain(a: argparse.Namespace, alphas: Sequence[float]) -> None:
    """Validate chain flags before any sampling."""
    from .sampler import TimeGrid

    cp = _chain_params(a)
    for al in alphas:
        cp.spec(al)
    TimeGrid.symmetric(a.t, a.step)
    burn = a.sweeps // 4 if a.burn_in is None else a.burn_in
    if not (a.sweeps > burn >= 0) or a.thin < 1:
        raise ValidationError("need sweeps > burn_in >= 0 and thin >= 1")
    if not (0 <= a.seed < 2**64):
        raise ValidationError("seed must be a 64-bit unsigned integer")


# ---------------------------------------------------------------------------
# Commands


def _run_pekar(a, st: _Staging) -> dict:
    from .pekar import RadialGrid, solve_pekar

    grid = RadialGrid(a.rmax, a.n)
    profile, report = solve_pekar(grid, tol=a.tol)
    st.json("report.json", report.as_dict())
    st.csv("profile.csv", ["r", "psi"], zip(grid.nodes, profile.values))
    return report.as_dict()


def _run_sigma2(a, st: _Staging) -> dict:
    window = tuple(a.window) if a.window is not None else (-a.t, a.t)
    cfg = load_intervals_csv(a.intervals, window)
    sol = sigma2_exact(cfg)
    out = {
        "value": sol.value,
        "per_coordinate": sol.per_coordinate,
        "residual": sol.residual,
        "method": sol.method,
        "intervals": len(cfg),
    }
    st.csv("sigma2.csv", ["value", "per_coordinate", "residual", "method", "intervals"], [list(out.values())])
    st.csv("optimizer.csv", ["x", "f"], zip(sol.breakpoints, sol.f_values))
    return out


def _run_gibbs(a, st: _Staging) -> dict:
    from .sampler import gibbs_chain, intensity_field

    _check_chain(a, [a.alpha])
    cp = _chain_params(a)
    spec, grid = cp.spec(a.alpha), cp.grid()
    L = grid.t_hi - grid.t_lo
    rows_obs, last = [], None
    for s in gibbs_chain(spec, grid, cp.sweeps, cp.burn_in, cp.thin, cp.seed):
        lam = intensity_field(s.path, spec).total if spec.coupling > 0 else 0.0
        rows_obs.append((s.sweep_index, s.path.end_to_end_sq / L, sigma2_exact(s.intervals).value, len(s.intervals), lam))
        last = s
    st.csv("sigma2_path.csv", ["sweep", "value"], [(r[0], r[1]) for r in rows_obs])
    st.csv("sigma2_quadform.csv", ["sweep", "value"], [(r[0], r[2]) for r in rows_obs])
    st.csv("interval_count.csv", ["sweep", "count", "intensity_total"], [(r[0], r[3], r[4]) for r in rows_obs])
    assert last is not None
    st.csv("final_intervals.csv", ["s", "t", "u"], zip(last.intervals.s, last.intervals.t, last.intervals.u))
    pos = last.path.positions
    st.csv("final_path.csv", ["t", "x", "y", "z"], ((t, *p) for t, p in zip(grid.nodes, pos)))
    return {"states": len(rows_obs)}


def _chain_from_dir(chain_dir: str):
    man = json.loads((Path(chain_dir) / "manifest.json").read_text())
    if man.get("command") != "gibbs":
        raise ValidationError(f"{chain_dir} is not a gibbs output directory")
    # --out is required by the parser but irrelevant when only the chain is regenerated
    return build_parser().parse_args(list(man["argv"]) + ["--out", str(chain_dir)])


def _run_stats(a, st: _Staging) -> dict:
    from .stats import (
        count_intensity_check,
        increment_distribution,
        interval_statistics,
        laplace_duality_check,
        variance_estimator_path,
        variance_estimator_quadform,
    )

    src = _chain_from_dir(a.chain_dir) if a.chain_dir else a
    if src.alpha is None:
        raise ValidationError("--alpha or --chain-dir is required")
    _check_chain(src, [src.alpha])
    cp = _chain_params(src)
    chain = cp.run(src.alpha)
    alpha = src.alpha
    vp, vq = variance_estimator_path(chain), variance_estimator_quadform(chain)
    ist = interval_statistics(chain, alpha)
    spec = cp.spec(alpha)
    cons = count_intensity_check(chain, spec)
    regions = [((r[0], r[1]), (r[2], r[3])) for r in (a.region or [(0.0, 2.0, 0.0, 2.0)])]
    lap = laplace_duality_check(chain, alpha, regions, a.lambdas, spec)
    T = cp.T
    inc = increment_distribution(chain, alpha, (0.0, min(1.0, T)), (min(1.0, T), min(2.0, T))) if T >= 2 else None
    header = [
        "alpha", "sigma2_path", "sigma2_path_se", "sigma2_quadform", "sigma2_quadform_se",
        "n_per_unit_time", "n_per_unit_time_se", "density_ratio", "density_ratio_se",
        "length_ks", "u_band_rate_1_2", "u_band_rate_1_2_se", "count_mean", "intensity_mean", "count_z",
    ]
    band = (1.0, 2.0)
    st.csv(
        "summary.csv",
        header,
        [[alpha, *vp, *vq, ist.n_per_unit_time, ist.n_per_unit_time_se, ist.density_ratio, ist.density_ratio_se,
          ist.length_ks, ist.u_band_rate[band], ist.u_band_rate_se[band], cons.count_mean, cons.intensity_mean, cons.z]],
    )
    st.csv("length_ecdf.csv", ["a", "fraction"], ist.length_ecdf)
    st.csv(
        "laplace.csv",
        ["a0", "a1", "b0", "b1", "lambda", "lhs", "rhs", "lhs_se", "rhs_se", "z"],
        [[*r.region[0], *r.region[1], r.lam, r.lhs, r.rhs, r.lhs_se, r.rhs_se, r.z] for r in lap],
    )
    if inc is not None:
        xs = np.linspace(0.0, 20.0, 201)
        st.csv("increment_cdf.csv", ["x", "cdf"], zip(xs, inc.cdf(xs)))
    return {"states": len(chain)}


def _scaling_job(job):
    cp, alpha, seed = job
    from .stats import variance_estimator_path, variance_estimator_quadform

    ch = cp.run(alpha, seed=seed)
    return variance_estimator_path(ch), variance_estimator_quadform(ch)


def _run_scaling(a, st: _Staging) -> dict:
    from .stats import SCALING_LABEL, fit_loglog_slope, order_pairs

    alphas = sorted(a.alphas)
    _check_chain(a, alphas)
    if len(alphas) < 2:
        raise ValidationError("need at least two couplings")
    cp = _chain_params(a)
    res = _pmap(_scaling_job, [(cp, al, a.seed + k) for k, al in enumerate(alphas)])
    path = [r[0] for r in res]
    quad = [r[1] for r in res]
    st.csv(
        "scaling.csv",
        ["alpha", "seed", "sigma2_path", "sigma2_path_se", "sigma2_quadform", "sigma2_quadform_se"],
        [[al, a.seed + k, *p, *q] for k, (al, p, q) in enumerate(zip(alphas, path, quad))],
    )
    pairs = order_pairs(alphas, path)
    st.csv("monotonicity.csv", ["alpha_lo", "alpha_hi", "diff", "se", "status"],
           [[p.lower, p.higher, p.diff, p.se, p.status] for p in pairs])
    report: dict[str, Any] = {"label": SCALING_LABEL, "monotone": all(p.status != "violated" for p in pairs)}
    positive = [al for al in alphas if al > 0]
    if len(positive) >= 3 and positive[-1] >= 4 * positive[0]:
        sel = [i for i, al in enumerate(alphas) if al > 0]
        slope, se = fit_loglog_slope([alphas[i] for i in sel], [quad[i] for i in sel])
        report.update(loglog_slope=slope, slope_se=se, slope_ci=[slope - 1.96 * se, slope + 1.96 * se])
    st.json("scaling.json", report)
    return report


def _run_fkg(a, st: _Staging) -> dict:
    from .stats import fkg_comparison

    _check_chain(a, [a.alpha])
    cp = _chain_params(a)
    rows = fkg_comparison(a.alpha, cp, cap=a.cap if a.cap is not None else a.alpha)
    st.csv("fkg.csv", ["statistic", "expected", "truncated", "truncated_se", "coulomb", "coulomb_se", "z", "status"],
           [[r.name, r.expected, r.lower[0], r.lower[1], r.upper[0], r.upper[1], r.z, r.status] for r in rows])
    return {"passed": all(r.status != "violated" for r in rows)}


def _run_subadd(a, st: _Staging) -> dict:
    from .stats import subadditivity_experiment

    _check_chain(a, [a.alpha])
    rep = subadditivity_experiment(a.t1, a.t2, a.alpha, _chain_params(a))
    st.csv(
        "subadd.csv",
        ["T1", "T2", "alpha", "gap", "gap_se", "normalized_gap", "normalized_gap_se", "passed"],
        [[rep.T1, rep.T2, rep.alpha, rep.gap, rep.gap_se, rep.normalized_gap, rep.normalized_gap_se, rep.passed]],
    )
    st.csv("sigma2_by_window.csv", ["T", "sigma2", "sigma2_se"], [[T, *v] for T, v in sorted(rep.sigma2.items())])
    return {"passed": rep.passed, "note": rep.note}


def _pathfind_job(job):
    from .pathfinder import pathfind_from_chain

    params, seed, step, sweeps = job
    return pathfind_from_chain(params, seed, step, sweeps)


def _run_pathfind(a, st: _Staging) -> dict:
    from .pathfinder import PathfinderParams
    from .sampler import TimeGrid

    params = PathfinderParams(alpha=a.alpha, C1=a.c1, delta=a.delta, block_count=a.blocks, grid_res=a.grid_res)
    TimeGrid(0.0, params.horizon, a.step)
    if a.seeds < 1 or a.sweeps < 1:
        raise ValidationError("--seeds and --sweeps must be positive")
    outs = _pmap(_pathfind_job, [(params, a.seed + k, a.step, a.sweeps) for k in range(a.seeds)])
    rows = []
    for o in outs:
        r = o.result
        st.json(
            f"transcript_{o.seed}.json",
            {
                "seed": o.seed,
                "failed": r.failed,
                "failure_reason": r.failure_reason,
                "failure_at": r.failure_at,
                "t0": r.t0,
                "runs": r.runs,
                "items": r.items,
                "occupancy_second_moment": r.occupancy_second_moment,
                "audit": o.audit,
                "interval_count": o.interval_count,
                "super_standard_count": o.super_standard_count,
            },
        )
        rows.append([o.seed, r.failed, r.failure_reason, r.occupancy_second_moment, r.vg_measure_min])
    st.csv("summary.csv", ["seed", "failed", "reason", "second_moment", "vg_measure_min"], rows)
    return {"failure_rate": sum(r[1] for r in rows) / len(rows), "ordering": params.ordering_report()}


COMMANDS: dict[str, Callable] = {
    "pekar": _run_pekar,
    "sigma2": _run_sigma2,
    "gibbs": _run_gibbs,
    "stats": _run_stats,
    "scaling": _run_scaling,
    "fkg": _run_fkg,
    "subadd": _run_subadd,
    "pathfind": _run_pathfind,
}


# ---------------------------------------------------------------------------
# Driver


@dataclass(frozen=True)
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    seed: Optional[int]
    rng_algorithm: str
    version: str
    git_describe: str
    duration_s: float
    files: dict[str, str]
    result: dict

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _normalized_argv(args: argparse.Namespace, argv: Sequence[str]) -> list[str]:
    """The invocation without ``--out``/``--force``, for replay."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("--out",):
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        if tok == "--force":
            continue
        out.append(tok)
    return out


def run(argv: Sequence[str]) -> RunManifest:
    """Parse ``argv``, run the command and commit its output directory; returns the manifest."""
    from .sampler import RNG_ALGORITHM

    parser = build_parser()
    args = parser.parse_args(list(argv))
    if args.command == "replay":
        man = json.loads(Path(args.manifest).read_text())
        new = list(man["argv"]) + ["--out", args.out] + (["--force"] if args.force else [])
        return run(new)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise ValidationError(f"output directory {out} exists; use --force to replace it")
    st = _Staging(out)
    t0 = time.perf_counter()
    try:
        result = COMMANDS[args.command](args, st)
        config = {k: v for k, v in vars(args).items() if k not in ("out", "force")}
        man = RunManifest(
            command=args.command,
            argv=_normalized_argv(args, argv),
            config=config,
            seed=getattr(args, "seed", None),
            rng_algorithm=RNG_ALGORITHM,
            version=__version__,
            git_describe=_git_describe(),
            duration_s=time.perf_counter() - t0,
            files=st.hashes(),
            result=result,
        )
        st.json("manifest.json", man.as_dict())
        if out.exists():
            shutil.rmtree(out)
        st.commit()
        return man
    except BaseException:
        st.discard()
        raise


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        man = run(argv)
    except SystemExit as exc:  # argparse errors and --help
        code = exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
        return code
    except ValidationError as exc:
        print(json.dumps({"error": "validation", "message": str(exc)}), file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - report every other failure as internal
        print(json.dumps({"error": "internal", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps({"command": man.command, "files": sorted(man.files), "result": man.result}, default=_json_default))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
