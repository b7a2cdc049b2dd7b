"""Command-line drivers for the refinement and conditioning studies.

Each experiment runs a set of independent jobs, one per (variant, shift,
level), and writes one CSV row per job plus aggregate rows when several
shifts are requested.  Rows are sorted before writing and every float is
written with ``repr`` so repeated runs produce byte-identical files.

Shift tokens
------------
``0.25h`` is a quarter of the mesh size, ``0.0123`` an absolute offset,
``0.5h-1e-6`` mixes both, and ``a/b`` gives separate x and y offsets.
A single term is applied to both axes.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as la

from .analysis import CircleSolution, error_h1_gammah, error_l2_gammah, l2_vector_error, mass_data
from .assembly import (
    StabilizationConfig,
    assemble_laplace_beltrami,
    assemble_mass_system,
    assemble_mean_curvature_system,
)
from .fem import FiniteElementSpace
from .geometry import (
    Circle,
    Ellipse,
    GeometryError,
    closest_point,
    cut_quadrature,
    exact_mean_curvature_vector,
    parse_geometry,
)
from .mesh import MeshError, build_background_mesh, extract_active_mesh
from .solver import SINGULAR, ConditioningError, ConstrainedSystem, condition_number, scaled_condition_number, solve

EXPERIMENTS = ("lb", "mass", "curvature", "cond-sweep")
STAB_NAMES = {
    "proposed": "proposed",
    "face": "pure_face",
    "normalgrad": "normal_gradient_element",
    "fullgrad": "full_gradient",
    "none": "none",
}
CSV_COLUMNS = ("level", "h", "ndof", "l2_error", "h1_error", "eoc_l2", "eoc_h1",
               "cond", "cond_diag", "variant", "p", "gamma", "shift", "config_hash")
DEFAULT_LEVELS = (12, 96)
DEFAULT_SWEEP_SHIFTS = ("0", "0.1h", "0.25h", "0.5h-1e-6")
CURVATURE_C = 0.01  # matched constant for the curvature comparison
PAIRING_C = 0.1  # face / element-gradient constants of the comparison variants

# failures that are recorded per level instead of aborting the run
LEVEL_ERRORS = (GeometryError, MeshError, ConditioningError, la.LinAlgError, RuntimeError, FloatingPointError)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# parsing helpers
# --------------------------------------------------------------------------


def parse_levels(text: str) -> tuple:
    """"NMIN:NMAX" -> doubling ladder NMIN, 2 NMIN, ..., NMAX; "N" -> (N,)."""
    try:
        parts = [int(t) for t in text.split(":")]
    except ValueError as exc:
        raise ConfigError(f"bad --levels {text!r}") from exc
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigError(f"bad --levels {text!r}")
    lo, hi = parts
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad --levels {text!r}")
    levels = [lo]
    while levels[-1] < hi:
        levels.append(2 * levels[-1])
    if levels[-1] != hi:
        raise ConfigError(f"--levels {text!r}: NMAX must be NMIN times a power of two")
    return tuple(levels)


def _shift_term(term: str, h: float) -> float:
    term = term.strip()
    if "h" not in term:
        return float(term)
    coef, rest = term.split("h", 1)
    coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
    return coef * h + (float(rest) if rest else 0.0)


def shift_vector(token: str, h: float) -> tuple:
    """Translate a shift token into an offset vector for mesh size ``h``."""
    terms = token.split("/")
    if len(terms) == 1:
        terms = terms * 2
    if len(terms) != 2:
        raise ConfigError(f"bad shift {token!r}")
    try:
        return tuple(_shift_term(t, h) for t in terms)
    except ValueError as exc:
        raise ConfigError(f"bad shift {token!r}") from exc


def _float_list(text):
    if text is None:
        return None
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment; every field enters the config hash except ``out``."""

    experiment: str
    p: int = 1
    variants: tuple = ()
    geom: str = "circle"
    levels: tuple = (12, 24, 48, 96)
    shifts: tuple = ("0",)
    gauss: int = 4
    backend: str = "exact"
    out: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.p not in (1, 2, 3):
            raise ConfigError("--p must be 1, 2 or 3")
        if self.experiment != "cond-sweep" and len(self.levels) < 2:
            raise ConfigError("at least two levels are needed for convergence rates")
        if self.experiment == "curvature" and self.p != 1:
            raise ConfigError("the curvature study uses linear elements")
        if self.gauss < 1:
            raise ConfigError("--gauss must be positive")
        for token in self.shifts:
            shift_vector(token, 1.0)
        geom = parse_geometry(self.geom)
        if self.experiment in ("lb", "mass", "cond-sweep") and not isinstance(geom, Circle):
            raise ConfigError(f"{self.experiment} needs a circle geometry (exact solution known)")
        if self.experiment == "curvature" and not isinstance(geom, (Circle, Ellipse)):
            raise ConfigError("curvature needs a circle or ellipse geometry")

    def payload(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d["variants"] = [cfg.as_dict() for cfg in self.variants]
        return d

    def config_hash(self) -> str:
        text = json.dumps(self.payload(), sort_keys=True, default=float)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def default_stabilization(experiment: str, variant: str, p: int, gamma=None, c_F=None, c_Gamma=None,
                          alpha=None, c_T=None, cd: int = 1) -> StabilizationConfig:
    """Stabilization with the study defaults, overridden by any explicit value."""
    curvature = experiment == "curvature"
    if variant == "proposed":
        if gamma is None:
            gamma = 0.0 if curvature else 1.0
        if c_F is None:
            if experiment == "mass":
                c_F = StabilizationConfig.mass_defaults(p).c_F
            elif curvature:
                c_F = (CURVATURE_C,) * p
            else:
                c_F = StabilizationConfig.laplace_beltrami_defaults(p).c_F
        return StabilizationConfig.proposed(p, c_F, c_Gamma, gamma=gamma, cd=cd)
    if variant == "pure_face":
        return StabilizationConfig("pure_face", 0.0, (c_F[0] if c_F else PAIRING_C,), (), cd=cd)
    if variant == "normal_gradient_element":
        if alpha is None:
            alpha = -1.0 if curvature else 1.0
        if c_T is None:
            c_T = CURVATURE_C if curvature else PAIRING_C
        return StabilizationConfig("normal_gradient_element", alpha=alpha, c_T=c_T, cd=cd)
    if variant == "full_gradient":
        return StabilizationConfig("full_gradient", c_T=PAIRING_C if c_T is None else c_T, cd=cd)
    if variant == "none":
        return StabilizationConfig("none", cd=cd)
    raise ConfigError(f"unknown variant {variant!r}")


def _default_variants(experiment):
    if experiment == "cond-sweep":
        return ("proposed", "pure_face", "normal_gradient_element", "none")
    if experiment == "curvature":
        return ("proposed", "normal_gradient_element")
    return ("proposed",)


def config_from_args(args) -> ExperimentConfig:
    experiment = args.experiment
    try:
        names = _default_variants(experiment) if args.stab is None else (STAB_NAMES[args.stab],)
        variants = tuple(
            default_stabilization(experiment, v, args.p, args.gamma, _float_list(args.cf), _float_list(args.cgamma),
                                  args.alpha, args.ct, args.cd)
            for v in names
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.shifts is None:
        shifts = DEFAULT_SWEEP_SHIFTS if experiment == "cond-sweep" else ("0",)
    else:
        shifts = tuple(t.strip() for t in args.shifts.split(",") if t.strip())
    if args.levels is None:
        levels = (24,) if experiment == "cond-sweep" else parse_levels("%d:%d" % DEFAULT_LEVELS)
    else:
        levels = parse_levels(args.levels)
    geom = args.geom or ("ellipse" if experiment == "curvature" else "circle")
    try:
        return ExperimentConfig(
            experiment=experiment,
            p=args.p,
            variants=variants,
            geom=geom,
            levels=levels,
            shifts=shifts,
            gauss=args.gauss if args.gauss is not None else 2 * args.p + 2,
            backend="pl" if experiment == "curvature" else "exact",
            out=args.out,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# single jobs
# --------------------------------------------------------------------------


def _discretize(config: ExperimentConfig, geom, n: int, shift_token: str):
    bg = build_background_mesh(n=n)
    bg = build_background_mesh(n=n, shift=shift_vector(shift_token, bg.h))
    quad = cut_quadrature(bg, geom, config.backend, config.gauss)
    space = FiniteElementSpace(extract_active_mesh(bg, geom, quad), config.p)
    return bg, quad, space


def _conditioning(A, w=None):
    kappa = condition_number(A, w)
    if np.any(A.diagonal() <= 0):
        # a zero diagonal entry of a PSD matrix is a null direction; scaling is undefined
        return kappa, SINGULAR
    return kappa, scaled_condition_number(A, w)


def run_job(config: ExperimentConfig, variant_index: int, shift_token: str, n: int) -> dict:
    """One (variant, shift, level) job; failures come back as ``{"error": message}``."""
    stab = config.variants[variant_index]
    geom = parse_geometry(config.geom)
    row = {"level": n, "variant": stab.variant, "shift": shift_token}
    try:
        with np.errstate(all="ignore"):
            bg, quad, space = _discretize(config, geom, n, shift_token)
            row["h"], row["ndof"] = bg.h, space.ndof
            if config.experiment in ("lb", "cond-sweep"):
                sol = CircleSolution(geom)
                system = assemble_laplace_beltrami(space, quad, geom, stab, sol.f)
                row["cond"], row["cond_diag"] = _conditioning(system.matrix, system.constraint_weights)
                if config.experiment == "lb":
                    u = solve(ConstrainedSystem(system.matrix, system.rhs, system.constraint_weights))
                    row["l2_error"] = error_l2_gammah(space, u, quad, geom, sol.u)
                    row["h1_error"] = error_h1_gammah(space, u, quad, geom, sol.grad)
            elif config.experiment == "mass":
                system = assemble_mass_system(space, quad, geom, stab, mass_data)
                row["cond"], row["cond_diag"] = _conditioning(system.matrix)
                u = solve(ConstrainedSystem(system.matrix, system.rhs))
                row["l2_error"] = error_l2_gammah(space, u, quad, geom, mass_data)
            else:
                system = assemble_mean_curvature_system(space, quad, geom, stab)
                block, N = system.parts["block"], space.ndof
                row["h"] = 1.0 / math.sqrt(bg.n_vertices)
                row["cond"], row["cond_diag"] = _conditioning(block)
                H = [solve(ConstrainedSystem(block, system.rhs[k * N:(k + 1) * N])) for k in range(2)]
                # the weak form approximates -Laplace_Gamma x = (div n) n
                reference = -exact_mean_curvature_vector(geom, closest_point(geom, quad.points))
                row["l2_error"] = l2_vector_error(space, H, quad, reference)
    except LEVEL_ERRORS as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def _jobs(config):
    return [(v, s, n) for v in range(len(config.variants)) for s in config.shifts for n in config.levels]


def collect(config: ExperimentConfig, jobs: int = 1) -> list:
    """Run every job of the experiment, in worker processes when ``jobs > 1``."""
    todo = _jobs(config)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_job, *zip(*[(config, *t) for t in todo])))
    return [run_job(config, *t) for t in todo]


def _with_rates(rows, keys):
    """Attach EOC columns to a same-(variant, shift) series ordered by level."""
    for key, col in keys:
        for prev, cur in zip(rows, rows[1:]):
            a, b = prev.get(key), cur.get(key)
            if a is None or b is None or "error" in prev or "error" in cur:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                cur[col] = math.log(a / b) / math.log(prev["h"] / cur["h"]) if a > 0 and b > 0 else math.nan
    return rows


def _aggregate(config, series, label):
    """Across-shift summary per level: RMS of errors and max of condition numbers."""
    out = []
    for k, n in enumerate(config.levels):
        group = [s[k] for s in series]
        if any("error" in r for r in group):
            continue
        row = {"level": n, "variant": group[0]["variant"], "shift": label,
               "h": group[0]["h"], "ndof": max(r["ndof"] for r in group)}
        for key in ("l2_error", "h1_error"):
            if key in group[0]:
                row[key] = math.sqrt(sum(r[key] ** 2 for r in group) / len(group))
        for key in ("cond", "cond_diag"):
            row[key] = max(r[key] for r in group)
        out.append(row)
    return out


def assemble_rows(config: ExperimentConfig, results: list) -> list:
    """Order results, add rates and across-shift aggregate rows."""
    nl, ns = len(config.levels), len(config.shifts)
    rates = (("l2_error", "eoc_l2"), ("h1_error", "eoc_h1"))
    rows = []
    for v in range(len(config.variants)):
        series = []
        for s in range(ns):
            start = (v * ns + s) * nl
            series.append(_with_rates(results[start:start + nl], rates))
        rows.extend(r for s in series for r in s)
        if ns > 1:
            label = "max" if config.experiment == "cond-sweep" else "rms"
            rows.extend(_with_rates(_aggregate(config, series, label), rates))
    return rows


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(config: ExperimentConfig, rows: list, stream) -> None:
    digest = config.config_hash()
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    gamma_of = {cfg.variant: cfg.face_terms(config.p)[1] for cfg in config.variants}
    for r in rows:
        failed = "error" in r
        line = []
        for col in CSV_COLUMNS:
            if col == "p":
                value = config.p
            elif col == "gamma":
                value = float(gamma_of[r["variant"]])
            elif col == "config_hash":
                value = digest
            elif failed and col in ("l2_error", "h1_error", "cond", "cond_diag"):
                value = math.nan
            else:
                value = r.get(col)
            line.append(_fmt(value))
        writer.writerow(line)


def run_experiment(config: ExperimentConfig, jobs: int = 1):
    """(rows, failures) of a full experiment."""
    rows = assemble_rows(config, collect(config, jobs))
    failures = [r for r in rows if "error" in r]
    return rows, failures


def run_lb(config: ExperimentConfig, jobs: int = 1):
    return run_experiment(_as(config, "lb"), jobs)


def run_mass(config: ExperimentConfig, jobs: int = 1):
    return run_experiment(_as(config, "mass"), jobs)


def run_curvature(config: ExperimentConfig, jobs: int = 1):
    return run_experiment(_as(config, "curvature"), jobs)


def run_cond_sweep(config: ExperimentConfig, jobs: int = 1):
    return run_experiment(_as(config, "cond-sweep"), jobs)


def _as(config, experiment):
    if config.experiment != experiment:
        raise ConfigError(f"expected a {experiment} configuration, got {config.experiment}")
    return config


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracefem", description="Stabilized trace FEM studies on curves")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--p", type=int, default=1, choices=(1, 2, 3), help="polynomial degree")
    parser.add_argument("--gamma", type=float, default=None, help="h-scaling exponent of the proposed terms")
    parser.add_argument("--stab", choices=tuple(STAB_NAMES), default=None,
                        help="stabilization (default: the study's own set)")
    parser.add_argument("--cf", default=None, help="comma list of face constants c_F,j")
    parser.add_argument("--cgamma", default=None, help="comma list of surface constants c_Gamma,j")
    parser.add_argument("--alpha", type=float, default=None, help="h exponent of the normal-gradient term")
    parser.add_argument("--ct", type=float, default=None, help="element stabilization constant c_T")
    parser.add_argument("--cd", type=int, default=1, help="codimension")
    parser.add_argument("--geom", default=None, help="circle[:cx,cy,r] | ellipse[:a2,b2,offset] | line:a,b,c")
    parser.add_argument("--levels", default=None, help="NMIN:NMAX, doubling (default 12:96)")
    parser.add_argument("--shifts", default=None, help="comma list of shift tokens, e.g. 0,0.1h,0.5h-1e-6")
    parser.add_argument("--gauss", type=int, default=None, help="cut quadrature exactness degree")
    parser.add_argument("--out", default=None, help="CSV path (default: stdout)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        config = config_from_args(args)
        if config.out is not None:
            open(config.out, "a").close()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        rows, failures = run_experiment(config, max(1, args.jobs))
    except Exception:  # anything unexpected is reported, not swallowed
        traceback.print_exc()
        return 1
    buf = io.StringIO()
    write_csv(config, rows, buf)
    if config.out is None:
        sys.stdout.write(buf.getvalue())
    else:
        with open(config.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    for r in failures:
        print(f"level {r['level']} shift {r['shift']} {r['variant']}: {r['error']}", file=sys.stderr)
    return 2 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
