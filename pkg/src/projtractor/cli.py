"""Command line driver: ``python -m projtractor --config run.cfg``.

The configuration is an INI-style text file::

    [chart]
    dimension = 2
    domain.1 = -1, 1
    domain.2 = -1, 1
    gamma.1.1.2 = x2 / (1 + x1^2)   # Gamma^1_{12}, 1-based, b <= c
    # or a built-in model
    model = klein_ball
    param.representative = levi_civita

    [solution]
    zeta.1.1 = 1 - x1^2             # closed-form zeta^{ab}, a <= b
    h0 = 1, 0, 1; 0, 1, 0; 1, 0, 1  # or L(zeta) at the base point
    base_point = 0, 0

    [path]
    vertices = 0, 0; 0.5, 0; 0.5, 0.5

    [run]
    command = strata
    grid = 13
    seed = 0
    criteria = 1, 2, 4

    [tolerances]
    tol_rank = 1e-9
    tol_zero = 1e-10
    ode_step = 1e-3

    [output]
    dir = out

Exit status is 0 on success, 2 when the hypotheses of the stratification
fail numerically and 1 on any other error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import platform
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import expr as ex
from .chart import MODEL_NAMES, curvature_jets, make_chart, model_chart
from .solver import (
    CurvePath,
    ExprSolution,
    IllConditionedError,
    ParallelSolution,
    SolverConfig,
    ensure_special,
    solve_space,
    transport,
)
from .strata import (
    HypothesisFailure,
    OutsideHypothesesError,
    RankInstabilityError,
    Grid,
    Tolerances,
    boundary_restrict,
    compactification_order,
    locate_degeneracy,
    reconstruct_metric,
    totally_geodesic_check,
)
from .tractor import Tractor2Sym

COMMANDS = ("analyze", "solve", "strata", "verify", "transport")
HYPOTHESIS_ERRORS = (RankInstabilityError, IllConditionedError, HypothesisFailure, OutsideHypothesesError)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    dimension: int
    command: str
    domain: tuple = ()  # ((lo, hi), ...) or empty for a model default
    gamma: tuple = ()  # ((a, b, c, text), ...) 1-based
    model: str | None = None
    params: tuple = ()  # ((key, text), ...)
    zeta: tuple = ()  # ((a, b, text), ...) 1-based
    h0: str | None = None
    base_point: tuple | None = None
    path: tuple | None = None
    grid: int = 9
    seed: int = 0
    criteria: tuple | None = None
    tol_rank: float = 1e-9
    tol_zero: float = 1e-10
    ode_step: float = 1e-3
    out_dir: str = "projtractor-out"


# ---------------------------------------------------------------------------
# parsing

def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number, for error messages."""
    where, section = {}, None
    for k, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s and not s.startswith(("#", ";")):
            where[(section, s.split("=", 1)[0].strip())] = k
    return where


def _floats(text: str, line, count: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}", line) from None
    if count is not None and len(vals) != count:
        raise ConfigError(f"expected {count} numbers, got {len(vals)}", line)
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError("numbers must be finite", line)
    return vals


def _rows(text: str, line, width: int | None = None) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(r, line, width) for r in text.split(";"))


def _indices(key: str, prefix: str, count: int, n: int, line) -> tuple[int, ...]:
    parts = key.split(".")
    if len(parts) != count + 1 or parts[0] != prefix:
        raise ConfigError(f"malformed key {key!r}", line)
    try:
        idx = tuple(int(p) for p in parts[1:])
    except ValueError:
        raise ConfigError(f"non-integer index in {key!r}", line) from None
    if any(not 1 <= i <= n for i in idx):
        raise ConfigError(f"index out of range 1..{n} in {key!r}", line)
    return idx


def _check_expr(text: str, n: int, line) -> str:
    try:
        ex.parse(text, n)
    except ex.ExprSyntaxError as e:
        raise ConfigError(f"expression {text!r}: {e}", line) from None
    except ValueError as e:
        raise ConfigError(f"expression {text!r}: {e}", line) from None
    return text


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
        interpolation=None, strict=True, default_section="__defaults__",
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno) from None
    except configparser.DuplicateSectionError as e:
        raise ConfigError(f"duplicate section [{e.section}]", e.lineno) from None
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside any [section]", e.lineno) from None
    except configparser.ParsingError as e:
        raise ConfigError(f"cannot parse {e.errors[0][1]!r}", e.errors[0][0]) from None
    where = _line_index(text)
    known = {"chart", "solution", "path", "run", "tolerances", "output"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]", None)

    def line(sec, key):
        return where.get((sec, key))

    run = dict(cp.items("run")) if cp.has_section("run") else {}
    command = run.pop("command", "strata")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}", line("run", "command"))
    opts: dict = {"command": command}
    for key, cast in (("grid", int), ("seed", int)):
        if key in run:
            try:
                opts[key] = cast(run.pop(key))
            except ValueError:
                raise ConfigError(f"{key} must be an integer", line("run", key)) from None
    if "criteria" in run:
        try:
            opts["criteria"] = tuple(int(t) for t in run.pop("criteria").split(","))
        except ValueError:
            raise ConfigError("criteria must be comma-separated integers", line("run", "criteria")) from None
        if any(not 1 <= k <= 8 for k in opts["criteria"]):
            raise ConfigError("criteria are numbered 1..8", line("run", "criteria"))
    for key in run:
        raise ConfigError(f"unknown key {key!r} in [run]", line("run", key))

    tols = dict(cp.items("tolerances")) if cp.has_section("tolerances") else {}
    for key in list(tols):
        if key not in ("tol_rank", "tol_zero", "ode_step"):
            raise ConfigError(f"unknown key {key!r} in [tolerances]", line("tolerances", key))
        (opts[key],) = _floats(tols[key], line("tolerances", key), 1)
    out = dict(cp.items("output")) if cp.has_section("output") else {}
    for key in out:
        if key != "dir":
            raise ConfigError(f"unknown key {key!r} in [output]", line("output", key))
        opts["out_dir"] = out[key]

    chart = dict(cp.items("chart")) if cp.has_section("chart") else {}
    if not chart and command == "verify":
        return _validated(RunConfig(dimension=2, **opts), where)
    if "dimension" not in chart:
        raise ConfigError("[chart] needs a dimension", None)
    try:
        n = int(chart.pop("dimension"))
    except ValueError:
        raise ConfigError("dimension must be an integer", line("chart", "dimension")) from None
    if not 2 <= n <= 4:
        raise ConfigError("dimension must be 2, 3 or 4", line("chart", "dimension"))
    model = chart.pop("model", None)
    if model is not None and model not in MODEL_NAMES:
        raise ConfigError(f"unknown model {model!r}", line("chart", "model"))
    domain = {}
    gamma, params = [], []
    for key, val in chart.items():
        ln = line("chart", key)
        if key.startswith("domain."):
            (i,) = _indices(key, "domain", 1, n, ln)
            lo, hi = _floats(val, ln, 2)
            if not lo < hi:
                raise ConfigError("domain interval must have lo < hi", ln)
            domain[i] = (lo, hi)
        elif key.startswith("gamma."):
            a, b, c = _indices(key, "gamma", 3, n, ln)
            if b > c:
                raise ConfigError(f"gamma keys need b <= c, got {key!r}", ln)
            gamma.append((a, b, c, _check_expr(val, n, ln)))
        elif key.startswith("param."):
            if model is None:
                raise ConfigError("param.* keys need a model", ln)
            params.append((key[len("param."):], val))
        else:
            raise ConfigError(f"unknown key {key!r} in [chart]", ln)
    if domain and len(domain) != n:
        raise ConfigError(f"domain needs all {n} intervals", line("chart", f"domain.{min(set(range(1, n + 1)) - set(domain))}"))
    if model is None and not domain:
        raise ConfigError("a chart without a model needs domain.1 .. domain.n", None)
    if model is not None and gamma:
        raise ConfigError("gamma entries cannot be combined with a model", line("chart", "model"))

    sol = dict(cp.items("solution")) if cp.has_section("solution") else {}
    zeta = []
    for key, val in sol.items():
        ln = line("solution", key)
        if key.startswith("zeta."):
            a, b = _indices(key, "zeta", 2, n, ln)
            if a > b:
                raise ConfigError(f"zeta keys need a <= b, got {key!r}", ln)
            zeta.append((a, b, _check_expr(val, n, ln)))
        elif key == "h0":
            _rows(val, ln, n + 1)
            if len(_rows(val, ln)) != n + 1:
                raise ConfigError(f"h0 needs {n + 1} rows", ln)
            opts["h0"] = val
        elif key == "base_point":
            opts["base_point"] = _floats(val, ln, n)
        else:
            raise ConfigError(f"unknown key {key!r} in [solution]", ln)
    if "h0" in opts:
        M = np.array(_rows(opts["h0"], line("solution", "h0")))
        if not np.array_equal(M, M.T):
            raise ConfigError("h0 must be symmetric", line("solution", "h0"))
    if cp.has_section("path"):
        for key, val in cp.items("path"):
            ln = line("path", key)
            if key != "vertices":
                raise ConfigError(f"unknown key {key!r} in [path]", ln)
            verts = _rows(val, ln, n)
            if len(verts) < 2:
                raise ConfigError("a path needs at least two vertices", ln)
            opts["path"] = verts
    cfg = RunConfig(
        dimension=n,
        domain=tuple(domain[i] for i in sorted(domain)),
        gamma=tuple(sorted(gamma)),
        model=model,
        params=tuple(sorted(params)),
        zeta=tuple(sorted(zeta)),
        **opts,
    )
    return _validated(cfg, where)


def _validated(cfg: RunConfig, where: dict | None = None) -> RunConfig:
    where = where or {}
    for key in ("tol_rank", "tol_zero", "ode_step"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(f"{key} must be positive", where.get(("tolerances", key)))
    if cfg.grid < 3:
        raise ConfigError("grid must be at least 3 per axis", where.get(("run", "grid")))
    if cfg.command == "transport" and cfg.path is None:
        raise ConfigError("command transport needs a [path] section")
    return cfg


def _num(v: float) -> str:
    return format_number(v)


def config_text(cfg: RunConfig) -> str:
    """Canonical text form of a configuration; parses back to an equal RunConfig."""
    lines = []
    if cfg.model is not None or cfg.domain or cfg.gamma:
        lines += ["[chart]", f"dimension = {cfg.dimension}"]
        if cfg.model is not None:
            lines.append(f"model = {cfg.model}")
        for k, val in cfg.params:
            lines.append(f"param.{k} = {val}")
        for i, (lo, hi) in enumerate(cfg.domain, 1):
            lines.append(f"domain.{i} = {_num(lo)}, {_num(hi)}")
        for a, b, c, val in cfg.gamma:
            lines.append(f"gamma.{a}.{b}.{c} = {val}")
        lines.append("")
    if cfg.zeta or cfg.h0 is not None or cfg.base_point is not None:
        lines.append("[solution]")
        for a, b, val in cfg.zeta:
            lines.append(f"zeta.{a}.{b} = {val}")
        if cfg.h0 is not None:
            lines.append(f"h0 = {cfg.h0}")
        if cfg.base_point is not None:
            lines.append("base_point = " + ", ".join(_num(v) for v in cfg.base_point))
        lines.append("")
    if cfg.path is not None:
        lines += ["[path]", "vertices = " + "; ".join(", ".join(_num(v) for v in p) for p in cfg.path), ""]
    lines += ["[run]", f"command = {cfg.command}", f"grid = {cfg.grid}", f"seed = {cfg.seed}"]
    if cfg.criteria is not None:
        lines.append("criteria = " + ", ".join(str(k) for k in cfg.criteria))
    lines += [
        "",
        "[tolerances]",
        f"tol_rank = {_num(cfg.tol_rank)}",
        f"tol_zero = {_num(cfg.tol_zero)}",
        f"ode_step = {_num(cfg.ode_step)}",
        "",
        "[output]",
        f"dir = {cfg.out_dir}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building objects from a configuration

def _model_params(cfg: RunConfig) -> dict:
    params: dict = {}
    for key, val in cfg.params:
        try:
            rows = _rows(val, None)
            params[key] = rows[0][0] if len(rows) == 1 and len(rows[0]) == 1 else (
                list(rows[0]) if len(rows) == 1 else [list(r) for r in rows]
            )
        except ConfigError:
            params[key] = val
    if cfg.domain:
        params["domain"] = [list(d) for d in cfg.domain]
    return params


def build_chart(cfg: RunConfig):
    """The chart connection and any closed-form solutions the model provides."""
    if cfg.model is not None:
        return model_chart(cfg.model, cfg.dimension, _model_params(cfg))
    entries = {(a - 1, b - 1, c - 1): val for a, b, c, val in cfg.gamma}
    return make_chart(cfg.dimension, cfg.domain, entries, name="config"), []


def _zeta_matrix(cfg: RunConfig) -> tuple:
    n = cfg.dimension
    table = [["0"] * n for _ in range(n)]
    for a, b, val in cfg.zeta:
        table[a - 1][b - 1] = table[b - 1][a - 1] = val
    return tuple(tuple(r) for r in table)


def _solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(h=cfg.ode_step, seed=cfg.seed, tol_rank=cfg.tol_rank)


# ---------------------------------------------------------------------------
# output helpers

def format_number(v) -> str:
    """17 significant digits, with negative zero written as 0."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    if v == 0.0:
        v = 0.0
    return f"{v:.17g}"


STRATA_COLUMNS = ("rankL", "p", "q", "r", "stratum", "tau", "sigma", "det_zeta", "S", "scalar_curv")


def strata_rows(report, scalar: np.ndarray | None = None) -> list[list[str]]:
    rows = []
    for k, (x, c) in enumerate(zip(report.points, report.classes)):
        sc = None if scalar is None else scalar[k]
        rows.append(
            [format_number(v) for v in x]
            + [str(c.rankL), str(c.sigL[0]), str(c.sigL[1]), str(c.sigL[2]), c.stratum,
               format_number(c.tau), format_number(c.sigma), format_number(c.det_zeta),
               format_number(c.S), format_number(sc)]
        )
    return rows


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def strata_csv(n: int, report=None, scalar=None) -> str:
    header = [f"x{i + 1}" for i in range(n)] + list(STRATA_COLUMNS)
    return csv_text(header, [] if report is None else strata_rows(report, scalar))


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def reproducibility_block(cfg: RunConfig) -> list[str]:
    return [
        "== reproducibility ==",
        f"projtractor {__version__}",
        f"numpy {np.__version__}",
        f"python {platform.python_version()}",
        f"seed {cfg.seed}",
        "-- config --",
        config_text(cfg).rstrip("\n"),
        "-- end config --",
    ]


def _mat_lines(M: np.ndarray, indent: str = "    ") -> list[str]:
    return [indent + "  ".join(f"{format_number(v):>24}" for v in row) for row in M]


@dataclass
class Outcome:
    report: list[str]
    tables: dict = field(default_factory=dict)  # file name -> CSV text
    status: int = 0


# ---------------------------------------------------------------------------
# commands

def run_analyze(cfg: RunConfig) -> Outcome:
    C0, _ = build_chart(cfg)
    C = ensure_special(C0)
    n = C.n
    pts = Grid.of_chart(C, cfg.grid).points()
    cj = curvature_jets(C, pts, 2)
    norms = {
        "R": np.linalg.norm(cj.R.value.reshape(len(pts), -1), axis=1),
        "W": np.linalg.norm(cj.W.value.reshape(len(pts), -1), axis=1),
        "P": np.linalg.norm(cj.P.value.reshape(len(pts), -1), axis=1),
        "Y": np.linalg.norm(cj.Y.value.reshape(len(pts), -1), axis=1),
    }
    flat_tol = 1e-10
    lines = [
        "== analyze ==",
        f"chart {C0.name}, dimension {n}",
        f"special representative: {'given' if C is C0 else 'trace-free normalization'}",
        f"grid {cfg.grid}^{n} = {len(pts)} points",
    ]
    for key, v in norms.items():
        lines.append(f"max |{key}| = {format_number(v.max())}")
    flat = norms["W"].max() <= flat_tol and norms["Y"].max() <= flat_tol
    lines.append(f"projectively flat on the grid: {'yes' if flat else 'no'}")
    header = [f"x{i + 1}" for i in range(n)] + ["R_norm", "W_norm", "P_norm", "Y_norm"]
    rows = [[format_number(v) for v in x] + [format_number(norms[k][j]) for k in "RWPY"] for j, x in enumerate(pts)]
    return Outcome(lines, {"curvature.csv": csv_text(header, rows)})


def run_solve(cfg: RunConfig) -> Outcome:
    C0, _ = build_chart(cfg)
    sb = solve_space(C0, cfg.base_point, _solver_config(cfg))
    n = C0.n
    lines = [
        "== solve ==",
        f"chart {C0.name}, dimension {n}",
        f"base point ({', '.join(format_number(v) for v in sb.base_point)})",
        f"dim = {sb.dim}",
        f"residual score {format_number(sb.residual_score)}",
        f"gap ratio {format_number(sb.gap_ratio)}",
        f"noise floor {format_number(sb.noise_floor)}",
        "tolerance sweep: " + ", ".join(f"{format_number(t)} -> {d}" for t, d in sb.sweep.items()),
        f"curvature kernel dimension at the base point {sb.curvature_kernel_dim}",
    ]
    for k, H in enumerate(sb.basis):
        lines.append(f"basis element {k}:")
        lines += _mat_lines(H.matrix())
    sv = csv_text(["index", "singular_value"], [[str(k), format_number(s)] for k, s in enumerate(sb.singular_values)])
    iu = np.triu_indices(n + 1)
    header = ["index"] + [f"H{i + 1}{j + 1}" for i, j in zip(*iu)]
    basis = csv_text(header, [[str(k)] + [format_number(v) for v in H.matrix()[iu]] for k, H in enumerate(sb.basis)])
    return Outcome(lines, {"singular_values.csv": sv, "basis.csv": basis})


def _pick_solution(cfg: RunConfig, sb, known) -> tuple[object, str]:
    C = sb.chart
    n = C.n
    if sb.dim == 0:
        raise ValueError("the solution space is trivial; nothing to stratify")
    B = np.array([b.matrix().ravel() for b in sb.basis]).T

    def in_span(M, what):
        coef, *_ = np.linalg.lstsq(B, M.ravel(), rcond=None)
        err = float(np.abs(B @ coef - M.ravel()).max() / max(1.0, np.abs(M).max()))
        if err > 1e-6:
            raise ValueError(f"{what} is not a solution: distance {err:.3e} from the solution space")
        return (B @ coef).reshape(M.shape)

    if cfg.zeta:
        sol = ExprSolution(C, _zeta_matrix(cfg))
        in_span(sol.matrices(sb.base_point[None])[0], "the configured zeta")
        return sol, "closed-form zeta from the configuration"
    if cfg.h0 is not None:
        M = np.array(_rows(cfg.h0, None))
        return ParallelSolution(C, sb.base_point, in_span(M, "h0"), cfg.ode_step), "parallel section through h0"
    if known:
        M = ExprSolution(C, known[0].zeta).matrices(sb.base_point[None])[0]
        H0 = in_span(M, f"the {known[0].label} solution")
        return ParallelSolution(C, sb.base_point, H0, cfg.ode_step), f"parallel section through the {known[0].label} solution"
    if sb.dim == 1:
        return sb.solution(0, cfg.ode_step), "the unique solution up to scale"
    raise ValueError(f"solution space has dimension {sb.dim}; give zeta.* or h0 in [solution]")


def run_strata(cfg: RunConfig) -> Outcome:
    C0, known = build_chart(cfg)
    sb = solve_space(C0, cfg.base_point, _solver_config(cfg))
    C = sb.chart
    n = C.n
    tol = Tolerances(cfg.tol_rank, cfg.tol_zero)
    sol, how = _pick_solution(cfg, sb, known)
    grid = Grid.of_chart(C, cfg.grid)
    rep = locate_degeneracy(C, sol, grid, tol)

    scalar = np.full(len(rep.points), np.nan)
    open_ = np.array([c.stratum in ("plus", "minus") and c.det_zeta is not None and abs(c.det_zeta) > tol.tol_zero
                      for c in rep.classes])
    if np.any(open_):
        md = reconstruct_metric(C, sol, rep.points[open_], tol, fd=False)
        scalar[open_] = md.scalar_curvature

    lines = [
        "== strata ==",
        f"chart {C0.name}, dimension {n}",
        f"dim = {sb.dim}",
        f"solution: {how}",
        f"rank L = {rep.rank} (branch {rep.branch})",
        f"grid {cfg.grid}^{n} = {len(rep.points)} points",
        "strata counts: " + ", ".join(f"{k} {v}" for k, v in sorted(rep.strata_counts().items())),
        f"degeneracy locus points: {len(rep.hypersurface_points)}",
    ]
    for key in sorted(rep.diagnostics):
        lines.append(f"  {key} {format_number(rep.diagnostics[key])}")
    for label in ("plus", "minus"):
        mask = np.array([c.stratum == label for c in rep.classes]) & ~np.isnan(scalar)
        if np.any(mask):
            lines.append(
                f"scalar curvature on {label}: min {format_number(scalar[mask].min())} "
                f"max {format_number(scalar[mask].max())}"
            )
    tables = {"strata.csv": strata_csv(n, rep, scalar)}
    if rep.hypersurface_points:
        od = compactification_order(C, sol, rep, tolerances=tol)
        lines.append(f"compactification: order {od.order}")
        for key in sorted(od.evidence):
            val = od.evidence[key]
            lines.append(f"  {key} {val if isinstance(val, str) else format_number(val)}")
        gc = totally_geodesic_check(C, sol, rep, tolerances=tol)
        if gc.applicable:
            lines.append(f"totally geodesic deviation {format_number(gc.deviation)} ({gc.samples} samples, {gc.skipped} geodesics left the chart)")
        else:
            lines.append(f"totally geodesic check: {gc.note}")
        # the locus point nearest the chart center keeps finite-difference stencils inside
        lp = min(rep.hypersurface_points, key=lambda q: float(np.linalg.norm((q.x - C.center) / C.half_width)))
        bd = boundary_restrict(C, sol, lp, rep, tol)
        lines.append("boundary data at " + "(" + ", ".join(format_number(v) for v in bd.point) + ")")
        lines.append(f"  induced signature {bd.signature}")
        lines.append(f"  kernel residual {format_number(bd.kernel_residual)}")
        if bd.label is not None:
            lines.append(f"  boundary type {bd.label}, induced residual {format_number(bd.induced_residual)}")
        if bd.weyl_residual is not None:
            lines.append(f"  Weyl residual {format_number(bd.weyl_residual)}")
        header = [f"x{i + 1}" for i in range(n)] + ["value"] + [f"conormal{i + 1}" for i in range(n)]
        tables["locus.csv"] = csv_text(
            header,
            [[format_number(v) for v in lp.x] + [format_number(lp.value)] + [format_number(v) for v in lp.conormal]
             for lp in rep.hypersurface_points],
        )
    else:
        lines.append("compactification: none (empty degeneracy locus)")
    return Outcome(lines, tables)


def run_transport(cfg: RunConfig) -> Outcome:
    C0, known = build_chart(cfg)
    C = ensure_special(C0)
    n = C.n
    verts = np.array(cfg.path, dtype=float)
    if cfg.h0 is not None:
        M = np.array(_rows(cfg.h0, None))
    elif cfg.zeta or known:
        zeta = _zeta_matrix(cfg) if cfg.zeta else known[0].zeta
        M = ExprSolution(C, zeta).matrices(verts[:1])[0]
    else:
        raise ValueError("transport needs h0, zeta.* or a model with a known solution")
    H = Tractor2Sym.from_matrix(M)
    iu = np.triu_indices(n + 1)
    rows = [[str(0)] + [format_number(v) for v in verts[0]] + [format_number(v) for v in M[iu]]]
    for k in range(1, len(verts)):
        H = transport(C, H, CurvePath.straight(verts[k - 1], verts[k]), cfg.ode_step)
        rows.append([str(k)] + [format_number(v) for v in verts[k]] + [format_number(v) for v in H.matrix()[iu]])
    lines = ["== transport ==", f"chart {C0.name}, dimension {n}", f"{len(verts)} vertices, step {format_number(cfg.ode_step)}",
             "initial H:"] + _mat_lines(M) + ["final H:"] + _mat_lines(H.matrix())
    header = ["vertex"] + [f"x{i + 1}" for i in range(n)] + [f"H{i + 1}{j + 1}" for i, j in zip(*iu)]
    return Outcome(lines, {"transport.csv": csv_text(header, rows)})


def run_verify(cfg: RunConfig) -> Outcome:
    from .acceptance import run_all

    results = run_all(cfg.criteria)
    lines = ["== verify =="]
    for r in results:
        lines.append(r.line())
        lines += r.details()
    failed = [r.number for r in results if not r.passed]
    lines.append("all criteria passed" if not failed else "failed criteria: " + ", ".join(map(str, failed)))
    return Outcome(lines, status=0 if not failed else 1)


RUNNERS = {
    "analyze": run_analyze,
    "solve": run_solve,
    "strata": run_strata,
    "verify": run_verify,
    "transport": run_transport,
}


def run(cfg: RunConfig) -> Outcome:
    return RUNNERS[cfg.command](cfg)


def emit(outcome: Outcome, cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in outcome.tables.items():
        _write(out / name, text)
    _write(out / "report.txt", "\n".join(outcome.report + [""] + reproducibility_block(cfg)) + "\n")
    return out


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="projtractor", description="Projective tractor calculus and metrizability solver")
    p.add_argument("--config", required=True, type=Path, help="run configuration file")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--tol-rank", type=float)
    p.add_argument("--tol-zero", type=float)
    p.add_argument("--ode-step", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--command", choices=COMMANDS, help="overrides [run] command")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as e:
        print(f"error: cannot read {args.config}: {e.strerror}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text)
        overrides = {
            "out_dir": args.out, "tol_rank": args.tol_rank, "tol_zero": args.tol_zero,
            "ode_step": args.ode_step, "grid": args.grid, "seed": args.seed, "command": args.command,
        }
        cfg = _validated(replace(cfg, **{k: v for k, v in overrides.items() if v is not None}))
    except ConfigError as e:
        print(f"error: {args.config}: {e}", file=sys.stderr)
        return 1
    try:
        outcome = run(cfg)
        out = emit(outcome, cfg)
    except HYPOTHESIS_ERRORS as e:
        print(f"hypothesis failure ({type(e).__name__}) in {cfg.command}: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # surfaced with context, never a traceback
        print(f"error ({type(e).__name__}) in {cfg.command}: {e}", file=sys.stderr)
        return 1
    print("\n".join(outcome.report))
    print(f"wrote {out}")
    return outcome.status
