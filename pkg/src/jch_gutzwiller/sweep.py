"""Run configuration, parameter sweeps and boundary tables.

All user-facing parameters are dimensionless (beta = 1, omega = 1):
``kappa_bar = kappa / beta``, ``mu_bar = (mu - omega) / beta`` and
``delta_bar = delta / beta``.

Per-point seeds are ``blake2b("<master>:<tag>:<index>")`` truncated to 63
bits, so adding grid points never changes the seed of an existing index.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .boundary import boundary_curve
from .jc import CavityParams
from .lattice import CommensurabilityError, Gauge, LatticeSpec, parse_alpha
from .observables import (OrderField, delta_psi, excitation_density, vortex_lattice_stats,
                          vorticity)
from .solver import SolverConfig, solve_ground_state, total_energy
from . import io as sio

MODES = ("solve", "sweep", "boundary", "observables")
AXES = ("alpha", "mu_bar", "kappa_bar")

RESULT_COLUMNS = [
    "index", "point_id", "nx", "ny", "gauge", "alpha_num", "alpha_den", "mu_bar", "delta_bar",
    "kappa_bar", "ell_max", "seed", "max_psi", "energy_per_site", "density", "converged",
    "iterations", "best_restart", "delta_psi", "error",
]
REFERENCE_COLUMNS = ["index", "mu_bar", "kappa_bar", "seed", "max_psi", "converged", "error"]
BOUNDARY_COLUMNS = ["alpha_num", "alpha_den", "mu_bar", "n", "r_n*beta", "f_alpha",
                    "kappa_c_bar", "error"]

DEFAULTS = {
    "run": {"mode": "solve", "out": "run", "workers": "1", "seed": "0", "save_fields": "auto"},
    "lattice": {"nx": "4", "ny": "4", "alpha": "0", "gauge": "landau_x"},
    "cavity": {"mu_bar": "-0.78", "delta_bar": "0", "kappa_bar": "0.045"},
    "solver": {"tolerance": "1e-9", "energy_tolerance": "1e-12", "max_iterations": "20000",
               "damping": "1", "n_restarts": "4", "init_amplitude": "0.1", "ell_max": "",
               "anneal": "", "method": "hybrid", "qn_max_iterations": "20000",
               "anderson_depth": "10"},
    "sweep": {"alpha": "", "mu_bar": "", "kappa_bar": "", "delta_psi": "no", "epsilon": "0.001"},
    "boundary": {"alpha": "", "source": "torus", "n_k": "64"},
    "observables": {"state": "", "reference": "", "epsilon": "0.001"},
}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------- config

def _float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{what}: expected a number, got {text!r}") from None


def _range(text: str, conv):
    parts = [p.strip() for p in text.split(":")]
    if len(parts) != 3:
        raise ConfigError(f"range must be start:stop:step, got {text!r}")
    start, stop, step = (conv(p) for p in parts)
    if step <= 0 or stop < start:
        raise ConfigError(f"bad range {text!r}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(n)]


def parse_axis(name: str, text: str, lattice: LatticeSpec | None = None) -> list:
    """Values of a sweep axis: ``a:b:step`` (inclusive), a comma list, or ``commensurate``."""
    text = text.strip()
    if not text:
        return []
    if name == "alpha":
        if text == "commensurate":
            if lattice is None:
                raise ConfigError("alpha = commensurate needs a lattice")
            return commensurate_alphas(lattice.nx, lattice.ny, lattice.gauge)
        conv = _fraction
    else:
        def conv(t):
            return _float(t, name)
    if ":" in text:
        vals = _range(text, conv)
        if name != "alpha":
            vals = [round(v, 12) for v in vals]
        return vals
    return [conv(t.strip()) for t in text.split(",") if t.strip()]


def _fraction(text: str) -> Fraction:
    try:
        return parse_alpha(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"alpha must be rational like 1/4, got {text!r}") from None


def commensurate_alphas(nx: int, ny: int, gauge=Gauge.LANDAU_X) -> list[Fraction]:
    """All alpha = p/q in [0, 1) the torus accepts in the given gauge."""
    gauge = Gauge.parse(gauge)
    bound = {Gauge.LANDAU_X: ny, Gauge.LANDAU_Y: nx}.get(gauge, nx * ny)
    return sorted({Fraction(p, bound) for p in range(bound)})


def _bool(text: str, what: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"{what}: expected yes/no, got {text!r}")


@dataclass
class RunConfig:
    mode: str
    lattice: LatticeSpec
    mu_bar: float
    delta_bar: float
    kappa_bar: float
    solver: SolverConfig
    axes: dict = field(default_factory=dict)
    out: Path = Path("run")
    workers: int = 1
    seed: int = 0
    save_fields: bool = False
    delta_psi: bool = False
    epsilon: float = 0.001
    boundary_alphas: list = field(default_factory=list)
    boundary_source: str = "torus"
    n_k: int = 64
    state_path: str = ""
    reference_path: str = ""
    echo: str = ""

    def params(self, mu_bar=None) -> CavityParams:
        return CavityParams.from_dimensionless(self.mu_bar if mu_bar is None else mu_bar,
                                               self.delta_bar)


def read_config(path: str | None = None, overrides: list[str] = (), **flags) -> RunConfig:
    """Merge defaults, the INI file, ``--set section.key=value`` overrides and flags."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        if section not in DEFAULTS or option not in DEFAULTS[section]:
            raise ConfigError(f"unknown setting {key!r}")
        cp.set(section, option, value.strip())
    for key, value in flags.items():
        if value is not None:
            cp.set("run", key, str(value))
    unknown = [f"{s}.{k}" for s in cp.sections() for k in cp[s]
               if s not in DEFAULTS or k not in DEFAULTS[s]]
    if unknown:
        raise ConfigError(f"unknown settings: {', '.join(unknown)}")
    return _build(cp)


def _build(cp: configparser.ConfigParser) -> RunConfig:
    run, lat, cav, sol, swp, bnd, obs = (cp[s] for s in DEFAULTS)
    mode = run["mode"].strip()
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    try:
        lattice = LatticeSpec(int(lat["nx"]), int(lat["ny"]), _fraction(lat["alpha"]), lat["gauge"])
    except (CommensurabilityError, ValueError) as exc:
        raise ConfigError(f"lattice: {exc}") from None
    try:
        anneal = tuple(_float(t, "solver.anneal") for t in sol["anneal"].split(",") if t.strip())
        solver = SolverConfig(
            tolerance=_float(sol["tolerance"], "solver.tolerance"),
            energy_tolerance=_float(sol["energy_tolerance"], "solver.energy_tolerance"),
            max_iterations=int(sol["max_iterations"]),
            damping=_float(sol["damping"], "solver.damping"),
            n_restarts=int(sol["n_restarts"]),
            seed=int(run["seed"]),
            init_amplitude=_float(sol["init_amplitude"], "solver.init_amplitude"),
            ell_max=int(sol["ell_max"]) if sol["ell_max"].strip() else None,
            anneal=anneal,
            method=sol["method"].strip(),
            qn_max_iterations=int(sol["qn_max_iterations"]),
            anderson_depth=int(sol["anderson_depth"]),
        )
        seed = int(run["seed"])
        workers = int(run["workers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if workers < 1:
        raise ConfigError("workers must be >= 1")

    axes = {}
    for name in AXES:
        vals = parse_axis(name, swp[name], lattice)
        if vals:
            axes[name] = vals
    if mode == "sweep":
        if not axes:
            raise ConfigError("sweep mode needs at least one of sweep.alpha, sweep.mu_bar, sweep.kappa_bar")
        for a in axes.get("alpha", []):
            try:
                LatticeSpec(lattice.nx, lattice.ny, a, lattice.gauge)
            except (CommensurabilityError, ValueError) as exc:
                raise ConfigError(f"sweep.alpha: {exc}") from None

    boundary_alphas = parse_axis("alpha", bnd["alpha"] or swp["alpha"], lattice)
    source = bnd["source"].strip()
    if source not in ("torus", "harper"):
        raise ConfigError("boundary.source must be torus or harper")
    if mode == "boundary" and not boundary_alphas:
        raise ConfigError("boundary mode needs a non-empty boundary.alpha list")

    save = run["save_fields"].strip().lower()
    save_fields = (mode in ("solve", "observables")) if save == "auto" else _bool(save, "run.save_fields")
    if mode == "observables" and not obs["state"].strip():
        raise ConfigError("observables mode needs observables.state")

    buf = io.StringIO()
    cp.write(buf)
    return RunConfig(
        mode=mode,
        lattice=lattice,
        mu_bar=_float(cav["mu_bar"], "cavity.mu_bar"),
        delta_bar=_float(cav["delta_bar"], "cavity.delta_bar"),
        kappa_bar=_float(cav["kappa_bar"], "cavity.kappa_bar"),
        solver=solver,
        axes=axes,
        out=Path(run["out"]),
        workers=workers,
        seed=seed,
        save_fields=save_fields,
        delta_psi=_bool(swp["delta_psi"], "sweep.delta_psi"),
        epsilon=_float(swp["epsilon"] if mode == "sweep" else obs["epsilon"], "epsilon"),
        boundary_alphas=boundary_alphas,
        boundary_source=source,
        n_k=int(bnd["n_k"]),
        state_path=obs["state"].strip(),
        reference_path=obs["reference"].strip(),
        echo=buf.getvalue(),
    )


# ---------------------------------------------------------------- seeding

def point_seed(master: int, index: int, tag: str = "point") -> int:
    digest = hashlib.blake2b(f"{master}:{tag}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


# ------------------------------------------------------------------ points

@dataclass(frozen=True)
class Point:
    index: int
    alpha: Fraction
    mu_bar: float
    kappa_bar: float

    @property
    def point_id(self) -> str:
        return f"p{self.index:06d}"


def grid_points(cfg: RunConfig) -> list[Point]:
    """Cartesian grid in axis order (alpha, mu_bar, kappa_bar), kappa_bar fastest."""
    alphas = cfg.axes.get("alpha", [cfg.lattice.alpha])
    mus = cfg.axes.get("mu_bar", [cfg.mu_bar])
    kappas = cfg.axes.get("kappa_bar", [cfg.kappa_bar])
    return [Point(i, a, m, k) for i, (a, m, k) in enumerate(itertools.product(alphas, mus, kappas))]


def _solve_point(cfg: RunConfig, point: Point, seed: int, lattice: LatticeSpec):
    """Solve one grid point; returns (state or None, report or None, error text)."""
    try:
        solver = SolverConfig(**{**cfg.solver.__dict__, "seed": seed})
        state, report = solve_ground_state(lattice, cfg.params(point.mu_bar), point.kappa_bar, solver)
        return state, report, ""
    except Exception as exc:  # recorded in-row
        return None, None, f"{type(exc).__name__}: {exc}".replace("\n", " ")


def _point_task(cfg: RunConfig, point: Point):
    t0 = time.perf_counter()
    lattice = LatticeSpec(cfg.lattice.nx, cfg.lattice.ny, point.alpha, cfg.lattice.gauge)
    seed = point_seed(cfg.seed, point.index)
    state, report, err = _solve_point(cfg, point, seed, lattice)
    row = {
        "index": point.index, "point_id": point.point_id, "nx": lattice.nx, "ny": lattice.ny,
        "gauge": lattice.gauge.value, "alpha_num": point.alpha.numerator,
        "alpha_den": point.alpha.denominator, "mu_bar": float(point.mu_bar),
        "delta_bar": float(cfg.delta_bar), "kappa_bar": float(point.kappa_bar), "seed": seed,
        "error": err,
    }
    if state is not None:
        row.update({
            "ell_max": state.basis.ell_max,
            "max_psi": float(np.abs(state.psi).max()),
            "energy_per_site": report.energy_per_site,
            "density": excitation_density(state),
            "converged": report.converged,
            "iterations": report.iterations,
            "best_restart": report.runs[report.best_restart],
        })
        if cfg.save_fields:
            _dump_state(cfg.out, point.point_id, state, {"seed": seed, "point": point.index,
                                                          "converged": report.converged,
                                                          "tolerance": cfg.solver.tolerance})
    return row, time.perf_counter() - t0


def _reference_task(cfg: RunConfig, j: int, mu_bar: float, kappa_bar: float):
    t0 = time.perf_counter()
    lattice = LatticeSpec(cfg.lattice.nx, cfg.lattice.ny, Fraction(0), Gauge.LANDAU_X)
    seed = point_seed(cfg.seed, j, tag="reference")
    state, report, err = _solve_point(cfg, Point(j, Fraction(0), mu_bar, kappa_bar), seed, lattice)
    row = {"index": j, "mu_bar": float(mu_bar), "kappa_bar": float(kappa_bar), "seed": seed,
           "error": err}
    if state is not None:
        row.update({"max_psi": float(np.abs(state.psi).max()), "converged": report.converged})
    return row, time.perf_counter() - t0


def _dump_state(out: Path, point_id: str, state, metadata: dict) -> None:
    field_ = OrderField.from_state(state)
    sio.write_field_csv(out / "fields" / f"{point_id}.csv", field_)
    sio.write_vorticity_csv(out / "fields" / f"{point_id}.vorticity.csv", vorticity(field_))
    sio.save_state(out / "states" / f"{point_id}.npz", state, metadata)


# ----------------------------------------------------------- result sink

class _Sink:
    """Append-only partial CSV; rows are kept as formatted text for exact re-assembly."""

    def __init__(self, path: Path, columns: list[str]):
        self.path = path
        self.columns = columns
        self.rows: dict[int, list[str]] = {}
        if path.exists():
            # bytes, so the CRLF terminators survive for torn-line detection
            lines = path.read_bytes().decode().split("\r\n")
            # the last element is either '' or an incomplete line from an interrupted write
            for cells in csv.reader(lines[1:-1]):
                if len(cells) == len(columns):
                    self.rows[int(cells[0])] = cells
        self.fh = path.open("w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\r\n")
        self.writer.writerow(columns)
        for idx in sorted(self.rows):
            self.writer.writerow(self.rows[idx])
        self.fh.flush()

    def add(self, row: dict) -> None:
        cells = [sio.fmt(row.get(c)) for c in self.columns]
        self.rows[int(row["index"])] = cells
        self.writer.writerow(cells)
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()

    def finalize(self, path: Path) -> None:
        self.close()
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(self.columns)
            for idx in sorted(self.rows):
                w.writerow(self.rows[idx])


def _run_tasks(fn, cfg: RunConfig, tasks: list[tuple[int, tuple]], sink: _Sink,
               timings: dict) -> None:
    """Run ``fn(cfg, *args)`` for every ``(index, args)`` not already in the sink."""
    todo = [args for index, args in tasks if index not in sink.rows]
    if cfg.workers == 1 or len(todo) <= 1:
        for args in todo:
            row, wall = fn(cfg, *args)
            sink.add(row)
            timings[row["index"]] = wall
        return
    with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
        futures = [ex.submit(fn, cfg, *args) for args in todo]
        for fut in as_completed(futures):
            row, wall = fut.result()
            sink.add(row)
            timings[row["index"]] = wall


def _prepare_out(cfg: RunConfig) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    echo = cfg.out / "config.echo"
    if echo.exists() and _comparable(echo.read_text()) != _comparable(cfg.echo):
        partial = cfg.out / "results.partial.csv"
        if partial.exists():
            raise ConfigError(f"{cfg.out} holds a partial run with a different configuration")
    echo.write_text(cfg.echo)


def _comparable(echo: str) -> str:
    # neither the worker count nor the output location changes results
    return "\n".join(l for l in echo.splitlines()
                     if not l.startswith(("workers =", "out =")))


def run_sweep(cfg: RunConfig) -> Path:
    """Solve every grid point; returns the path of the sorted results table."""
    _prepare_out(cfg)
    points = grid_points(cfg)
    timings: dict[int, float] = {}
    refs = {}
    if cfg.delta_psi:
        pairs = list(dict.fromkeys((p.mu_bar, p.kappa_bar) for p in points))
        ref_sink = _Sink(cfg.out / "reference.partial.csv", REFERENCE_COLUMNS)
        try:
            _run_tasks(_reference_task, cfg, [(j, (j, m, k)) for j, (m, k) in enumerate(pairs)],
                       ref_sink, {})
        finally:
            ref_sink.finalize(cfg.out / "reference.csv")
        col = REFERENCE_COLUMNS.index("max_psi")
        for j, mk in enumerate(pairs):
            cell = ref_sink.rows[j][col]
            refs[mk] = float(cell) if cell else math.nan

    sink = _Sink(cfg.out / "results.partial.csv", RESULT_COLUMNS)
    try:
        _run_tasks(_point_task, cfg, [(p.index, (p,)) for p in points], sink, timings)
    finally:
        sink.close()
    if cfg.delta_psi:
        _attach_delta_psi(sink, points, refs, cfg.epsilon)
    out = cfg.out / "results.csv"
    sink.finalize(out)
    (cfg.out / "results.partial.csv").unlink()
    if timings:
        with (cfg.out / "timings.csv").open("a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            for idx in sorted(timings):
                w.writerow([idx, sio.fmt(timings[idx])])
    return out


def _attach_delta_psi(sink: _Sink, points, refs, epsilon) -> None:
    col = RESULT_COLUMNS.index("delta_psi")
    mcol = RESULT_COLUMNS.index("max_psi")
    for p in points:
        cells = sink.rows[p.index]
        ref = refs.get((p.mu_bar, p.kappa_bar), math.nan)
        if cells[mcol] and math.isfinite(ref):
            m = float(cells[mcol])
            cells[col] = sio.fmt((ref - m) / (ref + m + epsilon))


def run_solve(cfg: RunConfig) -> Path:
    cfg = RunConfig(**{**cfg.__dict__, "axes": {}})
    return run_sweep(cfg)


def run_boundary(cfg: RunConfig) -> Path:
    if not cfg.boundary_alphas:
        raise ConfigError("boundary mode needs a non-empty alpha list")
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "config.echo").write_text(cfg.echo)
    shape = (cfg.lattice.nx, cfg.lattice.ny) if cfg.boundary_source == "torus" else None
    if shape is not None:
        for a in cfg.boundary_alphas:
            try:
                LatticeSpec(*shape, a, cfg.lattice.gauge)
            except (CommensurabilityError, ValueError) as exc:
                raise ConfigError(f"boundary.alpha: {exc}") from None
    points = boundary_curve(cfg.boundary_alphas, cfg.params(), lattice_shape=shape,
                            gauge=cfg.lattice.gauge, n_k=cfg.n_k)
    rows = []
    for bp in points:
        d = bp.csv_row()
        rows.append([d[c] for c in BOUNDARY_COLUMNS[:-1]] + [bp.error])
    path = cfg.out / "boundary.csv"
    sio.write_csv(path, BOUNDARY_COLUMNS, rows)
    return path


def run_observables(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "config.echo").write_text(cfg.echo)
    state, header = sio.load_state(cfg.state_path)
    f = OrderField.from_state(state)
    v = vorticity(f)
    stem = Path(cfg.state_path).stem
    sio.write_field_csv(cfg.out / "fields" / f"{stem}.csv", f)
    sio.write_vorticity_csv(cfg.out / "fields" / f"{stem}.vorticity.csv", v)
    summary = {
        "state": cfg.state_path,
        "lattice": state.lattice.to_dict(),
        "kappa_bar": state.kappa / state.params.beta,
        "mu_bar": state.params.mu_bar,
        "max_psi": f.max_amplitude,
        "energy_per_site": total_energy(state) / state.lattice.n_sites,
        "density": excitation_density(state),
        "total_winding": v.total,
        "vortex_plaquettes": v.vortices(),
        "undefined_plaquettes": len(v.undefined),
    }
    if cfg.reference_path:
        ref, _ = sio.load_state(cfg.reference_path)
        summary["delta_psi"] = delta_psi(OrderField.from_state(ref), f, cfg.epsilon)
    if v.total >= 3:
        try:
            st = vortex_lattice_stats(v, f)
            summary["vortex_lattice"] = {"n_vortices": st.n_vortices, "nn_mean": st.nn_mean,
                                         "nn_cv": st.nn_cv, "mean_coordination": st.mean_coordination}
        except ValueError as exc:
            summary["vortex_lattice"] = {"error": str(exc)}
    path = cfg.out / "observables.json"
    path.write_text(json.dumps(summary, indent=2) + "\n")
    return path


def count_failures(results: Path) -> int:
    with results.open(newline="") as fh:
        return sum(1 for row in csv.DictReader(fh) if row.get("error"))
