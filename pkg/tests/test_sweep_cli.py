import csv
import json
import math
import textwrap
from fractions import Fraction

import pytest

from jch_gutzwiller.cli import main
from jch_gutzwiller.sweep import (ConfigError, RESULT_COLUMNS, commensurate_alphas, grid_points,
                                  parse_axis, point_seed, read_config)

SWEEP = """
[run]
mode = sweep
seed = 42

[lattice]
nx = 4
ny = 4
gauge = landau_x

[cavity]
mu_bar = -0.78

[solver]
n_restarts = 1
max_iterations = 4000

[sweep]
alpha = 0, 1/4
kappa_bar = 0.03, 0.07
delta_psi = yes
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def rows(path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_axis_forms():
    assert parse_axis("kappa_bar", "0.01:0.05:0.01") == [0.01, 0.02, 0.03, 0.04, 0.05]
    assert parse_axis("mu_bar", "-0.9, -0.5") == [-0.9, -0.5]
    assert parse_axis("alpha", "0:1/2:1/4") == [Fraction(0), Fraction(1, 4), Fraction(1, 2)]
    assert parse_axis("alpha", "") == []
    assert parse_axis("alpha", "0.25") == [Fraction(1, 4)]
    with pytest.raises(ConfigError):
        parse_axis("alpha", "1/x")
    with pytest.raises(ConfigError):
        parse_axis("kappa_bar", "0.05:0.01:0.01")


def test_commensurate_alphas():
    assert commensurate_alphas(4, 4) == [Fraction(k, 4) for k in range(4)]
    assert len(commensurate_alphas(4, 5, "landau_twisted")) == 20


def test_seeds_are_stable_and_distinct():
    assert point_seed(42, 3) == point_seed(42, 3)
    assert len({point_seed(42, i) for i in range(100)}) == 100
    assert point_seed(42, 3) != point_seed(43, 3) != point_seed(42, 3, "reference")
    assert 0 <= point_seed(2 ** 64 - 1, 0) < 2 ** 63


def test_grid_order(tmp_path):
    cfg = read_config(write(tmp_path, SWEEP))
    pts = grid_points(cfg)
    assert [(p.alpha, p.kappa_bar) for p in pts] == [
        (0, 0.03), (0, 0.07), (Fraction(1, 4), 0.03), (Fraction(1, 4), 0.07)]


@pytest.mark.parametrize("override, message", [
    ("lattice.alpha=1/3", "q=3"),
    ("solver.damping=0", "damping"),
    ("run.mode=fly", "mode"),
    ("sweep.alpha=1/3", "sweep.alpha"),
    ("cavity.mu_bar=abc", "cavity.mu_bar"),
    ("nosuch.key=1", "unknown"),
    ("run.workers=0", "workers"),
])
def test_config_errors(tmp_path, override, message):
    with pytest.raises(ConfigError, match=message):
        read_config(write(tmp_path, SWEEP), [override])


def test_unknown_key_in_file(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        read_config(write(tmp_path, SWEEP.replace("n_restarts = 1", "n_restarts = 1\nbogus = 1")))


def test_sweep_table_and_delta_psi(tmp_path):
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(write(tmp_path, SWEEP)), "--out", str(out)]) == 0
    table = rows(out / "results.csv")
    assert [r["index"] for r in table] == ["0", "1", "2", "3"]
    assert list(table[0]) == RESULT_COLUMNS
    assert all(r["converged"] == "true" and not r["error"] for r in table)
    # Mott below the boundary, superfluid above
    assert float(table[0]["max_psi"]) < 1e-9 and float(table[1]["max_psi"]) > 0.1
    # zero flux is its own reference, up to the solver tolerance of two independent runs
    assert abs(float(table[1]["delta_psi"])) < 1e-8
    assert 0 < float(table[3]["delta_psi"]) < 1
    assert not (out / "results.partial.csv").exists()
    assert (out / "timings.csv").exists() and (out / "config.echo").exists()
    assert len(list((out / "states").glob("*.npz"))) == 0


def test_worker_count_does_not_change_bytes(tmp_path):
    cfg = write(tmp_path, SWEEP)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b"), "--workers", "3"]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_resume_skips_finished_points(tmp_path):
    cfg = write(tmp_path, SWEEP.replace("delta_psi = yes", "delta_psi = no"))
    full = tmp_path / "full"
    assert main(["sweep", "--config", str(cfg), "--out", str(full)]) == 0
    expected = (full / "results.csv").read_bytes()

    part = tmp_path / "part"
    part.mkdir()
    lines = expected.decode().split("\r\n")
    # two finished rows then a torn write
    (part / "results.partial.csv").write_bytes(("\r\n".join(lines[:3]) + "\r\n" + lines[3][:10]).encode())
    (part / "config.echo").write_text((full / "config.echo").read_text())
    assert main(["sweep", "--config", str(cfg), "--out", str(part)]) == 0
    assert (part / "results.csv").read_bytes() == expected
    timed = [l.split(",")[0] for l in (part / "timings.csv").read_bytes().decode().split("\r\n") if l]
    assert timed == ["2", "3"]


def test_resume_refuses_changed_config(tmp_path):
    cfg = write(tmp_path, SWEEP)
    out = tmp_path / "o"
    out.mkdir()
    (out / "results.partial.csv").write_text(",".join(RESULT_COLUMNS) + "\r\n")
    (out / "config.echo").write_text("[run]\nmode = other\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 1


def test_failed_points_exit_partial(tmp_path):
    # a non-finite kappa makes the solver raise inside the point
    cfg = write(tmp_path, SWEEP.replace("kappa_bar = 0.03, 0.07", "kappa_bar = 0.03, nan")
                .replace("delta_psi = yes", "delta_psi = no"))
    out = tmp_path / "f"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 2
    table = rows(out / "results.csv")
    assert table[0]["error"] == "" and table[1]["error"]


def test_solve_mode_saves_fields(tmp_path):
    out = tmp_path / "s"
    code = main(["solve", "--out", str(out), "--set", "lattice.alpha=1/4",
                 "--set", "cavity.kappa_bar=0.07", "--set", "solver.n_restarts=1"])
    assert code == 0
    (row,) = rows(out / "results.csv")
    assert row["alpha_num"] == "1" and row["alpha_den"] == "4"
    assert (out / "states" / "p000000.npz").exists()
    assert (out / "fields" / "p000000.vorticity.csv").exists()

    obs = tmp_path / "obs"
    assert main(["observables", "--out", str(obs), "--set",
                 f"observables.state={out / 'states' / 'p000000.npz'}"]) == 0
    summary = json.loads((obs / "observables.json").read_text())
    assert summary["total_winding"] == 4
    assert summary["vortex_lattice"]["n_vortices"] == 4
    assert math.isclose(summary["max_psi"], float(row["max_psi"]), rel_tol=1e-12)


def test_boundary_mode(tmp_path):
    cfg = write(tmp_path, """
        [run]
        mode = boundary
        [lattice]
        nx = 20
        ny = 20
        [boundary]
        alpha = 0, 1/4, 2/5, 1/2
        """)
    out = tmp_path / "b"
    assert main(["boundary", "--config", str(cfg), "--out", str(out)]) == 0
    table = rows(out / "boundary.csv")
    k = {(r["alpha_num"], r["alpha_den"]): float(r["kappa_c_bar"]) for r in table}
    assert k[("0", "1")] == pytest.approx(0.0398747, rel=1e-5)
    assert k[("1", "2")] / k[("0", "1")] == pytest.approx(math.sqrt(2), rel=1e-10)


def test_boundary_mode_needs_alphas(tmp_path):
    assert main(["boundary", "--out", str(tmp_path / "x")]) == 1


def test_boundary_harper_source_accepts_any_flux(tmp_path):
    out = tmp_path / "h"
    assert main(["boundary", "--out", str(out), "--set", "boundary.source=harper",
                 "--set", "boundary.alpha=1/3, 3/7"]) == 0
    assert len(rows(out / "boundary.csv")) == 2


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.ini")]) == 1


def test_observables_missing_state_is_fatal(tmp_path):
    assert main(["observables", "--out", str(tmp_path / "o"),
                 "--set", f"observables.state={tmp_path / 'missing.npz'}"]) == 3
