"""State files and plot-ready CSV dumps.

A state file is an ``.npz`` archive holding

* ``header``: UTF-8 JSON with format version, lattice spec, cavity
  parameters, kappa, truncation, basis order and free-form metadata
  (seed, tolerances, solver report);
* ``coefficients``: complex128 array ``[site, basis state]``;
* ``ux``, ``uy``: complex128 link phases ``[y, x]`` (so gauge-transformed
  states reload exactly).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .jc import CavityParams, build_site_basis
from .lattice import HoppingMatrix, LatticeSpec
from .observables import OrderField, VorticityField
from .solver import GutzwillerState

FORMAT = "jch-gutzwiller-state"
VERSION = 1


def fmt(value) -> str:
    """CSV cell text; floats use repr so they round-trip exactly."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def save_state(path, state: GutzwillerState, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    p = state.params
    header = {
        "format": FORMAT,
        "version": VERSION,
        "lattice": state.lattice.to_dict(),
        "params": {"omega": p.omega, "delta": p.delta, "beta": p.beta, "mu": p.mu},
        "kappa": state.kappa,
        "ell_max": state.basis.ell_max,
        "basis_order": "g0..g{L}, e0..e{L-1}",
        "metadata": metadata or {},
    }
    with path.open("wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
                 coefficients=np.asarray(state.coefficients),
                 ux=np.asarray(state.hopping.ux), uy=np.asarray(state.hopping.uy))
    return path


def load_state(path) -> tuple[GutzwillerState, dict]:
    with np.load(Path(path)) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a state file")
        if header.get("version") != VERSION:
            raise ValueError(f"{path}: unsupported state version {header.get('version')}")
        coeffs = np.array(data["coefficients"])
        ux, uy = np.array(data["ux"]), np.array(data["uy"])
    spec = LatticeSpec.from_dict(header["lattice"])
    params = CavityParams(**header["params"])
    basis = build_site_basis(params, int(header["ell_max"]))
    state = GutzwillerState(HoppingMatrix(spec, ux, uy), basis, float(header["kappa"]), coeffs)
    return state, header


def write_field_csv(path, field: OrderField) -> None:
    s = field.lattice
    rows = []
    for i, z in enumerate(field.psi):
        x, y = s.coords(i)
        rows.append((x, y, float(z.real), float(z.imag), float(abs(z)), float(np.angle(z))))
    write_csv(path, ["x", "y", "re_psi", "im_psi", "abs_psi", "arg_psi"], rows)


def write_vorticity_csv(path, v: VorticityField) -> None:
    """One row per plaquette; ``w`` is empty where the winding is undefined."""
    ny, nx = v.winding.shape
    rows = [(x, y, int(v.winding[y, x]) if v.defined[y, x] else None)
            for y in range(ny) for x in range(nx)]
    write_csv(path, ["px", "py", "w"], rows)
