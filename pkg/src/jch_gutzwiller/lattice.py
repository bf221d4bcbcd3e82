"""Periodic square lattice with uniform synthetic flux (Peierls phases).

Sites are indexed ``i = x + nx * y``.  Link phases are stored per site as
``ux[y, x] = khat[(x, y), (x+1, y)]`` and ``uy[y, x] = khat[(x, y), (x, y+1)]``,
where ``khat[i, j]`` multiplies ``a_i^dagger a_j`` in the hopping term.  The
plaquette with lower-left corner ``(x, y)`` has flux phase

    ux(x, y) * uy(x+1, y) * conj(ux(x, y+1)) * conj(uy(x, y)) = exp(2 pi i alpha).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# dense diagonalisation below this many sites, Lanczos above
DENSE_EIGEN_LIMIT = 1600


class Gauge(str, enum.Enum):
    #: x-link phase exp(-2 pi i alpha y); needs alpha * ny integer
    LANDAU_X = "landau_x"
    #: y-link phase exp(+2 pi i alpha x); needs alpha * nx integer
    LANDAU_Y = "landau_y"
    #: Landau-x plus a twist on the y-seam links; needs alpha * nx * ny integer
    LANDAU_TWISTED = "landau_twisted"

    @classmethod
    def parse(cls, value) -> "Gauge":
        if isinstance(value, Gauge):
            return value
        key = str(value).strip().lower()
        if key == "landau":
            return cls.LANDAU_X
        return cls(key)


class CommensurabilityError(ValueError):
    pass


def parse_alpha(value) -> Fraction:
    """Exact flux fraction from a Fraction, int or ``"p/q"`` string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("alpha must be rational")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        raise TypeError(f"alpha must be given exactly (e.g. '1/4'), got float {value!r}")
    return Fraction(str(value).strip())


def _smallest_multiple(n: int, q: int) -> int:
    return q * max(1, math.ceil(n / q))


@dataclass(frozen=True)
class LatticeSpec:
    nx: int
    ny: int
    alpha: Fraction = Fraction(0)
    gauge: Gauge = Gauge.LANDAU_X

    def __post_init__(self):
        object.__setattr__(self, "alpha", parse_alpha(self.alpha))
        object.__setattr__(self, "gauge", Gauge.parse(self.gauge))
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"lattice must be at least 2x2, got {self.nx}x{self.ny}")
        if not 0 <= self.alpha < 1:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        q = self.alpha.denominator
        n_sites = self.nx * self.ny
        if n_sites % q:
            raise CommensurabilityError(
                f"{self.nx}x{self.ny} torus cannot hold flux {self.alpha}: q={q} must divide "
                f"nx*ny={n_sites}; e.g. use {self.nx}x{_smallest_multiple(self.ny, q)}")
        if self.gauge is Gauge.LANDAU_X and self.ny % q:
            raise CommensurabilityError(
                f"Landau-x gauge at alpha={self.alpha} needs q={q} to divide ny={self.ny}; "
                f"use ny={_smallest_multiple(self.ny, q)} or gauge='landau_twisted'")
        if self.gauge is Gauge.LANDAU_Y and self.nx % q:
            raise CommensurabilityError(
                f"Landau-y gauge at alpha={self.alpha} needs q={q} to divide nx={self.nx}; "
                f"use nx={_smallest_multiple(self.nx, q)} or gauge='landau_twisted'")

    @property
    def n_sites(self) -> int:
        return self.nx * self.ny

    @property
    def flux_quanta(self) -> Fraction:
        return self.alpha * self.n_sites

    def site(self, x: int, y: int) -> int:
        return (x % self.nx) + self.nx * (y % self.ny)

    def coords(self, i: int) -> tuple[int, int]:
        return i % self.nx, i // self.nx

    def neighbors(self, i: int) -> tuple[int, int, int, int]:
        """Neighbours in the fixed order (+x, -x, +y, -y)."""
        x, y = self.coords(i)
        return (self.site(x + 1, y), self.site(x - 1, y),
                self.site(x, y + 1), self.site(x, y - 1))

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "alpha": str(self.alpha),
                "gauge": self.gauge.value}

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeSpec":
        return cls(int(d["nx"]), int(d["ny"]), parse_alpha(d["alpha"]), Gauge.parse(d["gauge"]))


def _phase(turns: Fraction) -> complex:
    """exp(2 pi i * turns), reduced exactly mod 1 first."""
    t = turns % 1
    if t == 0:
        return 1.0 + 0.0j
    return complex(np.exp(2j * np.pi * float(t)))


def _phase_array(turns) -> np.ndarray:
    return np.array([[_phase(t) for t in row] for row in turns], dtype=complex)


@dataclass(frozen=True, eq=False)
class HoppingMatrix:
    """Unit-modulus nearest-neighbour hopping khat on the torus."""

    spec: LatticeSpec
    ux: np.ndarray
    uy: np.ndarray

    def __post_init__(self):
        shape = (self.spec.ny, self.spec.nx)
        if self.ux.shape != shape or self.uy.shape != shape:
            raise ValueError(f"link arrays must have shape {shape}")
        self.ux.setflags(write=False)
        self.uy.setflags(write=False)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        s = self.spec
        idx = np.arange(s.n_sites).reshape(s.ny, s.nx)
        xp = np.roll(idx, -1, axis=1)
        yp = np.roll(idx, -1, axis=0)
        rows, cols, vals = [], [], []
        for i in range(s.n_sites):
            x, y = s.coords(i)
            # (+x, -x, +y, -y)
            rows += [i, i, i, i]
            cols += [xp[y, x], idx[y, (x - 1) % s.nx], yp[y, x], idx[(y - 1) % s.ny, x]]
            vals += [self.ux[y, x], np.conj(self.ux[y, (x - 1) % s.nx]),
                     self.uy[y, x], np.conj(self.uy[(y - 1) % s.ny, x])]
        # duplicates (2-site directions) are summed
        m = sp.coo_matrix((vals, (rows, cols)), shape=(s.n_sites, s.n_sites)).tocsr()
        m.sum_duplicates()
        return m

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def plaquette_products(self) -> np.ndarray:
        """Flux phase of every plaquette, indexed by lower-left corner [y, x]."""
        ux, uy = self.ux, self.uy
        return (ux * np.roll(uy, -1, axis=1)
                * np.conj(np.roll(ux, -1, axis=0)) * np.conj(uy))


def build_hopping_matrix(spec: LatticeSpec) -> HoppingMatrix:
    a = spec.alpha
    xs = range(spec.nx)
    ys = range(spec.ny)
    if spec.gauge is Gauge.LANDAU_Y:
        ux = np.ones((spec.ny, spec.nx), dtype=complex)
        uy = _phase_array([[a * x for x in xs] for _ in ys])
    else:
        ux = _phase_array([[-a * y for _ in xs] for y in ys])
        uy = np.ones((spec.ny, spec.nx), dtype=complex)
        if spec.gauge is Gauge.LANDAU_TWISTED:
            uy[spec.ny - 1, :] = [_phase(a * spec.ny * x) for x in xs]
    return HoppingMatrix(spec, ux, uy)


def gauge_transform(hopping: HoppingMatrix, site_phases) -> HoppingMatrix:
    """Apply khat[i, j] -> exp(i (phi_i - phi_j)) khat[i, j]."""
    s = hopping.spec
    phi = np.asarray(site_phases, dtype=float)
    if phi.size != s.n_sites:
        raise ValueError(f"need {s.n_sites} site phases, got {phi.size}")
    phi = phi.reshape(s.ny, s.nx)
    ux = hopping.ux * np.exp(1j * (phi - np.roll(phi, -1, axis=1)))
    uy = hopping.uy * np.exp(1j * (phi - np.roll(phi, -1, axis=0)))
    return HoppingMatrix(s, ux, uy)


def max_hopping_eigenvalue(hopping: HoppingMatrix, maxiter: int | None = None) -> float:
    """Largest eigenvalue f of khat (the upper edge of the Hofstadter spectrum)."""
    m = hopping.matrix
    n = m.shape[0]
    if n <= DENSE_EIGEN_LIMIT:
        return float(np.linalg.eigvalsh(m.toarray())[-1])
    # deterministic start vector
    v0 = np.cos(np.arange(n) * 0.7) + 1j * np.sin(np.arange(n) * 0.3) + 1.0
    try:
        vals = spla.eigsh(m, k=1, which="LA", tol=1e-14, v0=v0, maxiter=maxiter,
                          return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise RuntimeError(f"Lanczos did not converge for {n}-site hopping matrix") from exc
    return float(vals[-1])


def harper_matrix(alpha, kx: float, ky: float) -> np.ndarray:
    """Magnetic-unit-cell (1 x q) Bloch Hamiltonian for the Landau-x gauge."""
    a = parse_alpha(alpha)
    q = a.denominator
    y = np.arange(q)
    turns = [(a * int(t)) % 1 for t in y]
    h = np.diag(2.0 * np.cos(kx - 2.0 * np.pi * np.array([float(t) for t in turns]))).astype(complex)
    for j in range(q):
        up = (j + 1) % q
        h[j, up] += np.exp(1j * ky) if j + 1 == q else 1.0
        down = (j - 1) % q
        h[j, down] += np.exp(-1j * ky) if j == 0 else 1.0
    return h


def harper_max_eigenvalue(alpha, n_k: int = 64) -> float:
    """f(alpha) on the infinite lattice from a Bloch-momentum sweep.

    The grid ``2 pi j / n_k`` in both momenta is augmented with the points
    ``kx = m pi / q``, ``ky in {0, pi}`` where band edges of the Harper
    problem sit.
    """
    a = parse_alpha(alpha)
    q = a.denominator
    grid = 2.0 * np.pi * np.arange(n_k) / n_k
    kxs = np.unique(np.concatenate([grid, np.pi * np.arange(2 * q) / q]))
    kys = np.unique(np.concatenate([grid, [0.0, np.pi]]))
    stack = np.array([harper_matrix(a, kx, ky) for kx in kxs for ky in kys])
    return float(np.linalg.eigvalsh(stack)[:, -1].max())
