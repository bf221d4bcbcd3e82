"""Order-parameter observables, vorticity and vortex-lattice statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay

from .lattice import HoppingMatrix, LatticeSpec
from .solver import GutzwillerState

#: corners with |psi| below this make a plaquette's winding undefined
CORE_AMPLITUDE = 1e-12

#: Delaunay edges whose two opposite angles sum above this are dropped
#: (the diagonal of a square cell has pi, a triangular-lattice edge 2 pi / 3)
WEAK_EDGE_ANGLE = 5.0 * math.pi / 6.0


@dataclass(frozen=True, eq=False)
class OrderField:
    psi: np.ndarray
    hopping: HoppingMatrix

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=complex).ravel()
        if psi.size != self.hopping.spec.n_sites:
            raise ValueError(f"field has {psi.size} entries for {self.hopping.spec.n_sites} sites")
        if not np.all(np.isfinite(psi)):
            raise ValueError("order field has non-finite entries")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_state(cls, state: GutzwillerState) -> "OrderField":
        return cls(state.psi, state.hopping)

    @property
    def lattice(self) -> LatticeSpec:
        return self.hopping.spec

    @cached_property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.psi)

    @cached_property
    def phase(self) -> np.ndarray:
        return np.angle(self.psi)

    @property
    def max_amplitude(self) -> float:
        return float(self.amplitude.max())

    def grid(self) -> np.ndarray:
        """psi reshaped to [y, x]."""
        return self.psi.reshape(self.lattice.ny, self.lattice.nx)


def delta_psi(field_zero: OrderField, field_alpha: OrderField, epsilon: float = 0.001) -> float:
    """Relative suppression of max|psi| at finite flux against the zero-flux field."""
    a, b = field_zero.lattice, field_alpha.lattice
    if (a.nx, a.ny) != (b.nx, b.ny):
        raise ValueError(f"lattices differ: {a.nx}x{a.ny} vs {b.nx}x{b.ny}")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    m0, ma = field_zero.max_amplitude, field_alpha.max_amplitude
    return (m0 - ma) / (m0 + ma + epsilon)


def excitation_density(state: GutzwillerState) -> float:
    return float(state.expectation(state.basis.L).real.mean())


def coherence(field: OrderField, i: int, j: int) -> complex:
    """Single-particle coherence rho_ij = psi_i psi_j^*."""
    n = field.psi.size
    for k in (i, j):
        if not 0 <= k < n:
            raise IndexError(f"site {k} out of range for {n} sites")
    return complex(field.psi[i] * np.conj(field.psi[j]))


@dataclass(frozen=True, eq=False)
class CoreCluster:
    """Connected group of undefined plaquettes with the winding around its rim."""

    plaquettes: tuple[tuple[int, int], ...]
    winding: int | None


@dataclass(frozen=True, eq=False)
class VorticityField:
    """Integer winding per plaquette, indexed by lower-left corner [y, x].

    Undefined plaquettes carry 0 in ``winding`` and False in ``defined``;
    ``clusters`` holds their connected groups with the gauge-invariant
    winding around each group's rim where that rim exists.
    """

    winding: np.ndarray
    defined: np.ndarray
    clusters: tuple[CoreCluster, ...] = ()

    @property
    def total(self) -> int:
        w = int(self.winding[self.defined].sum())
        return w + sum(c.winding for c in self.clusters if c.winding is not None)

    @property
    def undefined(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(~self.defined)
        return list(zip(xs.tolist(), ys.tolist()))

    def vortices(self) -> list[tuple[int, int, int]]:
        """(px, py, w) for every defined plaquette with non-zero winding."""
        ys, xs = np.nonzero(self.defined & (self.winding != 0))
        return [(int(x), int(y), int(self.winding[y, x])) for x, y in zip(xs, ys)]


def _reduced_flux(alpha: Fraction) -> Fraction:
    return alpha if alpha <= Fraction(1, 2) else alpha - 1


def link_currents(field: OrderField) -> tuple[np.ndarray, np.ndarray]:
    """Gauge-invariant link angles arg(psi_i^* khat_ij psi_j) on +x and +y links, in (-pi, pi]."""
    h = field.hopping
    p = field.grid()
    jx = np.angle(np.conj(p) * h.ux * np.roll(p, -1, axis=1))
    jy = np.angle(np.conj(p) * h.uy * np.roll(p, -1, axis=0))
    return jx, jy


def vorticity(field: OrderField, hopping: HoppingMatrix | None = None) -> VorticityField:
    """Winding number of every plaquette from gauge-invariant link angles.

    Around a plaquette the reduced link angles sum to ``2 pi (alpha' - w)``
    where ``alpha'`` is the flux reduced to (-1/2, 1/2]; ``w`` is the winding.
    A plaquette with a corner of vanishing amplitude is left undefined.
    """
    if hopping is not None:
        field = OrderField(field.psi, hopping)
    jx, jy = link_currents(field)
    circulation = jx + np.roll(jy, -1, axis=1) - np.roll(jx, -1, axis=0) - jy
    flux = float(_reduced_flux(field.lattice.alpha))
    w = flux - circulation / (2.0 * np.pi)
    winding = np.rint(w).astype(int)

    amp = np.abs(field.grid()) >= CORE_AMPLITUDE
    defined = amp & np.roll(amp, -1, axis=1) & np.roll(amp, -1, axis=0) & np.roll(np.roll(amp, -1, 0), -1, 1)
    defined &= np.abs(w - winding) < 1e-6
    winding = np.where(defined, winding, 0)
    clusters = tuple(_core_clusters(~defined, jx, jy, flux))
    return VorticityField(winding, defined, clusters)


def _core_clusters(undefined, jx, jy, flux):
    ny, nx = undefined.shape
    seen = np.zeros_like(undefined)
    for y0, x0 in zip(*np.nonzero(undefined)):
        if seen[y0, x0]:
            continue
        members, stack = [], [(x0, y0)]
        seen[y0, x0] = True
        while stack:
            x, y = stack.pop()
            members.append((x, y))
            for xx, yy in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                xx, yy = xx % nx, yy % ny
                if undefined[yy, xx] and not seen[yy, xx]:
                    seen[yy, xx] = True
                    stack.append((xx, yy))
        yield CoreCluster(tuple(sorted(members, key=lambda m: (m[1], m[0]))),
                          _rim_winding(members, jx, jy, flux))


def _rim_winding(members, jx, jy, flux):
    ny, nx = jx.shape
    # directed links (kind, x, y, sign) of each plaquette boundary; interior links cancel
    count: dict[tuple[str, int, int], int] = {}
    for x, y in members:
        for key, sgn in ((("x", x, y), 1), (("y", (x + 1) % nx, y), 1),
                         (("x", x, (y + 1) % ny), -1), (("y", x, y), -1)):
            count[key] = count.get(key, 0) + sgn
    rim = {k: c for k, c in count.items() if c}
    if not rim:
        return None
    circ = sum(c * (jx[y, x] if kind == "x" else jy[y, x]) for (kind, x, y), c in rim.items())
    if not np.isfinite(circ):
        return None
    w = len(members) * flux - circ / (2.0 * np.pi)
    if abs(w - round(w)) > 1e-6:
        return None
    return int(round(w))


def vortex_positions(v: VorticityField, field: OrderField) -> np.ndarray:
    """Core positions (x, y), repeated |w| times.

    A vortex plaquette is placed at the inverse-amplitude weighted mean of
    its corners; an undefined core cluster at the mean of its plaquette
    centres.
    """
    amp = np.abs(field.grid())
    ny, nx = amp.shape
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    off = np.array(corners, dtype=float)
    pts = []
    for px, py, w in v.vortices():
        wts = np.array([1.0 / amp[(py + dy) % ny, (px + dx) % nx] for dx, dy in corners])
        x, y = (wts[:, None] * off).sum(0) / wts.sum()
        pts.extend([(px + x, py + y)] * abs(w))
    for c in v.clusters:
        if not c.winding:
            continue
        ref = np.array(c.plaquettes[0], dtype=float)
        rel = _min_image(np.array(c.plaquettes, dtype=float) - ref, np.array([nx, ny]))
        x, y = ref + rel.mean(axis=0) + 0.5
        pts.extend([(x % nx, y % ny)] * abs(c.winding))
    return np.array(pts, dtype=float).reshape(-1, 2)


@dataclass
class VortexLatticeStats:
    n_vortices: int
    positions: np.ndarray = field(repr=False)
    nn_distances: np.ndarray = field(repr=False)
    nn_mean: float = math.nan
    nn_cv: float = math.nan
    coordination: np.ndarray = field(default=None, repr=False)
    mean_coordination: float = math.nan


def _min_image(d, box):
    return d - box * np.round(d / box)


def _opposite_angle(a, b, c):
    """Angle at ``c`` in triangle (a, b, c)."""
    u, v = a - c, b - c
    cosang = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.acos(min(1.0, max(-1.0, cosang)))


def point_pattern_stats(points, lx: float, ly: float,
                        weak_edge_angle: float = WEAK_EDGE_ANGLE) -> VortexLatticeStats:
    """Nearest-neighbour spacing and coordination of points on an ``lx`` x ``ly`` torus.

    Neighbours come from a Delaunay triangulation of the 3x3 periodic
    tiling.  On a torus every triangulation has mean degree exactly 6, so
    edges shared by triangles whose opposite angles sum above
    ``weak_edge_angle`` are dropped: these are the cocircular diagonals
    that distinguish square from triangular order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        raise ValueError(f"need at least 3 vortices for lattice statistics, got {n}")
    pts = np.mod(pts, [lx, ly])
    box = np.array([lx, ly])

    d = _min_image(pts[:, None, :] - pts[None, :, :], box)
    dist = np.hypot(d[..., 0], d[..., 1])
    np.fill_diagonal(dist, np.inf)
    nn = dist.min(axis=1)

    shifts = [(sx, sy) for sx in (-1, 0, 1) for sy in (-1, 0, 1)]
    tiled = np.concatenate([pts + np.array([sx * lx, sy * ly]) for sx, sy in shifts])
    owner = np.tile(np.arange(n), len(shifts))
    centre = shifts.index((0, 0))
    tri = Delaunay(tiled)

    # opposite-angle sums per edge
    angle_sum: dict[tuple[int, int], float] = {}
    for simplex in tri.simplices:
        for k in range(3):
            i, j, o = simplex[k], simplex[(k + 1) % 3], simplex[(k + 2) % 3]
            key = (min(i, j), max(i, j))
            angle_sum[key] = angle_sum.get(key, 0.0) + _opposite_angle(tiled[i], tiled[j], tiled[o])

    neighbours = [set() for _ in range(n)]
    for (i, j), s in angle_sum.items():
        if s > weak_edge_angle:
            continue
        for a, b in ((i, j), (j, i)):
            if a // n == centre:
                # neighbour identified by owner and image offset
                off = tuple(np.round((tiled[b] - pts[owner[b]] - (tiled[a] - pts[owner[a]])) / box).astype(int))
                neighbours[owner[a]].add((int(owner[b]), off))
    coordination = np.array([len(s) for s in neighbours])
    return VortexLatticeStats(
        n_vortices=n,
        positions=pts,
        nn_distances=nn,
        nn_mean=float(nn.mean()),
        nn_cv=float(nn.std() / nn.mean()),
        coordination=coordination,
        mean_coordination=float(coordination.mean()),
    )


def vortex_lattice_stats(v: VorticityField, field: OrderField) -> VortexLatticeStats:
    pts = vortex_positions(v, field)
    return point_pattern_stats(pts, field.lattice.nx, field.lattice.ny)
