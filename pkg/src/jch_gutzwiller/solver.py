"""Gutzwiller mean-field ground states of the JCH lattice.

Each site carries a normalised state in the truncated JC basis.  Sites see
the neighbour-summed mean field ``Psi_i = sum_j khat_ij psi_j`` through

    H_eff,i = H_JC - mu L - kappa (Psi_i a^dagger + Psi_i^* a),

and the grand-canonical energy of the product state is

    E = sum_i <H_JC - mu L>_i - kappa * psi^dagger khat psi.

Sweeps update sites colour class by colour class (a greedy colouring of the
lattice graph).  Sites of one class are not coupled to each other, so a
class update is the same as visiting its sites one after another: the sweep
is a Gauss-Seidel iteration with a fixed, deterministic order.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache

import numpy as np
from scipy.optimize import minimize

from .jc import CavityParams, SiteBasis, build_site_basis, default_ell_max
from .lattice import HoppingMatrix, LatticeSpec, build_hopping_matrix

log = logging.getLogger(__name__)

METHODS = ("scf", "hybrid")
TRUNCATION_WARNING = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-9
    energy_tolerance: float = 1e-12
    max_iterations: int = 20000
    damping: float = 1.0
    n_restarts: int = 4
    seed: int = 0
    init_amplitude: float = 0.1
    ell_max: int | None = None
    #: kappa_bar values visited (in order, warm-started) before the target kappa
    anneal: tuple[float, ...] = ()
    zero_start: bool = True
    #: "hybrid" first relaxes each start by L-BFGS on the energy; "scf" sweeps only
    method: str = "hybrid"
    qn_max_iterations: int = 20000
    #: Anderson mixing depth for the sweeps (0 = plain sweeps)
    anderson_depth: int = 10

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.ell_max is not None and self.ell_max < 2:
            raise ValueError("ell_max must be >= 2")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.qn_max_iterations < 1:
            raise ValueError("qn_max_iterations must be >= 1")
        if self.anderson_depth < 0:
            raise ValueError("anderson_depth must be >= 0")
        object.__setattr__(self, "anneal", tuple(float(k) for k in self.anneal))


@dataclass(frozen=True, eq=False)
class GutzwillerState:
    hopping: HoppingMatrix
    basis: SiteBasis
    kappa: float
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.ascontiguousarray(self.coefficients, dtype=complex)
        if c.shape != (self.hopping.spec.n_sites, self.basis.dimension):
            raise ValueError(f"coefficients must have shape "
                             f"{(self.hopping.spec.n_sites, self.basis.dimension)}, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def lattice(self) -> LatticeSpec:
        return self.hopping.spec

    @property
    def params(self) -> CavityParams:
        return self.basis.params

    @cached_property
    def psi(self) -> np.ndarray:
        return order_parameter(self.coefficients, self.basis)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.coefficients, axis=1)

    def expectation(self, op: np.ndarray) -> np.ndarray:
        return site_expectation(self.coefficients, op)


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    energy: float
    energy_per_site: float
    best_restart: int
    seed: int
    wall_time: float
    max_delta_psi: float = math.nan
    #: L-BFGS iterations spent before the sweeps of the winning run (hybrid method)
    qn_iterations: int = 0
    #: label of each run, in the order they were tried ("zero", "initial", "random-k")
    runs: list[str] = field(default_factory=list)
    run_energies: list[float] = field(default_factory=list)
    run_converged: list[bool] = field(default_factory=list)
    energy_history: list[float] = field(default_factory=list, repr=False)


def site_expectation(coeffs: np.ndarray, op: np.ndarray) -> np.ndarray:
    return np.einsum("ik,kl,il->i", coeffs.conj(), op, coeffs)


def order_parameter(coeffs: np.ndarray, basis: SiteBasis) -> np.ndarray:
    return site_expectation(coeffs, basis.a)


def site_effective_hamiltonian(basis: SiteBasis, mean_field: complex, kappa: float) -> np.ndarray:
    """H_JC - mu L - kappa (Psi a^dagger + Psi^* a) for one site.

    The constant ``+kappa Re(psi_i^* Psi_i)`` is left out; it shifts the
    energy but not the eigenvectors.
    """
    mf = complex(mean_field)
    if not (math.isfinite(mf.real) and math.isfinite(mf.imag)):
        raise ValueError(f"non-finite mean field {mean_field!r}")
    return basis.h - kappa * (mf * basis.adag + mf.conjugate() * basis.a)


def _effective_hamiltonians(basis: SiteBasis, mean_fields: np.ndarray, kappa: float) -> np.ndarray:
    mf = mean_fields[:, None, None]
    return basis.h[None] - kappa * (mf * basis.adag[None] + mf.conj() * basis.a[None])


def _site_ground_states(basis: SiteBasis, mean_fields: np.ndarray, kappa: float) -> np.ndarray:
    out = np.empty((mean_fields.size, basis.dimension), dtype=complex)
    free = (mean_fields == 0) | (kappa == 0)
    out[free] = basis.mott_state
    busy = ~free
    if busy.any():
        mf = mean_fields[busy]
        if not np.all(np.isfinite(mf)):
            bad = np.flatnonzero(busy)[~np.isfinite(mf)]
            raise FloatingPointError(f"non-finite mean field at sites {bad.tolist()}")
        try:
            _, vecs = np.linalg.eigh(_effective_hamiltonians(basis, mf, kappa))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"site eigen-solve failed: {exc}") from exc
        out[busy] = vecs[:, :, 0]
    return out


@lru_cache(maxsize=64)
def lattice_colouring(nx: int, ny: int) -> tuple[np.ndarray, ...]:
    """Greedy colouring of the torus graph in site order; classes in colour order."""
    spec = LatticeSpec(nx, ny)
    colour = np.full(spec.n_sites, -1)
    for i in range(spec.n_sites):
        used = {colour[j] for j in spec.neighbors(i)}
        c = 0
        while c in used:
            c += 1
        colour[i] = c
    classes = tuple(np.flatnonzero(colour == c) for c in range(colour.max() + 1))
    for cls in classes:
        cls.setflags(write=False)
    return classes


def _energy(coeffs, psi, basis, k_matrix, kappa) -> float:
    onsite = np.einsum("ik,kl,il->", coeffs.conj(), basis.h, coeffs).real
    hop = np.vdot(psi, k_matrix @ psi).real
    return float(onsite - kappa * hop)


def total_energy(state: GutzwillerState) -> float:
    """Grand-canonical energy <H_JC - mu L> - kappa psi^dagger khat psi."""
    e = _energy(state.coefficients, state.psi, state.basis, state.hopping.matrix, state.kappa)
    if not math.isfinite(e):
        raise FloatingPointError("non-finite energy")
    return e


class _Sweeper:
    """Pre-sliced hopping rows per colour class for fast repeated sweeps."""

    def __init__(self, hopping: HoppingMatrix, basis: SiteBasis):
        s = hopping.spec
        self.basis = basis
        self.k_matrix = hopping.matrix
        self.classes = lattice_colouring(s.nx, s.ny)
        self.rows = [self.k_matrix[cls] for cls in self.classes]

    def sweep(self, coeffs, psi, kappa, damping):
        """In-place sweep; returns max |delta psi|."""
        basis = self.basis
        max_dpsi = 0.0
        for cls, rows in zip(self.classes, self.rows):
            mean_fields = rows @ psi
            new = _site_ground_states(basis, mean_fields, kappa)
            old = coeffs[cls]
            if damping < 1.0:
                ov = np.einsum("ik,ik->i", old.conj(), new)
                mag = np.abs(ov)
                rot = np.where(mag > 0, ov.conj() / np.where(mag > 0, mag, 1.0), 1.0)
                new = (1.0 - damping) * old + damping * (new * rot[:, None])
                new /= np.linalg.norm(new, axis=1)[:, None]
            new_psi = order_parameter(new, basis)
            d = np.abs(new_psi - psi[cls])
            if d.size:
                max_dpsi = max(max_dpsi, float(d.max()))
            coeffs[cls] = new
            psi[cls] = new_psi
        return max_dpsi

    def energy(self, coeffs, psi, kappa):
        return _energy(coeffs, psi, self.basis, self.k_matrix, kappa)


def scf_sweep(state: GutzwillerState, damping: float = 1.0) -> tuple[GutzwillerState, float]:
    """One Gauss-Seidel sweep over all sites; returns the new state and max |delta psi|."""
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    coeffs = np.array(state.coefficients)
    psi = np.array(state.psi)
    dpsi = _Sweeper(state.hopping, state.basis).sweep(coeffs, psi, state.kappa, damping)
    return replace(state, coefficients=coeffs), dpsi


def quasi_newton_relax(hopping: HoppingMatrix, basis: SiteBasis, coeffs: np.ndarray, kappa: float,
                       max_iterations: int = 20000) -> tuple[np.ndarray, int]:
    """L-BFGS descent of the product-state energy; returns normalised coefficients and iterations.

    Variables are the real and imaginary parts of unnormalised site vectors
    in the eigenbasis of ``H_JC - mu L``, so the on-site part is a sum of
    level gaps and the gradient is ``(H_eff c - <H_eff> c) / |z|`` per site.
    Near a vortex lattice the soft modes make plain sweeps crawl; this walks
    down them in a few thousand cheap steps and leaves the sweeps to finish.
    """
    n, d = coeffs.shape
    levels, U = np.linalg.eigh(basis.h)
    gap = levels - levels[0]
    A = U.conj().T @ basis.a @ U
    At, Ac = A.T, A.conj()
    K = hopping.matrix

    def split(x):
        z = (x[:n * d] + 1j * x[n * d:]).reshape(n, d)
        nz = np.linalg.norm(z, axis=1)
        return z / nz[:, None], nz

    def fg(x):
        c, nz = split(x)
        psi = np.einsum("ik,kl,il->i", c.conj(), A, c)
        mf = K @ psi
        hc = c * gap - kappa * (mf[:, None] * (c @ Ac) + mf.conj()[:, None] * (c @ At))
        e = float(np.sum(gap * (c.real ** 2 + c.imag ** 2)) - kappa * np.vdot(psi, mf).real)
        lam = np.einsum("ik,ik->i", c.conj(), hc).real
        g = 2.0 * ((hc - lam[:, None] * c) / nz[:, None]).ravel()
        return e, np.concatenate([g.real, g.imag])

    z0 = (np.asarray(coeffs, dtype=complex) @ U.conj()).ravel()
    res = minimize(fg, np.concatenate([z0.real, z0.imag]), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iterations, "maxcor": 20, "gtol": 1e-13,
                            "ftol": 1e-18, "maxfun": 4 * max_iterations})
    c, _ = split(res.x)
    return c @ U.T, int(res.nit)


@dataclass
class _Run:
    coeffs: np.ndarray
    energy: float
    iterations: int
    converged: bool
    max_dpsi: float
    history: list[float]
    qn_iterations: int = 0


class _Anderson:
    """Type-II Anderson mixing of the sweep map ``psi_in -> psi_out`` (real coefficients)."""

    def __init__(self, depth: int):
        self.depth = depth
        self.xs: list[np.ndarray] = []
        self.fs: list[np.ndarray] = []

    def reset(self):
        self.xs.clear()
        self.fs.clear()

    def next_input(self, x, gx):
        self.xs.append(x)
        self.fs.append(gx - x)
        if len(self.xs) > self.depth + 1:
            del self.xs[0], self.fs[0]
        if len(self.xs) < 2:
            return gx
        dx = np.diff(np.array(self.xs), axis=0).T
        df = np.diff(np.array(self.fs), axis=0).T
        f = self.fs[-1]
        gamma = np.linalg.lstsq(np.vstack([df.real, df.imag]), np.concatenate([f.real, f.imag]),
                                rcond=None)[0]
        return gx - (dx + df) @ gamma


def _iterate(sweeper: _Sweeper, coeffs, kappa, config: SolverConfig, beta: float) -> _Run:
    """Sweeps until converged, optionally Anderson-accelerated.

    Every sweep output is a genuine product state.  An accelerated input
    whose sweep raises the energy by more than 1e-10 beta is rejected and the
    mixing history dropped.  Convergence is only declared on a plain sweep
    from the current state.
    """
    coeffs = np.array(coeffs, dtype=complex)
    psi = order_parameter(coeffs, sweeper.basis)
    energy = sweeper.energy(coeffs, psi, kappa)
    history = [energy]
    mixer = _Anderson(config.anderson_depth) if config.anderson_depth else None
    x, plain = psi, True
    dpsi = math.inf
    for it in range(1, config.max_iterations + 1):
        new_coeffs, new_psi = coeffs.copy(), x.copy()
        dpsi = sweeper.sweep(new_coeffs, new_psi, kappa, config.damping)
        new_energy = sweeper.energy(new_coeffs, new_psi, kappa)
        if not math.isfinite(new_energy):
            raise FloatingPointError(f"energy diverged at sweep {it}")
        if not plain and new_energy > energy + 1e-10 * beta:
            mixer.reset()
            x, plain = psi, True
            continue
        de = abs(new_energy - energy)
        coeffs, psi_in, psi, energy = new_coeffs, x, new_psi, new_energy
        history.append(energy)
        if plain and dpsi < config.tolerance and de <= config.energy_tolerance * max(abs(energy), beta):
            return _Run(coeffs, energy, it, True, dpsi, history)
        if mixer is None or dpsi < config.tolerance:
            x, plain = psi, True
        else:
            x, plain = mixer.next_input(psi_in, psi), False
    return _Run(coeffs, energy, config.max_iterations, False, dpsi, history)


def random_initial_state(basis: SiteBasis, n_sites: int, amplitude: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Site ground states in a random complex Gaussian pseudo-field of scale ``amplitude * beta``."""
    z = amplitude * (rng.standard_normal(n_sites) + 1j * rng.standard_normal(n_sites)) / math.sqrt(2)
    return _site_ground_states(basis, z, basis.params.beta)


def mott_initial_state(basis: SiteBasis, n_sites: int) -> np.ndarray:
    return np.tile(basis.mott_state, (n_sites, 1))


def solve_ground_state(lattice: LatticeSpec | HoppingMatrix, params: CavityParams, kappa: float,
                       config: SolverConfig = SolverConfig(),
                       initial: GutzwillerState | np.ndarray | None = None,
                       ) -> tuple[GutzwillerState, SolverReport]:
    """Lowest-energy self-consistent Gutzwiller state over several starts.

    Runs, in order: the psi = 0 Mott start (if enabled), the ``initial``
    warm start (if given), then ``n_restarts`` random starts seeded from
    ``(config.seed, restart index)``.  The lowest converged energy wins; a
    later run must beat the incumbent by more than the energy tolerance.
    With ``method="hybrid"`` each start is first relaxed by L-BFGS
    (:func:`quasi_newton_relax`); convergence is still judged by the sweeps.
    """
    t0 = time.perf_counter()
    if not math.isfinite(kappa):
        raise ValueError(f"kappa must be finite, got {kappa!r}")
    hopping = lattice if isinstance(lattice, HoppingMatrix) else build_hopping_matrix(lattice)
    n_sites = hopping.spec.n_sites
    ell_max = config.ell_max if config.ell_max is not None else default_ell_max(params)
    basis = build_site_basis(params, ell_max)
    sweeper = _Sweeper(hopping, basis)
    beta = params.beta

    starts: list[tuple[str, np.ndarray, bool]] = []
    if config.zero_start:
        starts.append(("zero", mott_initial_state(basis, n_sites), False))
    if initial is not None:
        c0 = initial.coefficients if isinstance(initial, GutzwillerState) else np.asarray(initial)
        if c0.shape != (n_sites, basis.dimension):
            raise ValueError(f"initial state has shape {c0.shape}, expected {(n_sites, basis.dimension)}")
        starts.append(("initial", c0, True))
    for k in range(config.n_restarts):
        rng = np.random.default_rng([config.seed, k])
        starts.append((f"random-{k}", random_initial_state(basis, n_sites, config.init_amplitude, rng), True))

    report = SolverReport(False, 0, math.inf, math.inf, -1, config.seed, 0.0)
    best: _Run | None = None
    for index, (label, coeffs, anneal) in enumerate(starts):
        if anneal:
            for kb in config.anneal:
                coeffs = _iterate(sweeper, coeffs, kb * beta, config, beta).coeffs
        qn_it = 0
        if config.method == "hybrid":
            e0 = sweeper.energy(coeffs, order_parameter(coeffs, basis), kappa)
            coeffs, qn_it = quasi_newton_relax(hopping, basis, coeffs, kappa, config.qn_max_iterations)
        run = _iterate(sweeper, coeffs, kappa, config, beta)
        if qn_it:
            run.history.insert(0, e0)
            run.qn_iterations = qn_it
        log.debug("run %s: E=%.15g it=%d converged=%s", label, run.energy, run.iterations, run.converged)
        report.runs.append(label)
        report.run_energies.append(run.energy)
        report.run_converged.append(run.converged)
        if best is None or _better(run, best, config.energy_tolerance * max(abs(best.energy), beta)):
            best = run
            report.best_restart = index

    assert best is not None
    report.converged = best.converged
    report.iterations = best.iterations
    report.energy = best.energy
    report.energy_per_site = best.energy / n_sites
    report.max_delta_psi = best.max_dpsi
    report.qn_iterations = best.qn_iterations
    report.energy_history = best.history
    report.wall_time = time.perf_counter() - t0
    state = GutzwillerState(hopping, basis, kappa, best.coeffs)
    top = truncation_weight(state)
    if top > TRUNCATION_WARNING:
        # past kappa f > -mu_bar the grand-canonical energy has no lower bound
        log.warning("weight %.1e in the top excitation level (ell_max=%d): result depends on "
                    "the truncation", top, ell_max)
    return state, report


def truncation_weight(state: GutzwillerState) -> float:
    """Largest per-site probability in the ``ell = ell_max`` block."""
    top = state.basis.block(state.basis.ell_max)
    return float(np.max(np.sum(np.abs(state.coefficients[:, top]) ** 2, axis=1)))


def _better(run: _Run, best: _Run, tie: float) -> bool:
    if run.converged != best.converged:
        return run.converged
    return run.energy < best.energy - tie
