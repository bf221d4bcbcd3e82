"""Single-cavity Jaynes-Cummings eigensystem and truncated site operators.

Energies are in units with hbar = 1.  The atom-photon detuning enters the
cavity Hamiltonian as ``-delta * sigma+ sigma-`` (delta = omega - atom
frequency), which is the convention under which the dressed energies are
``E(+/-, l) = l*omega +/- chi - delta/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: relative tolerance (in units of beta) below which two fillings are degenerate
LOBE_DEGENERACY_TOL = 1e-9

#: how far mott_lobe_index searches when no truncation is given
_LOBE_SEARCH_CAP = 512


class LobeDegeneracyError(ValueError):
    """Two Mott fillings are degenerate at the requested chemical potential."""


@dataclass(frozen=True)
class CavityParams:
    """Physical constants of one cavity.

    Parameters
    ----------
    omega : float
        Cavity frequency.
    delta : float
        Atom-photon detuning.
    beta : float
        Atom-photon coupling, must be positive.
    mu : float
        Chemical potential for the total excitation number.
    """

    omega: float = 1.0
    delta: float = 0.0
    beta: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        for name in ("omega", "delta", "beta", "mu"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta!r}")

    @classmethod
    def from_dimensionless(cls, mu_bar, delta_bar=0.0, beta=1.0, omega=1.0):
        """Build parameters from mu_bar = (mu - omega)/beta and delta_bar = delta/beta."""
        return cls(omega=omega, delta=delta_bar * beta, beta=beta,
                   mu=omega + mu_bar * beta)

    @property
    def mu_bar(self) -> float:
        return (self.mu - self.omega) / self.beta

    @property
    def delta_bar(self) -> float:
        return self.delta / self.beta

    def with_mu_bar(self, mu_bar: float) -> "CavityParams":
        return CavityParams(self.omega, self.delta, self.beta,
                            self.omega + mu_bar * self.beta)


@dataclass(frozen=True)
class DressedLevel:
    """Polariton |branch, ell> = photon_amp |g, ell> + atom_amp |e, ell-1>."""

    ell: int
    branch: str
    energy: float
    photon_amp: float
    atom_amp: float


def rabi_frequency(params: CavityParams, ell: int) -> float:
    return math.sqrt(ell * params.beta ** 2 + params.delta ** 2 / 4.0)


def dressed_levels(params: CavityParams, ell: int) -> list[DressedLevel]:
    """Dressed eigenstates of the cavity with ``ell`` excitations.

    Returns ``[|g,0>]`` for ``ell == 0`` and ``[|-,ell>, |+,ell>]`` otherwise.
    """
    if ell < 0:
        raise ValueError(f"excitation number must be >= 0, got {ell}")
    if ell == 0:
        return [DressedLevel(0, "-", 0.0, 1.0, 0.0)]
    chi = rabi_frequency(params, ell)
    d = params.delta
    levels = []
    for sign, branch in ((-1.0, "-"), (1.0, "+")):
        norm = math.sqrt(2.0 * chi ** 2 - sign * chi * d)
        levels.append(DressedLevel(
            ell=ell,
            branch=branch,
            energy=ell * params.omega + sign * chi - d / 2.0,
            photon_amp=params.beta * math.sqrt(ell) / norm,
            atom_amp=(-d / 2.0 + sign * chi) / norm,
        ))
    return levels


def lower_polariton_energy(params: CavityParams, ell: int) -> float:
    return dressed_levels(params, ell)[0].energy


def mott_lobe_index(params: CavityParams, ell_max: int | None = None,
                    tol: float = LOBE_DEGENERACY_TOL) -> int:
    """Excitation number of the decoupled-cavity ground state of H_JC - mu L.

    Raises
    ------
    LobeDegeneracyError
        If the two lowest fillings are within ``tol * beta`` of each other.
    ValueError
        If no truncation is given and the energy keeps decreasing with the
        filling (mu above every lobe).
    """
    cap = _LOBE_SEARCH_CAP if ell_max is None else ell_max
    ells = np.arange(cap + 1)
    g = np.array([lower_polariton_energy(params, int(l)) for l in ells]) - params.mu * ells
    order = np.argsort(g, kind="stable")
    n = int(order[0])
    if ell_max is None and n == cap:
        raise ValueError(f"no Mott lobe below filling {cap} at mu_bar={params.mu_bar:g}")
    if g[order[1]] - g[n] <= tol * params.beta:
        raise LobeDegeneracyError(
            f"fillings {n} and {int(order[1])} are degenerate at mu_bar={params.mu_bar:.12g}")
    return n


def lobe_interval(n: int, delta_bar: float = 0.0) -> tuple[float, float]:
    """Range of mu_bar over which filling ``n`` is the decoupled ground state."""
    if n < 0:
        raise ValueError("lobe index must be >= 0")
    p = CavityParams(omega=0.0, delta=delta_bar, beta=1.0, mu=0.0)
    lo = -math.inf if n == 0 else lower_polariton_energy(p, n) - lower_polariton_energy(p, n - 1)
    hi = lower_polariton_energy(p, n + 1) - lower_polariton_energy(p, n)
    return lo, hi


def default_ell_max(params: CavityParams, margin: int = 6) -> int:
    """Truncation of ``n + margin`` around the active lobe (at least 2).

    With margin 6, two more levels move the energy per site by < 1e-9 beta up to
    kappa/beta = 0.06 at mu_bar = -0.78; margin 4 leaves a 1e-6 error there.
    """
    try:
        n = mott_lobe_index(params)
    except LobeDegeneracyError:
        n = mott_lobe_index(params, tol=-1.0)
    return max(2, n + margin)


def _frozen(m: np.ndarray) -> np.ndarray:
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class SiteBasis:
    """Truncated single-site basis and operators.

    Basis order: |g,0> ... |g,ell_max>, then |e,0> ... |e,ell_max-1>.  Every
    state in this basis has at most ``ell_max`` excitations, so each
    excitation block is complete and ``L`` commutes with ``H_JC`` exactly.
    """

    params: CavityParams
    ell_max: int
    a: np.ndarray = field(repr=False)
    adag: np.ndarray = field(repr=False)
    sigma_pm: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    h_jc: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    excitations: np.ndarray = field(repr=False)
    mott_state: np.ndarray = field(repr=False)
    mott_filling: int

    @property
    def dimension(self) -> int:
        return 2 * self.ell_max + 1

    def g_index(self, n: int) -> int:
        return n

    def e_index(self, n: int) -> int:
        return self.ell_max + 1 + n

    def block(self, ell: int) -> np.ndarray:
        """Basis indices with total excitation number ``ell``."""
        return np.flatnonzero(self.excitations == ell)


def build_site_basis(params: CavityParams, ell_max: int) -> SiteBasis:
    if ell_max < 2:
        raise ValueError(f"ell_max must be >= 2, got {ell_max}")
    dim = 2 * ell_max + 1
    g = np.arange(ell_max + 1)
    e = ell_max + 1 + np.arange(ell_max)

    a = np.zeros((dim, dim), dtype=complex)
    for n in range(1, ell_max + 1):
        a[g[n - 1], g[n]] = math.sqrt(n)
    for n in range(1, ell_max):
        a[e[n - 1], e[n]] = math.sqrt(n)

    sigma_pm = np.zeros((dim, dim), dtype=complex)
    sigma_pm[e, e] = 1.0
    # sigma+ a : |g,n> -> sqrt(n) |e,n-1>
    coupling = np.zeros((dim, dim), dtype=complex)
    for n in range(1, ell_max + 1):
        coupling[e[n - 1], g[n]] = math.sqrt(n)

    excitations = np.concatenate([g, np.arange(ell_max) + 1])
    L = np.diag(excitations.astype(complex))
    h_jc = (params.omega * L - params.delta * sigma_pm
            + params.beta * (coupling + coupling.conj().T))
    h = h_jc - params.mu * L

    # Mott ground state from the exact excitation blocks, so that it carries
    # no numerical admixture of neighbouring fillings.
    n = mott_lobe_index(params, ell_max=ell_max, tol=-1.0)
    mott = np.zeros(dim, dtype=complex)
    if n == 0:
        mott[g[0]] = 1.0
    else:
        lev = dressed_levels(params, n)[0]
        mott[g[n]] = lev.photon_amp
        mott[e[n - 1]] = lev.atom_amp

    return SiteBasis(
        params=params,
        ell_max=ell_max,
        a=_frozen(a),
        adag=_frozen(a.conj().T.copy()),
        sigma_pm=_frozen(sigma_pm),
        L=_frozen(L),
        h_jc=_frozen(h_jc),
        h=_frozen(h),
        excitations=_frozen(excitations),
        mott_state=_frozen(mott),
        mott_filling=n,
    )
