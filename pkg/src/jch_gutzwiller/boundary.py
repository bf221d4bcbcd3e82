"""Second-order perturbative Mott-superfluid boundary.

Inside lobe ``n`` a weak mean field ``-kappa (Psi a^dagger + h.c.)`` lowers
the site energy by ``r_n kappa^2 |Psi|^2`` with

    r_n = sum_g |<g, n+1| a^dagger |-, n>|^2 / (E_{n+1,g} - E_{n,-} - mu)
        + sum_g |<g, n-1| a |-, n>|^2        / (E_{n-1,g} - E_{n,-} + mu).

The linear response ``psi = r_n kappa khat psi`` first has a solution when
``r_n kappa f = 1``, with ``f`` the largest eigenvalue of ``khat``, so
``kappa_c / beta = 1 / (beta r_n f)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .jc import CavityParams, dressed_levels, mott_lobe_index
from .lattice import (HoppingMatrix, LatticeSpec, build_hopping_matrix, harper_max_eigenvalue,
                      max_hopping_eigenvalue, parse_alpha)


class PerturbationError(ValueError):
    """Chemical potential outside the lobe: a perturbative denominator is not positive."""


@dataclass(frozen=True)
class BoundaryPoint:
    alpha: Fraction
    mu_bar: float
    n: int
    r_n: float
    f_alpha: float
    kappa_c_bar: float
    error: str = ""

    def csv_row(self, beta: float = 1.0) -> dict:
        return {
            "alpha_num": self.alpha.numerator,
            "alpha_den": self.alpha.denominator,
            "mu_bar": self.mu_bar,
            "n": self.n,
            "r_n*beta": self.r_n * beta,
            "f_alpha": self.f_alpha,
            "kappa_c_bar": self.kappa_c_bar,
        }


def _addition_element(upper, lower) -> float:
    """<upper| a^dagger |lower> between dressed states with ell and ell+1."""
    ell = lower.ell
    # a^dagger |g,ell> = sqrt(ell+1) |g,ell+1>,  a^dagger |e,ell-1> = sqrt(ell) |e,ell>
    return (upper.photon_amp * lower.photon_amp * math.sqrt(ell + 1)
            + upper.atom_amp * lower.atom_amp * math.sqrt(ell))


def r_coefficient(params: CavityParams, n: int) -> float:
    """Second-order susceptibility r_n of the Mott state |-, n> (units 1/energy)."""
    if n < 0:
        raise ValueError("lobe index must be >= 0")
    ground = dressed_levels(params, n)[0]
    mu = params.mu
    r = 0.0
    for up in dressed_levels(params, n + 1):
        denom = up.energy - ground.energy - mu
        if denom <= 0:
            raise PerturbationError(
                f"particle-addition denominator {denom:.3g} <= 0: mu_bar={params.mu_bar:g} "
                f"is outside lobe {n}")
        r += _addition_element(up, ground) ** 2 / denom
    if n >= 1:
        for down in dressed_levels(params, n - 1):
            denom = down.energy - ground.energy + mu
            if denom <= 0:
                raise PerturbationError(
                    f"particle-removal denominator {denom:.3g} <= 0: mu_bar={params.mu_bar:g} "
                    f"is outside lobe {n}")
            r += _addition_element(ground, down) ** 2 / denom
    return r


def flux_f(source, n_k: int = 64) -> tuple[Fraction, float]:
    """(alpha, f(alpha)) from a torus lattice/hopping matrix or, for a bare flux value, Harper."""
    if isinstance(source, HoppingMatrix):
        return source.spec.alpha, max_hopping_eigenvalue(source)
    if isinstance(source, LatticeSpec):
        return source.alpha, max_hopping_eigenvalue(build_hopping_matrix(source))
    alpha = parse_alpha(source)
    return alpha, harper_max_eigenvalue(alpha, n_k=n_k)


def critical_kappa(flux, params: CavityParams, n_k: int = 64) -> BoundaryPoint:
    """Critical hopping kappa_c / beta at the chemical potential of ``params``.

    ``flux`` is a :class:`LatticeSpec` or :class:`HoppingMatrix` (exact
    finite-torus f) or a rational flux (infinite-lattice Harper f).
    """
    n = mott_lobe_index(params)
    r = r_coefficient(params, n)
    alpha, f = flux_f(flux, n_k=n_k)
    return BoundaryPoint(alpha, params.mu_bar, n, r, f, 1.0 / (params.beta * r * f))


def boundary_curve(alphas, params: CavityParams, lattice_shape: tuple[int, int] | None = None,
                   gauge="landau_x", n_k: int = 64) -> list[BoundaryPoint]:
    """kappa_c(alpha) at fixed mu; failures are returned as points with ``error`` set.

    With ``lattice_shape=(nx, ny)`` f is taken from that torus, otherwise from
    the Harper sweep.
    """
    out = []
    for a in alphas:
        try:
            alpha = parse_alpha(a)
            flux = alpha if lattice_shape is None else LatticeSpec(*lattice_shape, alpha, gauge)
            out.append(critical_kappa(flux, params, n_k=n_k))
        except (ValueError, TypeError, RuntimeError) as exc:
            try:
                alpha = parse_alpha(a)
            except (ValueError, TypeError):
                alpha = Fraction(0)
            out.append(BoundaryPoint(alpha, params.mu_bar, -1, math.nan, math.nan, math.nan,
                                     error=str(exc)))
    return out
