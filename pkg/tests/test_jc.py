import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jch_gutzwiller.jc import (CavityParams, LobeDegeneracyError, build_site_basis,
                               default_ell_max, dressed_levels, lobe_interval, mott_lobe_index)


def block_2x2(params, ell):
    """The (|g,ell>, |e,ell-1>) block of the cavity Hamiltonian, written out by hand."""
    c = params.beta * math.sqrt(ell)
    return np.array([[ell * params.omega, c], [c, ell * params.omega - params.delta]])


def test_resonant_first_manifold():
    p = CavityParams(omega=1.0, delta=0.0, beta=1.0)
    lo, hi = dressed_levels(p, 1)
    assert (lo.branch, hi.branch) == ("-", "+")
    assert lo.energy == pytest.approx(0.0, abs=1e-15)
    assert hi.energy == pytest.approx(2.0)
    assert lo.photon_amp == pytest.approx(1 / math.sqrt(2))
    assert abs(lo.atom_amp) == pytest.approx(1 / math.sqrt(2))
    assert hi.atom_amp == pytest.approx(1 / math.sqrt(2))
    assert lo.atom_amp * hi.atom_amp < 0


def test_resonant_second_manifold():
    p = CavityParams(omega=1.0, delta=0.0, beta=1.0)
    assert dressed_levels(p, 2)[0].energy == pytest.approx(2 - math.sqrt(2), rel=1e-14)


def test_detuned_amplitudes_match_dense_block():
    p = CavityParams(omega=1.0, delta=2.0, beta=1.0)
    levels = dressed_levels(p, 1)
    w, v = np.linalg.eigh(block_2x2(p, 1))
    assert w[1] - w[0] == pytest.approx(2 * math.sqrt(2))
    for lev, k in zip(levels, (0, 1)):
        assert lev.energy == pytest.approx(w[k], abs=1e-13)
        vec = np.array([lev.photon_amp, lev.atom_amp])
        assert abs(np.dot(vec, v[:, k])) == pytest.approx(1.0, abs=1e-13)


def test_ground_manifold_is_single_level():
    levels = dressed_levels(CavityParams(delta=0.7), 0)
    assert len(levels) == 1
    assert levels[0].energy == 0.0 and levels[0].photon_amp == 1.0


def test_negative_ell_rejected():
    with pytest.raises(ValueError):
        dressed_levels(CavityParams(), -1)


def test_beta_must_be_positive():
    with pytest.raises(ValueError):
        CavityParams(beta=0.0)
    with pytest.raises(ValueError):
        CavityParams(mu=math.nan)


@settings(max_examples=60, deadline=None)
@given(ell=st.integers(1, 40), delta=st.floats(-5, 5), beta=st.floats(0.05, 3), omega=st.floats(-2, 2))
def test_dressed_levels_diagonalise_block(ell, delta, beta, omega):
    p = CavityParams(omega=omega, delta=delta, beta=beta)
    lo, hi = dressed_levels(p, ell)
    w = np.linalg.eigvalsh(block_2x2(p, ell))
    scale = max(1.0, abs(w).max())
    assert abs(lo.energy - w[0]) <= 1e-12 * scale
    assert abs(hi.energy - w[1]) <= 1e-12 * scale
    assert lo.energy <= hi.energy
    for lev in (lo, hi):
        assert lev.photon_amp ** 2 + lev.atom_amp ** 2 == pytest.approx(1.0, abs=1e-12)
    assert abs(lo.photon_amp * hi.photon_amp + lo.atom_amp * hi.atom_amp) < 1e-12


@pytest.mark.parametrize("mu_bar, n", [(-1.5, 0), (-0.78, 1), (-0.35, 2), (-0.3, 3)])
def test_mott_lobe_index(mu_bar, n):
    assert mott_lobe_index(CavityParams.from_dimensionless(mu_bar)) == n


def test_lobe_edges_resonant():
    assert lobe_interval(0) == (-math.inf, pytest.approx(-1.0))
    lo, hi = lobe_interval(1)
    assert lo == pytest.approx(-1.0)
    # E(-,2) - E(-,1) - omega = 1 - sqrt(2) in units of beta
    assert hi == pytest.approx(1 - math.sqrt(2), abs=1e-14)


def test_degenerate_filling_rejected():
    with pytest.raises(LobeDegeneracyError):
        mott_lobe_index(CavityParams.from_dimensionless(1 - math.sqrt(2)))


def test_no_lobe_above_cavity_frequency():
    with pytest.raises(ValueError):
        mott_lobe_index(CavityParams.from_dimensionless(0.2))


@settings(max_examples=40, deadline=None)
@given(delta_bar=st.floats(-2, 2), mus=st.lists(st.floats(-3, -0.05), min_size=2, max_size=6))
def test_lobe_index_non_decreasing_in_mu(delta_bar, mus):
    idx = []
    for m in sorted(mus):
        p = CavityParams.from_dimensionless(m, delta_bar)
        try:
            idx.append(mott_lobe_index(p))
        except LobeDegeneracyError:
            continue
        except ValueError:
            break
    assert idx == sorted(idx)


def test_basis_dimension_and_ladder():
    b = build_site_basis(CavityParams.from_dimensionless(-0.78), 2)
    assert b.dimension == 5
    assert b.a[b.g_index(1), b.g_index(2)] == pytest.approx(math.sqrt(2))
    np.testing.assert_array_equal(b.adag, b.a.conj().T)


def test_basis_rejects_small_truncation():
    with pytest.raises(ValueError):
        build_site_basis(CavityParams(), 1)


@pytest.mark.parametrize("ell_max", [2, 3, 6])
def test_truncated_operator_algebra(ell_max):
    p = CavityParams.from_dimensionless(-0.6, delta_bar=0.4)
    b = build_site_basis(p, ell_max)
    comm = b.a @ b.adag - b.adag @ b.a
    # the top photon state of each atom sector is where truncation bites
    top = [b.g_index(ell_max), b.e_index(ell_max - 1)]
    below = np.ones(b.dimension, dtype=bool)
    below[top] = False
    np.testing.assert_allclose(comm[np.ix_(below, below)], np.eye(below.sum()), atol=1e-14)
    # exact zero, not merely small
    assert np.count_nonzero(b.h_jc @ b.L - b.L @ b.h_jc) == 0
    np.testing.assert_array_equal(b.h, b.h.conj().T)


@pytest.mark.parametrize("delta_bar", [0.0, 1.0, -1.0])
def test_blocks_reproduce_dressed_energies(delta_bar):
    p = CavityParams.from_dimensionless(-0.78, delta_bar)
    b = build_site_basis(p, 5)
    for ell in range(1, 6):
        idx = b.block(ell)
        w = np.linalg.eigvalsh(b.h[np.ix_(idx, idx)])
        expect = [lev.energy - p.mu * ell for lev in dressed_levels(p, ell)]
        np.testing.assert_allclose(w, expect, atol=1e-12)


def test_mott_state_is_lobe_ground_state():
    p = CavityParams.from_dimensionless(-0.78)
    b = build_site_basis(p, 5)
    w, v = np.linalg.eigh(b.h)
    assert abs(np.vdot(v[:, 0], b.mott_state)) == pytest.approx(1.0, abs=1e-12)
    assert b.mott_filling == 1


def test_default_truncation():
    assert default_ell_max(CavityParams.from_dimensionless(-0.78)) == 7
    assert default_ell_max(CavityParams.from_dimensionless(-1.5)) == 6
