"""Density matrices, trace-norm bookkeeping, and free-energy assembly.

Dense oracles build Gamma as an explicit sum of projectors and take
eigendecompositions of the resulting matrices, bypassing the package's
vectorized formulas.
"""

import numpy as np
import pytest

from conftest import random_density_matrix
from mks.cell import Cell, build_basis, l2_norm
from mks.density_matrix import (
    DensityMatrix,
    dense_operator,
    density,
    embed_dm,
    free_energy,
    mode_positions,
    perturb,
    project_dm,
    rotate,
    s11_distance_dense,
    s11_distance_orbital,
    s11_norm,
)
from mks.potentials import ExternalPotential, gaussian_wells, null_xc
from mks.smearing import Smearing, entropy


def dense_from_projectors(gamma):
    """Gamma = sum_i f_i |phi_i><phi_i| accumulated one projector at a time."""
    out = np.zeros((gamma.basis.size, gamma.basis.size), dtype=complex)
    for i in range(gamma.n_states):
        phi = gamma.orbitals[:, i]
        out += gamma.occupations[i] * np.outer(phi, np.conj(phi))
    return out


def s11_of_dense(matrix, basis):
    """Tr|A| + Tr(| |grad| A |grad| |) via two Hermitian eigensolves."""
    herm = 0.5 * (matrix + matrix.conj().T)
    first = float(np.abs(np.linalg.eigvalsh(herm)).sum())
    d = np.sqrt(basis.g_norm2)
    weighted = d[:, None] * herm * d[None, :]
    second = float(np.abs(np.linalg.eigvalsh(weighted)).sum())
    return first + second


@pytest.fixture(scope="module")
def small_basis():
    return build_basis(Cell(10.0), 5.0)


def test_density_matches_orbital_loop(small_basis):
    gamma = random_density_matrix(small_basis, 4, seed=0)
    rho = density(gamma)
    oracle = np.zeros(small_basis.fft_shape)
    for i in range(gamma.n_states):
        phi = small_basis.to_grid(gamma.orbitals[:, i]).values
        oracle += gamma.occupations[i] * np.abs(phi) ** 2
    np.testing.assert_allclose(rho.values, oracle, atol=1e-13)
    assert complex(rho.integral()).real == pytest.approx(gamma.trace(), rel=1e-12)
    assert rho.values.min() >= -1e-12


def test_dense_operator_matches_projector_sum(small_basis):
    gamma = random_density_matrix(small_basis, 3, seed=1)
    np.testing.assert_allclose(
        dense_operator(gamma), dense_from_projectors(gamma), atol=1e-13
    )


def test_s11_norm_matches_dense_eigensolve(small_basis):
    gamma = random_density_matrix(small_basis, 5, seed=2)
    oracle = s11_of_dense(dense_from_projectors(gamma), small_basis)
    assert s11_norm(gamma) == pytest.approx(oracle, rel=1e-12)


def test_s11_distance_dense_matches_oracle(small_basis):
    a = random_density_matrix(small_basis, 4, seed=3)
    b = random_density_matrix(small_basis, 3, seed=4)
    diff = dense_from_projectors(a) - dense_from_projectors(b)
    oracle = s11_of_dense(diff, small_basis)
    assert s11_distance_dense(a, b) == pytest.approx(oracle, rel=1e-12)
    # metric axioms on this pair
    assert s11_distance_dense(a, a) <= 1e-12
    assert s11_distance_dense(a, b) == pytest.approx(
        s11_distance_dense(b, a), rel=1e-12
    )


def test_s11_distance_dense_across_bases(small_basis):
    fine = build_basis(small_basis.cell, 20.0)
    a = random_density_matrix(small_basis, 3, seed=5)
    a_up = embed_dm(a, fine)
    # embedding is isometric, so the cross-basis distance to a fine state
    # equals the dense distance computed wholly on the fine basis
    b = random_density_matrix(fine, 3, seed=6)
    direct = s11_distance_dense(a, b)
    lifted = s11_distance_dense(a_up, b)
    assert direct == pytest.approx(lifted, rel=1e-12)
    assert s11_distance_dense(a, a_up) <= 1e-12


def test_s11_orbital_surrogate_properties(small_basis):
    a = random_density_matrix(small_basis, 4, seed=7)
    assert s11_distance_orbital(a, a) <= 1e-12
    # per-orbital phases are aligned away
    phases = np.exp(1j * np.linspace(0.3, 2.1, 4))
    b = DensityMatrix(small_basis, a.orbitals * phases, a.occupations)
    assert s11_distance_orbital(a, b) <= 1e-10
    c = random_density_matrix(small_basis, 4, seed=8, occupations=a.occupations)
    assert s11_distance_orbital(a, c) > 0.0


def test_embed_preserves_density_and_norm(small_basis):
    fine = build_basis(small_basis.cell, 20.0)
    gamma = random_density_matrix(small_basis, 3, seed=9)
    lifted = embed_dm(gamma, fine)
    assert lifted.trace() == pytest.approx(gamma.trace(), rel=1e-14)
    assert s11_norm(lifted) == pytest.approx(s11_norm(gamma), rel=1e-13)
    rho_c = density(gamma)
    rho_f = density(lifted)
    assert complex(rho_f.integral()).real == pytest.approx(
        complex(rho_c.integral()).real, rel=1e-12
    )


def test_mode_positions_identifies_submodes(small_basis):
    fine = build_basis(small_basis.cell, 20.0)
    pos = mode_positions(small_basis, fine)
    np.testing.assert_array_equal(fine.g_int[pos], small_basis.g_int)
    with pytest.raises(ValueError):
        mode_positions(fine, small_basis)
    other_cell = build_basis(Cell(9.0), 20.0)
    with pytest.raises(ValueError):
        mode_positions(small_basis, other_cell)


def test_project_dm_truncates_coefficients(small_basis):
    fine = build_basis(small_basis.cell, 20.0)
    gamma = random_density_matrix(fine, 3, seed=10)
    proj = project_dm(gamma, small_basis, orthonormalize=False)
    pos = mode_positions(small_basis, fine)
    np.testing.assert_allclose(proj.orbitals, gamma.orbitals[pos], atol=1e-14)
    np.testing.assert_allclose(proj.occupations, gamma.occupations)
    ortho = project_dm(gamma, small_basis, orthonormalize=True)
    overlap = ortho.orbitals.conj().T @ ortho.orbitals
    np.testing.assert_allclose(overlap, np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        project_dm(proj, fine)


def test_project_dm_annihilated_orbital(small_basis):
    fine = build_basis(small_basis.cell, 20.0)
    # occupied orbital supported only on modes outside the coarse ball
    outside = np.flatnonzero(fine.g_norm2 > 2.0 * small_basis.cutoff * 1.01)
    coeff = np.zeros((fine.size, 1), dtype=complex)
    coeff[outside[0], 0] = 1.0
    gamma = DensityMatrix(fine, coeff, np.array([1.0]))
    with pytest.raises(ValueError, match="annihilates"):
        project_dm(gamma, small_basis, orthonormalize=True)
    # the plain truncation drops the dead orbital: Pi Gamma Pi loses that
    # rank and the occupation weight becomes projection error
    proj = project_dm(gamma, small_basis, orthonormalize=False)
    assert proj.n_states == 0
    assert proj.trace() == pytest.approx(0.0, abs=1e-15)


def test_perturb_two_by_two_closed_form(small_basis):
    gamma = random_density_matrix(
        small_basis, 2, seed=11, occupations=[0.7, 0.3]
    )
    sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    eps = 0.1
    out = perturb(gamma, sigma_x, eps)
    expected = np.sort(0.5 + np.array([-1.0, 1.0]) * np.sqrt(0.04 + eps**2))
    np.testing.assert_allclose(np.sort(out.occupations), expected, atol=1e-13)
    assert out.trace() == pytest.approx(1.0, abs=1e-13)
    # the dense operators agree: Gamma + eps Psi in the orbital frame
    target = gamma.orbitals @ (
        np.diag([0.7, 0.3]).astype(complex) + eps * sigma_x
    ) @ gamma.orbitals.conj().T
    np.testing.assert_allclose(dense_operator(out), target, atol=1e-12)


def test_perturb_validates_tangent_shape(small_basis):
    gamma = random_density_matrix(small_basis, 3, seed=12)
    with pytest.raises(ValueError):
        perturb(gamma, np.eye(2), 0.1)


def test_rotate_preserves_spectrum(small_basis):
    gamma = random_density_matrix(small_basis, 3, seed=13)
    rng = np.random.default_rng(14)
    raw = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    a = raw - raw.conj().T
    rotated = rotate(gamma, a, 0.4)
    np.testing.assert_array_equal(rotated.occupations, gamma.occupations)
    eigs = np.linalg.eigvalsh(dense_operator(rotated))
    keep = eigs[np.argsort(-np.abs(eigs))[:3]]
    np.testing.assert_allclose(
        np.sort(keep), np.sort(gamma.occupations), atol=1e-12
    )


def test_density_matrix_validation(small_basis):
    rng = np.random.default_rng(15)
    raw = rng.standard_normal((small_basis.size, 2)) + 0j
    with pytest.raises(ValueError, match="orthonormal"):
        DensityMatrix(small_basis, raw, np.array([0.5, 0.5]))
    q, _ = np.linalg.qr(raw)
    with pytest.raises(ValueError):
        DensityMatrix(small_basis, q, np.array([0.5, 1.5]))
    with pytest.raises(ValueError):
        DensityMatrix(small_basis, q, np.array([0.5]))


def test_free_energy_breakdown_terms(small_basis):
    gamma = random_density_matrix(small_basis, 3, seed=16)
    sm = Smearing(12.0)
    external = gaussian_wells([[4.0]], [-1.3], [0.8])
    fe = free_energy(gamma, external, null_xc(), sm, hartree_on=True)
    assert fe.total == pytest.approx(
        fe.kinetic + fe.external + fe.hartree + fe.xc + fe.entropy, abs=1e-14
    )
    # kinetic oracle: explicit orbital loop over |G|^2/2 weights
    kin = 0.0
    for i in range(gamma.n_states):
        kin += gamma.occupations[i] * float(
            np.sum(0.5 * small_basis.g_norm2 * np.abs(gamma.orbitals[:, i]) ** 2)
        )
    assert fe.kinetic == pytest.approx(kin, rel=1e-13)
    rho = density(gamma)
    v = external.evaluate(small_basis)
    assert fe.external == pytest.approx(
        complex((v * rho).integral()).real, rel=1e-12
    )
    assert fe.entropy == pytest.approx(entropy(gamma.occupations, sm), rel=1e-14)
    assert fe.xc == 0.0
    off = free_energy(gamma, external, null_xc(), sm, hartree_on=False)
    assert off.hartree == 0.0
    assert fe.hartree > 0.0


def test_free_energy_gauge_invariant_under_orbital_phases(small_basis):
    gamma = random_density_matrix(small_basis, 3, seed=17)
    sm = Smearing(9.0)
    phases = np.exp(1j * np.array([0.4, -1.2, 2.6]))
    twin = DensityMatrix(small_basis, gamma.orbitals * phases, gamma.occupations)
    f1 = free_energy(gamma, ExternalPotential.zero(), null_xc(), sm)
    f2 = free_energy(twin, ExternalPotential.zero(), null_xc(), sm)
    assert f1.total == pytest.approx(f2.total, abs=1e-13)
    assert l2_norm(density(gamma) - density(twin)) <= 1e-12
