"""Finite-rank one-electron density matrices over a plane-wave basis.

A state is stored spectrally: orthonormal orbital coefficients (one column
per retained state) plus occupations in [0, 1].  All trace-class bookkeeping
(the S^{1,1} norm Tr|A| + Tr(| |grad| A |grad| |), free energies, entropy)
is evaluated through this representation; operator logarithms are never
formed.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .cell import GridFunction, PlaneWaveBasis
from .potentials import ExternalPotential, XcFunctional, assemble_effective
from .smearing import Smearing, entropy

__all__ = [
    "DensityMatrix",
    "density",
    "s11_norm",
    "s11_distance_dense",
    "s11_distance_orbital",
    "project_dm",
    "FreeEnergyBreakdown",
    "free_energy",
    "perturb",
    "rotate",
    "mode_positions",
    "embed_dm",
    "dense_operator",
]

OCC_TOL = 1e-12
ANNIHILATION_TOL = 1e-8


class DensityMatrix:
    """Gamma = sum_i f_i |phi_i><phi_i| with 0 <= f_i <= 1.

    Args:
        basis: plane-wave basis carrying the orbitals.
        orbitals: (basis.size, m) complex array, orthonormal columns.
        occupations: (m,) occupation numbers.
        eigenvalues: optional (m,) one-body eigenvalues lambda_i.
        validate: check orthonormality to 1e-10 (skip for deliberately
            non-orthonormal states such as truncated projections).
    """

    def __init__(self, basis: PlaneWaveBasis, orbitals, occupations,
                 eigenvalues=None, validate=True):
        orbitals = np.asarray(orbitals, dtype=complex)
        occupations = np.asarray(occupations, dtype=float)
        if orbitals.ndim != 2 or orbitals.shape[0] != basis.size:
            raise ValueError(
                f"orbitals must be ({basis.size}, m), got {orbitals.shape}"
            )
        if occupations.shape != (orbitals.shape[1],):
            raise ValueError("one occupation per orbital required")
        if occupations.size and (
            occupations.min() < -OCC_TOL or occupations.max() > 1.0 + OCC_TOL
        ):
            raise ValueError("occupations outside [0, 1] beyond 1e-12")
        if validate and orbitals.shape[1]:
            overlap = orbitals.conj().T @ orbitals
            drift = np.abs(overlap - np.eye(orbitals.shape[1])).max()
            if drift > 1e-10:
                raise ValueError(f"orbitals not orthonormal, drift {drift:.3e}")
        self.basis = basis
        self.orbitals = orbitals
        self.occupations = np.clip(occupations, 0.0, 1.0)
        self.eigenvalues = None if eigenvalues is None else np.asarray(
            eigenvalues, dtype=float
        )

    @property
    def n_states(self):
        return self.orbitals.shape[1]

    def trace(self) -> float:
        return float(self.occupations.sum())

    def orbitals_on_grid(self) -> np.ndarray:
        """Orbitals sampled on the FFT grid, shape (m, *fft_shape)."""
        out = np.empty((self.n_states,) + self.basis.fft_shape, dtype=complex)
        for i in range(self.n_states):
            out[i] = self.basis.to_grid(self.orbitals[:, i]).values
        return out

    def __repr__(self):
        return (
            f"DensityMatrix(states={self.n_states}, trace={self.trace():.6g}, "
            f"basis={self.basis!r})"
        )


def density(gamma: DensityMatrix) -> GridFunction:
    """rho(r) = sum_i f_i |phi_i(r)|^2 on the FFT grid (real, >= -1e-10)."""
    grid = gamma.orbitals_on_grid()
    rho = np.einsum("i,i...->...", gamma.occupations, np.abs(grid) ** 2)
    return GridFunction(gamma.basis, rho)


def s11_norm(gamma: DensityMatrix) -> float:
    """Sum_i |f_i| (1 + ||grad phi_i||^2), the S^{1,1} norm of Gamma."""
    grad2 = np.einsum(
        "g,gi->i", gamma.basis.g_norm2, np.abs(gamma.orbitals) ** 2
    )
    return float(np.sum(np.abs(gamma.occupations) * (1.0 + grad2)))


def mode_positions(sub: PlaneWaveBasis, sup: PlaneWaveBasis) -> np.ndarray:
    """Positions of sub's G-vectors inside sup's G-list (sub must nest)."""
    if sub.cell != sup.cell:
        raise ValueError("bases live on different cells")

    def keys(basis_int, shape):
        wrapped = np.mod(basis_int, shape)
        return np.ravel_multi_index(tuple(wrapped.T), shape)

    # keyspace large enough for both mode sets, so wraparound cannot collide
    max_coord = max(int(np.abs(sup.g_int).max()), int(np.abs(sub.g_int).max()))
    shape = tuple(2 * max_coord + 1 for _ in range(sup.cell.dimension))
    sup_keys = keys(sup.g_int, shape)
    sub_keys = keys(sub.g_int, shape)
    order = np.argsort(sup_keys)
    pos = np.searchsorted(sup_keys, sub_keys, sorter=order)
    if pos.max(initial=-1) >= sup.size or np.any(
        sup_keys[order[pos]] != sub_keys
    ):
        raise ValueError("sub basis is not contained in the super basis")
    return order[pos]


def embed_dm(gamma: DensityMatrix, target: PlaneWaveBasis) -> DensityMatrix:
    """Express Gamma on a larger basis (zero-padding the new modes)."""
    pos = mode_positions(gamma.basis, target)
    orbitals = np.zeros((target.size, gamma.n_states), dtype=complex)
    orbitals[pos] = gamma.orbitals
    return DensityMatrix(
        target, orbitals, gamma.occupations, gamma.eigenvalues, validate=False
    )


def dense_operator(gamma: DensityMatrix) -> np.ndarray:
    """Gamma as a dense (basis.size, basis.size) matrix; small bases only."""
    weighted = gamma.orbitals * gamma.occupations
    return weighted @ gamma.orbitals.conj().T


def s11_distance_dense(a: DensityMatrix, b: DensityMatrix,
                       common: PlaneWaveBasis | None = None) -> float:
    """S^{1,1} distance via eigendecomposition of the dense difference.

    Both states are embedded in a common basis (the larger of the two by
    default); Tr|A| and Tr(| |grad| A |grad| |) are the absolute eigenvalue
    sums of the Hermitian difference and of its |G|-weighted conjugation.
    """
    if common is None:
        common = a.basis if a.basis.cutoff >= b.basis.cutoff else b.basis
    a_emb = a if a.basis == common else embed_dm(a, common)
    b_emb = b if b.basis == common else embed_dm(b, common)
    diff = dense_operator(a_emb) - dense_operator(b_emb)
    diff = 0.5 * (diff + diff.conj().T)
    tr_abs = float(np.abs(np.linalg.eigvalsh(diff)).sum())
    scale = np.sqrt(common.g_norm2)
    weighted = diff * scale[:, None] * scale[None, :]
    tr_grad = float(np.abs(np.linalg.eigvalsh(weighted)).sum())
    return tr_abs + tr_grad


def s11_distance_orbital(a: DensityMatrix, b: DensityMatrix) -> float:
    """Occupation-weighted orbital surrogate sum_i f_i ||phi_i^a - phi_i^b||_H1^2.

    Orbitals are matched by index and phase-aligned by overlap maximization;
    occupations are taken from ``a``.  Cheap stand-in for the dense distance
    when the dense eigendecomposition is out of reach.
    """
    if a.basis == b.basis:
        pa, pb = a.orbitals, b.orbitals
        g2 = a.basis.g_norm2
    else:
        common = a.basis if a.basis.cutoff >= b.basis.cutoff else b.basis
        pa = embed_dm(a, common).orbitals
        pb = embed_dm(b, common).orbitals
        g2 = common.g_norm2
    m = min(pa.shape[1], pb.shape[1])
    total = 0.0
    for i in range(m):
        ov = np.vdot(pa[:, i], pb[:, i])
        phase = ov / abs(ov) if abs(ov) > 1e-14 else 1.0
        d = pa[:, i] - np.conj(phase) * pb[:, i]
        total += a.occupations[i] * float(
            np.sum((1.0 + g2) * np.abs(d) ** 2)
        )
    return total


def project_dm(gamma: DensityMatrix, target: PlaneWaveBasis,
               orthonormalize=False) -> DensityMatrix:
    """Truncate every orbital to the target basis, keeping occupations.

    With ``orthonormalize=False`` this is Pi_n Gamma = sum f_i
    |pi_n phi_i><pi_n phi_i| (truncated orbitals are not re-normalized, for
    error fidelity); orbitals annihilated by the truncation are dropped, so
    their occupation weight shows up as pure projection error.  With
    ``orthonormalize=True`` the truncated orbitals are symmetrically
    (Loewdin) re-orthonormalized, and annihilation raises because the
    orthonormalization is rank-deficient.
    """
    if target.cutoff > gamma.basis.cutoff:
        raise ValueError("projection target must be the coarser basis")
    pos = mode_positions(target, gamma.basis)
    truncated = gamma.orbitals[pos]
    norms = np.linalg.norm(truncated, axis=0)
    if orthonormalize:
        occupied = gamma.occupations > OCC_TOL
        if np.any(norms[occupied] <= ANNIHILATION_TOL):
            worst = int(np.argmin(np.where(occupied, norms, np.inf)))
            raise ValueError(
                f"projection annihilates occupied orbital {worst} "
                f"(norm {norms[worst]:.3e})"
            )
        overlap = truncated.conj().T @ truncated
        vals, vecs = np.linalg.eigh(overlap)
        if vals.min() <= ANNIHILATION_TOL:
            raise ValueError("truncated orbitals are numerically dependent")
        inv_sqrt = (vecs * (1.0 / np.sqrt(vals))) @ vecs.conj().T
        truncated = truncated @ inv_sqrt
        return DensityMatrix(target, truncated, gamma.occupations,
                             gamma.eigenvalues, validate=True)
    keep = norms > ANNIHILATION_TOL
    eig = gamma.eigenvalues[keep] if gamma.eigenvalues is not None else None
    return DensityMatrix(target, truncated[:, keep], gamma.occupations[keep],
                         eig, validate=False)


class FreeEnergyBreakdown:
    """Free-energy terms; ``total`` is their exact sum."""

    __slots__ = ("kinetic", "external", "hartree", "xc", "entropy", "total")

    def __init__(self, kinetic, external, hartree, xc, entropy):
        self.kinetic = float(kinetic)
        self.external = float(external)
        self.hartree = float(hartree)
        self.xc = float(xc)
        self.entropy = float(entropy)
        self.total = self.kinetic + self.external + self.hartree + self.xc + self.entropy

    def as_dict(self):
        return {
            "kinetic": self.kinetic,
            "external": self.external,
            "hartree": self.hartree,
            "xc": self.xc,
            "entropy": self.entropy,
            "total": self.total,
        }

    def __repr__(self):
        parts = ", ".join(f"{k}={v:.10g}" for k, v in self.as_dict().items())
        return f"FreeEnergyBreakdown({parts})"


def free_energy(gamma: DensityMatrix, external: ExternalPotential,
                xc: XcFunctional, smearing: Smearing,
                hartree_on=True) -> FreeEnergyBreakdown:
    """Mermin free energy of a state.

    F = Tr(-1/2 Laplacian Gamma) + int v_ext rho + Hartree + int e_xc(rho)
      + beta^-1 sum_i [f_i ln f_i + (1 - f_i) ln(1 - f_i)],
    the entropy evaluated through occupations only.
    """
    kinetic = float(
        np.einsum(
            "i,g,gi->",
            gamma.occupations,
            gamma.basis.kinetic(),
            np.abs(gamma.orbitals) ** 2,
        )
    )
    rho = density(gamma)
    terms = assemble_effective(rho, external, xc, hartree_on=hartree_on)
    s = entropy(gamma.occupations, smearing)
    return FreeEnergyBreakdown(kinetic, terms.e_ext, terms.e_hartree,
                               terms.e_xc, s)


def perturb(gamma: DensityMatrix, tangent, eps: float) -> DensityMatrix:
    """State Gamma + eps Psi for a Hermitian tangent in the orbital frame.

    Diagonalizes diag(f) + eps Psi and rotates the orbitals accordingly; the
    caller is responsible for keeping the perturbed spectrum inside [0, 1].
    """
    tangent = np.asarray(tangent, dtype=complex)
    m = gamma.n_states
    if tangent.shape != (m, m):
        raise ValueError(f"tangent must be ({m}, {m})")
    matrix = np.diag(gamma.occupations.astype(complex)) + eps * tangent
    occ, vecs = np.linalg.eigh(matrix)
    return DensityMatrix(gamma.basis, gamma.orbitals @ vecs, occ)


def rotate(gamma: DensityMatrix, antihermitian, eps: float) -> DensityMatrix:
    """Spectrum-preserving rotation exp(eps A) Gamma exp(-eps A)."""
    a = np.asarray(antihermitian, dtype=complex)
    u = scipy.linalg.expm(eps * a)
    return DensityMatrix(
        gamma.basis, gamma.orbitals @ u, gamma.occupations, gamma.eigenvalues
    )
