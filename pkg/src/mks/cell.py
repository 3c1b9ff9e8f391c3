"""Periodic cells, plane-wave bases, and FFT-grid transforms.

Conventions used throughout the package:

* lattice vectors are the rows of ``Cell.lattice``; reciprocal vectors are
  the rows of ``Cell.reciprocal`` and satisfy a_i . b_j = 2 pi delta_ij,
* a basis function is e_G(r) = |Omega|^(-1/2) exp(i G.r), so coefficient
  vectors are orthonormal and Parseval holds without extra volume factors,
* real-space samples live on the uniform FFT grid r_j = sum_k (j_k/N_k) a_k
  and integrals are FFT-grid trapezoid sums, exact for represented modes.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import next_fast_len

__all__ = [
    "Cell",
    "PlaneWaveBasis",
    "GridFunction",
    "build_basis",
    "l2_norm",
    "h1_norm",
    "l2_inner",
    "transfer",
    "project",
]


class Cell:
    """Periodic simulation cell in 1, 2, or 3 dimensions.

    Args:
        lattice: (d, d) array whose rows are the lattice vectors (bohr).
            A scalar or length-d sequence is promoted to a diagonal lattice.
    """

    def __init__(self, lattice):
        lattice = np.asarray(lattice, dtype=float)
        if lattice.ndim == 0:
            lattice = lattice.reshape(1, 1)
        elif lattice.ndim == 1:
            lattice = np.diag(lattice)
        if lattice.ndim != 2 or lattice.shape[0] != lattice.shape[1]:
            raise ValueError(f"lattice must be square, got shape {lattice.shape}")
        d = lattice.shape[0]
        if d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2, or 3, got {d}")
        det = np.linalg.det(lattice)
        if abs(det) < 1e-14:
            raise ValueError("lattice vectors are linearly dependent")
        self.lattice = lattice
        self.dimension = d
        self.volume = abs(det)
        # rows b_i with a_i . b_j = 2 pi delta_ij
        self.reciprocal = 2.0 * np.pi * np.linalg.inv(lattice).T

    def __eq__(self, other):
        return (
            isinstance(other, Cell)
            and self.dimension == other.dimension
            and np.array_equal(self.lattice, other.lattice)
        )

    def __hash__(self):
        return hash((self.dimension, self.lattice.tobytes()))

    def __repr__(self):
        return f"Cell(dimension={self.dimension}, volume={self.volume:.6g})"


class PlaneWaveBasis:
    """Plane-wave set {e_G : |G|^2 <= 2 E_c} with its aliasing-free FFT grid.

    G-vectors are enumerated in lexicographic order of their integer
    coordinates, which fixes a deterministic coefficient layout.  The FFT
    grid has at least 4*max|n_k|+1 points per dimension (rounded up to a
    fast transform length) so products of two basis functions are exactly
    representable on the grid.

    Attributes:
        cell: the periodic cell.
        cutoff: kinetic-energy cutoff E_c (hartree).
        g_int: (npw, d) integer coordinates of the retained G-vectors.
        g_cart: (npw, d) Cartesian G-vectors.
        g_norm2: (npw,) squared norms |G|^2.
        fft_shape: per-dimension FFT grid sizes.
    """

    def __init__(self, cell: Cell, cutoff: float):
        if cutoff <= 0:
            raise ValueError(f"cutoff must be positive, got {cutoff}")
        self.cell = cell
        self.cutoff = float(cutoff)
        d = cell.dimension

        radius2 = 2.0 * self.cutoff
        # |n_k| <= |G| ||a_k|| / (2 pi) for any lattice, so this box is safe
        a_norms = np.linalg.norm(cell.lattice, axis=1)
        nmax = np.floor(np.sqrt(radius2) * a_norms / (2.0 * np.pi) + 1e-12).astype(int)
        ranges = [np.arange(-m, m + 1) for m in nmax]
        grids = np.meshgrid(*ranges, indexing="ij")
        candidates = np.stack([g.ravel() for g in grids], axis=1)
        cart = candidates @ cell.reciprocal
        norm2 = np.einsum("ij,ij->i", cart, cart)
        keep = norm2 <= radius2 * (1.0 + 1e-12)
        g_int = candidates[keep]
        order = np.lexsort(tuple(g_int[:, k] for k in range(d - 1, -1, -1)))
        self.g_int = np.ascontiguousarray(g_int[order])
        self.g_cart = self.g_int @ cell.reciprocal
        self.g_norm2 = np.einsum("ij,ij->i", self.g_cart, self.g_cart)
        self.size = self.g_int.shape[0]

        maxcoord = np.abs(self.g_int).max(axis=0)
        # Orbital products (densities) carry modes out to twice the basis
        # radius; the grid holds all of them injectively, which keeps the
        # Hartree and external operators exactly Galerkin and the free
        # energy variational across nested cutoffs.
        self.fft_shape = tuple(int(next_fast_len(int(4 * m + 1))) for m in maxcoord)
        self.n_grid = int(np.prod(self.fft_shape))
        # scatter/gather index per dimension, wrapped onto the grid
        self._grid_index = tuple(
            np.mod(self.g_int[:, k], self.fft_shape[k]) for k in range(d)
        )
        self.quadrature_weight = cell.volume / self.n_grid
        self._grid_g2 = None
        self._grid_modes = None

    # -- full-grid mode bookkeeping -------------------------------------

    @property
    def grid_modes(self):
        """Signed integer coordinates of every FFT-grid mode, shape (*fft_shape, d)."""
        if self._grid_modes is None:
            axes = [
                np.rint(np.fft.fftfreq(n) * n).astype(int) for n in self.fft_shape
            ]
            mesh = np.meshgrid(*axes, indexing="ij")
            self._grid_modes = np.stack(mesh, axis=-1)
        return self._grid_modes

    @property
    def grid_g2(self):
        """|G|^2 for every FFT-grid mode, shape fft_shape."""
        if self._grid_g2 is None:
            cart = self.grid_modes @ self.cell.reciprocal
            self._grid_g2 = np.einsum("...i,...i->...", cart, cart)
        return self._grid_g2

    def grid_points(self):
        """Cartesian coordinates of the FFT grid, shape (*fft_shape, d)."""
        fractions = [np.arange(n) / n for n in self.fft_shape]
        mesh = np.meshgrid(*fractions, indexing="ij")
        frac = np.stack(mesh, axis=-1)
        return frac @ self.cell.lattice

    # -- transforms ------------------------------------------------------

    def to_grid(self, coefficients) -> "GridFunction":
        """Synthesize ``sum_G c_G e_G`` on the FFT grid.

        Returns a GridFunction; the transform is unitary with respect to the
        coefficient l2 norm and the grid quadrature.
        """
        coefficients = np.asarray(coefficients)
        if coefficients.shape != (self.size,):
            raise ValueError(
                f"expected {self.size} coefficients, got shape {coefficients.shape}"
            )
        spec = np.zeros(self.fft_shape, dtype=complex)
        spec[self._grid_index] = coefficients
        values = np.fft.ifftn(spec) * (self.n_grid / np.sqrt(self.cell.volume))
        return GridFunction(self, values)

    def from_grid(self, values) -> np.ndarray:
        """Extract basis coefficients from grid samples (inverse of to_grid
        on the represented subspace)."""
        if isinstance(values, GridFunction):
            if values.basis is not self and values.basis != self:
                raise ValueError("grid function belongs to a different basis")
            values = values.values
        values = np.asarray(values)
        if values.shape != self.fft_shape:
            raise ValueError(
                f"expected grid shape {self.fft_shape}, got {values.shape}"
            )
        spec = np.fft.fftn(values) * (np.sqrt(self.cell.volume) / self.n_grid)
        return spec[self._grid_index]

    def grid_spectrum(self, values) -> np.ndarray:
        """Orthonormal-convention coefficients of every FFT-grid mode."""
        values = np.asarray(values)
        return np.fft.fftn(values) * (np.sqrt(self.cell.volume) / self.n_grid)

    def kinetic(self) -> np.ndarray:
        """Diagonal of -Laplacian/2 in the basis, i.e. |G|^2 / 2."""
        return 0.5 * self.g_norm2

    def __eq__(self, other):
        return (
            isinstance(other, PlaneWaveBasis)
            and self.cell == other.cell
            and self.cutoff == other.cutoff
        )

    def __hash__(self):
        return hash((self.cell, self.cutoff))

    def __repr__(self):
        return (
            f"PlaneWaveBasis(cutoff={self.cutoff:.6g}, size={self.size}, "
            f"fft_shape={self.fft_shape})"
        )


def build_basis(cell: Cell, cutoff: float) -> PlaneWaveBasis:
    """Construct the plane-wave basis with |G|^2/2 <= cutoff."""
    return PlaneWaveBasis(cell, cutoff)


class GridFunction:
    """Samples of a periodic function on a basis' FFT grid."""

    __slots__ = ("basis", "values")

    def __init__(self, basis: PlaneWaveBasis, values):
        values = np.asarray(values)
        if values.shape != basis.fft_shape:
            raise ValueError(
                f"values shape {values.shape} does not match grid {basis.fft_shape}"
            )
        self.basis = basis
        self.values = values

    def integral(self) -> complex:
        """Trapezoid integral over the cell."""
        total = self.values.sum() * self.basis.quadrature_weight
        return total

    def __add__(self, other):
        self._check(other)
        return GridFunction(self.basis, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return GridFunction(self.basis, self.values - other.values)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.basis, self.values * other.values)
        return GridFunction(self.basis, self.values * other)

    __rmul__ = __mul__

    def _check(self, other):
        if not isinstance(other, GridFunction) or other.basis != self.basis:
            raise ValueError("operands live on different grids")

    def __repr__(self):
        return f"GridFunction(shape={self.values.shape}, basis={self.basis!r})"


def l2_norm(u: GridFunction) -> float:
    """L2 norm over the cell (grid quadrature, = Parseval over grid modes)."""
    w = u.basis.quadrature_weight
    return float(np.sqrt(w * np.vdot(u.values, u.values).real))


def l2_inner(u: GridFunction, v: GridFunction) -> complex:
    """L2 inner product <u, v> with the conjugate on the first slot."""
    u._check(v)
    return complex(u.basis.quadrature_weight * np.vdot(u.values, v.values))


def h1_norm(u: GridFunction) -> float:
    """H1 norm: sum over grid modes of (1 + |G|^2) |u_G|^2, square-rooted."""
    spec = u.basis.grid_spectrum(u.values)
    total = np.sum((1.0 + u.basis.grid_g2) * np.abs(spec) ** 2)
    return float(np.sqrt(total))


def transfer(u: GridFunction, target: PlaneWaveBasis) -> GridFunction:
    """Re-express ``u`` on a finer basis' grid, preserving every mode.

    The target grid must contain the source grid modes (componentwise
    fft_shape >= source), which holds whenever target.cutoff >= source cutoff
    on the same cell.
    """
    src = u.basis
    if target.cell != src.cell:
        raise ValueError("transfer requires identical cells")
    if any(nt < ns for nt, ns in zip(target.fft_shape, src.fft_shape)):
        raise ValueError("target grid cannot represent all source modes")
    if target.fft_shape == src.fft_shape:
        return GridFunction(target, u.values.copy())
    spec = np.fft.fftn(u.values) / src.n_grid
    out = np.zeros(target.fft_shape, dtype=complex)
    modes = src.grid_modes.reshape(-1, src.cell.dimension)
    src_idx = tuple(np.mod(modes[:, k], src.fft_shape[k]) for k in range(src.cell.dimension))
    tgt_idx = tuple(np.mod(modes[:, k], target.fft_shape[k]) for k in range(src.cell.dimension))
    out[tgt_idx] = spec[src_idx]
    return GridFunction(target, np.fft.ifftn(out) * target.n_grid)


def project(u: GridFunction, target: PlaneWaveBasis) -> GridFunction:
    """Fourier truncation onto the target basis ball.

    Zeroes every coefficient with |G|^2 > 2 E_c(target) and returns the
    result on the target grid.  This is simultaneously the L2- and the
    H1-orthogonal projection onto the target space.
    """
    src = u.basis
    if target.cell != src.cell:
        raise ValueError("projection requires identical cells")
    if target.cutoff > src.cutoff:
        raise ValueError(
            f"target cutoff {target.cutoff} exceeds source cutoff {src.cutoff}"
        )
    spec = np.fft.fftn(u.values) / src.n_grid
    d = src.cell.dimension
    src_idx = tuple(np.mod(target.g_int[:, k], src.fft_shape[k]) for k in range(d))
    out = np.zeros(target.fft_shape, dtype=complex)
    out[target._grid_index] = spec[src_idx]
    return GridFunction(target, np.fft.ifftn(out) * target.n_grid)
