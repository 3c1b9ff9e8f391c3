"""External potentials, exchange-correlation models, and the Hartree term.

The Hartree kernel is the periodic Coulomb multiplier 4 pi / |G|^2 with the
G = 0 component removed (neutralizing background), used in every dimension
as a model choice.  Exchange-correlation enters through a local functional
t -> e_xc(t) with three derivatives and explicit growth constants, so the
assumptions on the energy can be audited numerically.
"""

from __future__ import annotations

import numpy as np

from .cell import GridFunction, PlaneWaveBasis

__all__ = [
    "ExternalPotential",
    "gaussian_wells",
    "cosine_series",
    "XcFunctional",
    "dirac_exchange",
    "dirac_corr",
    "power_law_xc",
    "null_xc",
    "audit_xc",
    "hartree",
    "xc_eval",
    "EffectivePotentialTerms",
    "assemble_effective",
]

DIRAC_COEFF = 0.738558766  # (3/4) (3/pi)^(1/3)
DENSITY_FLOOR = 1e-12


class ExternalPotential:
    """Smooth periodic external potential, synthesized spectrally.

    Two kinds are supported:

    * ``gaussian_wells``: periodized Gaussians sum_c depth_c
      exp(-|r - c|^2 / (2 w_c^2)), with analytically known Fourier
      coefficients (used both for synthesis and for projection-tail
      oracles),
    * ``cosine_series``: sum_j amp_j cos(G_j . r) for integer modes n_j.

    The zero potential is ``ExternalPotential.zero()``.
    """

    def __init__(self, kind, centers=None, depths=None, widths=None,
                 modes=None, amplitudes=None):
        if kind not in ("gaussian_wells", "cosine_series", "zero"):
            raise ValueError(f"unknown external potential kind {kind!r}")
        self.kind = kind
        if kind == "gaussian_wells":
            self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
            self.depths = np.atleast_1d(np.asarray(depths, dtype=float))
            self.widths = np.atleast_1d(np.asarray(widths, dtype=float))
            if not (len(self.centers) == len(self.depths) == len(self.widths)):
                raise ValueError("centers, depths, widths must have equal length")
            if np.any(self.widths <= 0):
                raise ValueError("gaussian widths must be positive")
        elif kind == "cosine_series":
            self.modes = np.atleast_2d(np.asarray(modes, dtype=int))
            self.amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
            if len(self.modes) != len(self.amplitudes):
                raise ValueError("modes and amplitudes must have equal length")
        self._cache = {}

    @classmethod
    def zero(cls):
        return cls("zero")

    def fourier_coefficient(self, g_cart, cell):
        """Plain Fourier-series coefficient(s) of the potential at G.

        ``g_cart`` has shape (..., d); the convention is
        v(r) = sum_G vhat(G) exp(i G . r).
        """
        g_cart = np.asarray(g_cart, dtype=float)
        if self.kind == "zero":
            return np.zeros(g_cart.shape[:-1], dtype=complex)
        if self.kind == "gaussian_wells":
            d = cell.dimension
            g2 = np.einsum("...i,...i->...", g_cart, g_cart)
            out = np.zeros(g_cart.shape[:-1], dtype=complex)
            for center, depth, width in zip(self.centers, self.depths, self.widths):
                amp = depth * (2.0 * np.pi * width**2) ** (d / 2.0) / cell.volume
                phase = np.exp(-1j * (g_cart @ center))
                out += amp * np.exp(-0.5 * g2 * width**2) * phase
            return out
        raise NotImplementedError(
            "analytic coefficients are only defined per retained mode for "
            "cosine_series; synthesize on a grid instead"
        )

    def evaluate(self, basis: PlaneWaveBasis) -> GridFunction:
        """Sample the potential on the basis' FFT grid."""
        cached = self._cache.get(basis)
        if cached is not None:
            return cached
        if self.kind == "zero":
            values = np.zeros(basis.fft_shape)
        elif self.kind == "gaussian_wells":
            spec = self.fourier_coefficient(
                basis.grid_modes @ basis.cell.reciprocal, basis.cell
            )
            values = np.fft.ifftn(spec) * basis.n_grid
            values = values.real
        else:  # cosine_series
            spec = np.zeros(basis.fft_shape, dtype=complex)
            for mode, amp in zip(self.modes, self.amplitudes):
                for sign in (1, -1):
                    idx = tuple(
                        int((sign * m) % n) for m, n in zip(mode, basis.fft_shape)
                    )
                    spec[idx] += 0.5 * amp
            values = (np.fft.ifftn(spec) * basis.n_grid).real
        out = GridFunction(basis, values)
        self._cache[basis] = out
        return out


def gaussian_wells(centers, depths, widths) -> ExternalPotential:
    return ExternalPotential(
        "gaussian_wells", centers=centers, depths=depths, widths=widths
    )


def cosine_series(modes, amplitudes) -> ExternalPotential:
    return ExternalPotential("cosine_series", modes=modes, amplitudes=amplitudes)


class XcFunctional:
    """Local density functional with three derivatives and growth constants.

    The stored constants assert
        |e(t)|            <= c0 (1 + t^(4/3)),
        |e'(t)| + |t e''(t)|   <= c1 (1 + t^p1),
        |e''(t)| + |t e'''(t)| <= c2 (1 + t^(p2-1)),
    for t >= 0, with p1 in [0, 2] and p2 in (0, 1].  Densities are clamped
    at DENSITY_FLOOR before fractional powers are taken.
    """

    def __init__(self, name, e, d1, d2, d3, c0, c1, c2, p1, p2):
        self.name = name
        self._e, self._d1, self._d2, self._d3 = e, d1, d2, d3
        self.c0, self.c1, self.c2 = float(c0), float(c1), float(c2)
        self.p1, self.p2 = float(p1), float(p2)
        if not 0.0 <= self.p1 <= 2.0:
            raise ValueError(f"p1 must lie in [0, 2], got {self.p1}")
        if not 0.0 < self.p2 <= 1.0:
            raise ValueError(f"p2 must lie in (0, 1], got {self.p2}")

    @property
    def is_null(self):
        return self.name == "none"

    def _clamp(self, t):
        return np.maximum(np.asarray(t, dtype=float), DENSITY_FLOOR)

    def e(self, t):
        return self._e(self._clamp(t))

    def d1(self, t):
        return self._d1(self._clamp(t))

    def d2(self, t):
        return self._d2(self._clamp(t))

    def d3(self, t):
        return self._d3(self._clamp(t))

    def __repr__(self):
        return f"XcFunctional({self.name!r})"


def power_law_xc(coefficient, power=4.0 / 3.0, name=None) -> XcFunctional:
    """e(t) = -c t^p with 1 < p <= 4/3 and c > 0."""
    c, p = float(coefficient), float(power)
    if not 1.0 < p <= 4.0 / 3.0:
        raise ValueError(f"power must lie in (1, 4/3], got {p}")
    if c <= 0:
        raise ValueError("coefficient must be positive")
    return XcFunctional(
        name or f"power_law({c:g},{p:g})",
        e=lambda t: -c * t**p,
        d1=lambda t: -c * p * t ** (p - 1.0),
        d2=lambda t: -c * p * (p - 1.0) * t ** (p - 2.0),
        d3=lambda t: -c * p * (p - 1.0) * (p - 2.0) * t ** (p - 3.0),
        c0=c,
        c1=c * p * p,
        c2=c * p * (p - 1.0) * (1.0 + abs(p - 2.0)),
        p1=p - 1.0,
        p2=p - 1.0,
    )


def dirac_exchange() -> XcFunctional:
    """Exchange-only model e(t) = -c_D t^(4/3)."""
    xc = power_law_xc(DIRAC_COEFF, 4.0 / 3.0, name="dirac")
    return xc


# parameters of the optional smooth correlation-like term -a t^2 / (1 + b t)
_CORR_A = 0.05
_CORR_B = 1.0


def dirac_corr() -> XcFunctional:
    """Dirac exchange plus a smooth correlation-like term -a t^2/(1+b t)."""
    base = dirac_exchange()
    a, b = _CORR_A, _CORR_B

    def ec(t):
        return -a * t**2 / (1.0 + b * t)

    def ec1(t):
        return -a * t * (2.0 + b * t) / (1.0 + b * t) ** 2

    def ec2(t):
        return -2.0 * a / (1.0 + b * t) ** 3

    def ec3(t):
        return 6.0 * a * b / (1.0 + b * t) ** 4

    return XcFunctional(
        "dirac+corr",
        e=lambda t: base._e(t) + ec(t),
        d1=lambda t: base._d1(t) + ec1(t),
        d2=lambda t: base._d2(t) + ec2(t),
        d3=lambda t: base._d3(t) + ec3(t),
        # sup_t |ec'| <= a/b and sup_t |t ec''| <= 8a/(27 b); |ec''| <= 2a
        # and |t ec'''| <= 6a max u/(1+u)^4 <= 0.64 a
        c0=base.c0 + a / b,
        c1=base.c1 + a / b * 1.3,
        c2=base.c2 + 2.7 * a,
        p1=base.p1,
        p2=base.p2,
    )


def null_xc() -> XcFunctional:
    zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))
    return XcFunctional("none", zero, zero, zero, zero, 0.0, 0.0, 0.0, 0.0, 1.0)


def audit_xc(xc: XcFunctional, n_samples=513, fd_rtol=1e-6):
    """Check the stored growth constants and the first derivative numerically.

    Samples a log grid t in [1e-4, 1e4] for the three growth bounds and
    compares d1 against centered finite differences of e on [0.01, 10].
    Returns a report dict; ``passed`` is False on any violation.
    """
    t = np.logspace(-4, 4, n_samples)
    slack = 1.0 + 1e-9  # roundoff allowance for bounds that are tight at infinity

    b0 = np.abs(xc.e(t)) / (xc.c0 * (1.0 + t ** (4.0 / 3.0))) if xc.c0 else None
    b1 = (
        (np.abs(xc.d1(t)) + np.abs(t * xc.d2(t))) / (xc.c1 * (1.0 + t**xc.p1))
        if xc.c1
        else None
    )
    b2 = (
        (np.abs(xc.d2(t)) + np.abs(t * xc.d3(t)))
        / (xc.c2 * (1.0 + t ** (xc.p2 - 1.0)))
        if xc.c2
        else None
    )
    if xc.is_null:
        b0 = b1 = b2 = np.zeros(1)

    tf = np.logspace(np.log10(0.01), 1.0, 101)
    h = 3e-5 * tf
    fd = (xc.e(tf + h) - xc.e(tf - h)) / (2.0 * h)
    d1 = xc.d1(tf)
    denom = np.maximum(np.abs(d1), 1e-30)
    fd_err = float(np.max(np.abs(fd - d1) / denom)) if not xc.is_null else 0.0

    ratios = {
        "a2_max_ratio": float(np.max(b0)) if b0 is not None else float("nan"),
        "a3_first_max_ratio": float(np.max(b1)) if b1 is not None else float("nan"),
        "a3_second_max_ratio": float(np.max(b2)) if b2 is not None else float("nan"),
    }
    finite = [v for v in ratios.values() if np.isfinite(v)]
    passed = all(v <= slack for v in finite) and fd_err <= fd_rtol
    return {
        "name": xc.name,
        "constants": {
            "c0": xc.c0,
            "c1": xc.c1,
            "c2": xc.c2,
            "p1": xc.p1,
            "p2": xc.p2,
        },
        **ratios,
        "d1_fd_max_rel_err": fd_err,
        "passed": bool(passed),
    }


def _coulomb_multiplier(basis: PlaneWaveBasis):
    g2 = basis.grid_g2
    mult = np.zeros_like(g2)
    np.divide(4.0 * np.pi, g2, out=mult, where=g2 > 1e-14)
    return mult


def hartree(rho: GridFunction):
    """Hartree potential and energy of a real density.

    Returns (v_h, e_h) with vhat_h(G) = 4 pi rhohat(G) / |G|^2, the G = 0
    component dropped, and e_h = (1/2) sum_G khat(G) |rhohat(G)|^2 >= 0 in
    the orthonormal-coefficient convention.
    """
    basis = rho.basis
    values = rho.values
    if np.iscomplexobj(values):
        if np.abs(values.imag).max() > 1e-10:
            raise ValueError("density has a non-negligible imaginary part")
        values = values.real
    mult = _coulomb_multiplier(basis)
    plain = np.fft.fftn(values) / basis.n_grid
    v_values = np.fft.ifftn(mult * plain) * basis.n_grid
    v_h = GridFunction(basis, v_values.real)
    e_h = 0.5 * basis.cell.volume * float(np.sum(mult * np.abs(plain) ** 2))
    return v_h, e_h


def xc_eval(rho: GridFunction, xc: XcFunctional):
    """Pointwise exchange-correlation potential and energy.

    Returns (v_xc, e_xc) with v_xc = e'(rho) and e_xc = integral of e(rho).
    """
    basis = rho.basis
    values = rho.values
    if np.iscomplexobj(values):
        values = values.real
    if xc.is_null:
        return GridFunction(basis, np.zeros(basis.fft_shape)), 0.0
    v = GridFunction(basis, xc.d1(values))
    e = float(np.sum(xc.e(values)) * basis.quadrature_weight)
    return v, e


class EffectivePotentialTerms:
    """Assembled one-body potential and its energy contributions."""

    def __init__(self, v_ext, v_hartree, v_xc, v_eff, e_ext, e_hartree, e_xc):
        self.v_ext = v_ext
        self.v_hartree = v_hartree
        self.v_xc = v_xc
        self.v_eff = v_eff
        self.e_ext = e_ext
        self.e_hartree = e_hartree
        self.e_xc = e_xc


def assemble_effective(rho: GridFunction, external: ExternalPotential,
                       xc: XcFunctional, hartree_on=True) -> EffectivePotentialTerms:
    """v_eff = v_ext + v_H(rho) + v_xc(rho) with per-term energies."""
    basis = rho.basis
    v_ext = external.evaluate(basis)
    rho_real = rho.values.real if np.iscomplexobj(rho.values) else rho.values
    e_ext = float(np.sum(v_ext.values * rho_real) * basis.quadrature_weight)
    if hartree_on:
        v_h, e_h = hartree(rho)
    else:
        v_h, e_h = GridFunction(basis, np.zeros(basis.fft_shape)), 0.0
    v_xc, e_xc = xc_eval(rho, xc)
    v_eff = GridFunction(basis, v_ext.values + v_h.values + v_xc.values)
    return EffectivePotentialTerms(v_ext, v_h, v_xc, v_eff, e_ext, e_h, e_xc)
