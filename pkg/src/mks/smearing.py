"""Fermi-Dirac occupations, chemical-potential solves, and entropy."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, xlogy

__all__ = [
    "Smearing",
    "fermi_dirac",
    "fermi_dirac_dmu",
    "solve_mu",
    "entropy",
]

MU_TOL_REL = 1e-12


class Smearing:
    """Finite-temperature occupation model, beta in inverse hartree."""

    def __init__(self, beta: float):
        beta = float(beta)
        if not np.isfinite(beta) or beta <= 0:
            raise ValueError(f"beta must be positive and finite, got {beta}")
        self.beta = beta

    def __repr__(self):
        return f"Smearing(beta={self.beta:.6g})"


def fermi_dirac(eigenvalues, mu, smearing: Smearing):
    """f_i = 1 / (1 + exp(beta (eps_i - mu))), overflow safe for any argument."""
    x = smearing.beta * (np.asarray(eigenvalues, dtype=float) - mu)
    return expit(-x)


def fermi_dirac_dmu(eigenvalues, mu, smearing: Smearing, convention: str = "paper"):
    """Occupation response to the chemical potential.

    ``convention="paper"`` reproduces the printed expression
    g_mu(x) = (-beta e^{beta(x-mu)}) (1 + e^{beta(x-mu)})^{-2} = -beta f (1-f);
    ``convention="analytic"`` returns the calculus derivative d f / d mu,
    which is +beta f (1-f).  Both are exposed because downstream solves are
    validated under either sign.
    """
    x = smearing.beta * (np.asarray(eigenvalues, dtype=float) - mu)
    magnitude = smearing.beta * expit(-x) * expit(x)
    if convention == "paper":
        return -magnitude
    if convention == "analytic":
        return magnitude
    raise ValueError(f"unknown convention {convention!r}")


def _count(eigenvalues, mu, smearing):
    return float(fermi_dirac(eigenvalues, mu, smearing).sum())


def solve_mu(eigenvalues, n_electrons, smearing: Smearing) -> float:
    """Find mu with sum_i f_i(mu) = N to |sum f - N| <= 1e-12 N.

    Bracketed bisection from a seed interval [min eps - 10/beta,
    max eps + 10/beta], widened if needed, followed by safeguarded Newton
    once the bracket is narrow.
    """
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if eigenvalues.ndim != 1 or eigenvalues.size == 0:
        raise ValueError("eigenvalues must be a nonempty 1d array")
    n_electrons = float(n_electrons)
    m = eigenvalues.size
    if not 0.0 < n_electrons < m:
        raise ValueError(
            f"electron count {n_electrons} not strictly between 0 and {m} states"
        )
    beta = smearing.beta
    tol = MU_TOL_REL * n_electrons

    margin = 10.0 / beta
    lo = float(eigenvalues.min()) - margin
    hi = float(eigenvalues.max()) + margin
    while _count(eigenvalues, lo, smearing) > n_electrons:
        lo -= margin
        margin *= 2.0
    margin = 10.0 / beta
    while _count(eigenvalues, hi, smearing) < n_electrons:
        hi += margin
        margin *= 2.0

    # bisection until the bracket is O(1), cheap and globally safe
    while hi - lo > 1.0:
        mid = 0.5 * (lo + hi)
        if _count(eigenvalues, mid, smearing) < n_electrons:
            lo = mid
        else:
            hi = mid

    mu = 0.5 * (lo + hi)
    for _ in range(200):
        f = fermi_dirac(eigenvalues, mu, smearing)
        resid = float(f.sum()) - n_electrons
        if abs(resid) <= tol:
            return mu
        if resid < 0.0:
            lo = mu
        else:
            hi = mu
        slope = float(beta * np.sum(f * (1.0 - f)))
        if slope > 0.0:
            step = mu - resid / slope
        else:
            step = 0.5 * (lo + hi)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if hi - lo <= 4.0 * np.finfo(float).eps * max(1.0, abs(mu)):
            break
        mu = step
    resid = _count(eigenvalues, mu, smearing) - n_electrons
    if abs(resid) > tol:
        raise RuntimeError(
            f"chemical potential iteration stalled, |residual| = {abs(resid):.3e}"
        )
    return mu


def entropy(occupations, smearing: Smearing) -> float:
    """S = beta^-1 sum_i [f ln f + (1-f) ln(1-f)], always <= 0.

    0 ln 0 counts as zero; occupations may stray from [0, 1] by at most
    1e-12 (they are clipped before evaluation).
    """
    f = np.asarray(occupations, dtype=float)
    if f.size and (f.min() < -1e-12 or f.max() > 1.0 + 1e-12):
        raise ValueError("occupations outside [0, 1] beyond 1e-12 tolerance")
    f = np.clip(f, 0.0, 1.0)
    s = xlogy(f, f) + xlogy(1.0 - f, 1.0 - f)
    return float(s.sum() / smearing.beta)
