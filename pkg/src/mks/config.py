"""Run configuration: flat key-value text with sections.

A config file is INI-style; every physical and numerical choice of a run
lives here so that runs are reproducible from the file alone.  Bundled
benchmark configurations (free1d, si1d, rhf1d, tiny3d) resolve by bare
name.  See the shipped .cfg files for the full key reference.
"""

from __future__ import annotations

import configparser
import hashlib
from importlib import resources

import numpy as np

from .cell import Cell, PlaneWaveBasis
from .potentials import (
    ExternalPotential,
    cosine_series,
    dirac_corr,
    dirac_exchange,
    gaussian_wells,
    null_xc,
)
from .smearing import Smearing

__all__ = ["ConfigError", "RunConfig", "bundled_config_path"]


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""


def _floats(text):
    items = [t for t in text.replace(";", ",").split(",") if t.strip()]
    return [float(t) for t in items]


def _vectors(text):
    rows = [r for r in text.split(";") if r.strip()]
    return [[float(t) for t in r.split(",") if t.strip()] for r in rows]


def _bool(text, key):
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected on/off, got {text!r}")


def bundled_config_path(name: str):
    """Path of a shipped benchmark config, or None if not bundled."""
    if "/" in name or "\\" in name:
        return None
    stem = name[:-4] if name.endswith(".cfg") else name
    ref = resources.files("mks").joinpath(f"configs/{stem}.cfg")
    return ref if ref.is_file() else None


class RunConfig:
    """Parsed and validated run configuration."""

    def __init__(self, parser: configparser.ConfigParser, origin="<memory>"):
        self.origin = str(origin)
        try:
            self._load(parser)
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{origin}: {exc}") from exc

    # -- construction ------------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        bundled = bundled_config_path(str(path))
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            if bundled is not None:
                parser.read_string(bundled.read_text(), source=str(path))
            else:
                with open(path) as fh:
                    parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls(parser, origin=path)

    @classmethod
    def from_text(cls, text, origin="<memory>") -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        return cls(parser, origin=origin)

    def _require(self, parser, section, key):
        if not parser.has_option(section, key):
            raise ConfigError(f"{self.origin}: missing [{section}] {key}")
        return parser.get(section, key)

    def _load(self, p: configparser.ConfigParser):
        dim = int(self._require(p, "cell", "dimension"))
        if dim not in (1, 2, 3):
            raise ConfigError(f"{self.origin}: dimension must be 1, 2 or 3")
        lattice_text = self._require(p, "cell", "lattice")
        if ";" in lattice_text:
            lattice = np.array(_vectors(lattice_text))
        else:
            diag = _floats(lattice_text)
            if len(diag) == 1:
                diag = diag * dim
            lattice = np.diag(diag)
        if lattice.shape != (dim, dim):
            raise ConfigError(
                f"{self.origin}: lattice shape {lattice.shape} does not match "
                f"dimension {dim}"
            )
        self.dimension = dim
        self.lattice = lattice

        self.n_electrons = float(self._require(p, "system", "n_electrons"))
        self.beta = float(self._require(p, "system", "beta"))
        self.cutoff = float(self._require(p, "system", "cutoff"))
        if self.n_electrons <= 0:
            raise ConfigError(f"{self.origin}: n_electrons must be positive")
        if self.beta <= 0:
            raise ConfigError(f"{self.origin}: beta must be positive")
        if self.cutoff <= 0:
            raise ConfigError(f"{self.origin}: cutoff must be positive")

        kind = p.get("potential", "kind", fallback="zero").strip()
        if kind == "zero":
            self.potential_params = {"kind": "zero"}
        elif kind == "gaussian_wells":
            self.potential_params = {
                "kind": kind,
                "centers": _vectors(self._require(p, "potential", "centers")),
                "depths": _floats(self._require(p, "potential", "depths")),
                "widths": _floats(self._require(p, "potential", "widths")),
            }
        elif kind == "cosine_series":
            self.potential_params = {
                "kind": kind,
                "modes": [
                    [int(c) for c in row]
                    for row in _vectors(self._require(p, "potential", "modes"))
                ],
                "amplitudes": _floats(self._require(p, "potential", "amplitudes")),
            }
        else:
            raise ConfigError(f"{self.origin}: unknown potential kind {kind!r}")

        self.xc_name = p.get("xc", "functional", fallback="dirac").strip()
        if self.xc_name not in ("dirac", "dirac+corr", "none"):
            raise ConfigError(f"{self.origin}: unknown xc functional {self.xc_name!r}")
        self.hartree_on = _bool(p.get("xc", "hartree", fallback="on"), "hartree")

        self.mixing = p.get("scf", "mixing", fallback="damping").strip()
        if self.mixing not in ("damping", "anderson"):
            raise ConfigError(f"{self.origin}: unknown mixing {self.mixing!r}")
        self.mixing_alpha = float(p.get("scf", "alpha", fallback="0.5"))
        self.anderson_window = int(p.get("scf", "anderson_window", fallback="5"))
        self.tol_rho = float(p.get("scf", "tol_rho", fallback="1e-8"))
        self.tol_f = float(p.get("scf", "tol_f", fallback="1e-10"))
        self.max_iter = int(p.get("scf", "max_iter", fallback="200"))
        self.seed = int(p.get("scf", "seed", fallback="0"))
        if not 0.0 < self.mixing_alpha <= 1.0:
            raise ConfigError(f"{self.origin}: alpha must lie in (0, 1]")

        self.g_sign = p.get("response", "g_sign", fallback="paper").strip()
        if self.g_sign not in ("paper", "analytic"):
            raise ConfigError(f"{self.origin}: g_sign must be paper or analytic")

        cut_text = p.get("sweep", "cutoffs", fallback="")
        self.sweep_cutoffs = _floats(cut_text) if cut_text.strip() else []
        ref_text = p.get("sweep", "reference", fallback="")
        self.sweep_reference = float(ref_text) if ref_text.strip() else None
        betas_text = p.get("sweep", "betas", fallback="")
        self.sweep_betas = _floats(betas_text) if betas_text.strip() else [self.beta]
        self.quasi_opt_bound = float(p.get("sweep", "quasi_opt_bound", fallback="50"))
        self.timing = _bool(p.get("sweep", "timing", fallback="on"), "timing")
        self.dense_cap = int(p.get("sweep", "dense_cap", fallback="600"))

        self.out_dir = p.get("output", "out_dir", fallback="runs").strip()

    # -- factories ----------------------------------------------------------

    def build_cell(self) -> Cell:
        return Cell(self.lattice)

    def build_basis(self, cutoff=None) -> PlaneWaveBasis:
        return PlaneWaveBasis(self.build_cell(), cutoff or self.cutoff)

    def build_external(self) -> ExternalPotential:
        params = self.potential_params
        if params["kind"] == "zero":
            return ExternalPotential.zero()
        if params["kind"] == "gaussian_wells":
            return gaussian_wells(params["centers"], params["depths"], params["widths"])
        return cosine_series(params["modes"], params["amplitudes"])

    def build_xc(self):
        if self.xc_name == "dirac":
            return dirac_exchange()
        if self.xc_name == "dirac+corr":
            return dirac_corr()
        return null_xc()

    def build_smearing(self, beta=None) -> Smearing:
        return Smearing(beta if beta is not None else self.beta)

    # -- identity ------------------------------------------------------------

    def effective_items(self):
        """Canonical (key, value-string) pairs describing the resolved run."""
        items = {
            "cell.dimension": self.dimension,
            "cell.lattice": np.array2string(
                self.lattice, precision=17, separator=","
            ),
            "system.n_electrons": repr(self.n_electrons),
            "system.beta": repr(self.beta),
            "system.cutoff": repr(self.cutoff),
            "xc.functional": self.xc_name,
            "xc.hartree": self.hartree_on,
            "scf.mixing": self.mixing,
            "scf.alpha": repr(self.mixing_alpha),
            "scf.anderson_window": self.anderson_window,
            "scf.tol_rho": repr(self.tol_rho),
            "scf.tol_f": repr(self.tol_f),
            "scf.max_iter": self.max_iter,
            "scf.seed": self.seed,
            "response.g_sign": self.g_sign,
            "sweep.cutoffs": repr(self.sweep_cutoffs),
            "sweep.reference": repr(self.sweep_reference),
            "sweep.betas": repr(self.sweep_betas),
            "sweep.quasi_opt_bound": repr(self.quasi_opt_bound),
            "sweep.dense_cap": self.dense_cap,
        }
        for key, value in sorted(self.potential_params.items()):
            items[f"potential.{key}"] = repr(value)
        return sorted((k, str(v)) for k, v in items.items())

    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.effective_items())
        return hashlib.sha256(text.encode()).hexdigest()[:16]
