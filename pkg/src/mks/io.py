"""Checkpoint serialization: one self-describing JSON/binary hybrid file.

Arrays are packed as base64 little-endian buffers with explicit dtype and
shape, so a checkpoint is a single portable text file that still round-trips
bit-exactly.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .cell import Cell, PlaneWaveBasis
from .density_matrix import DensityMatrix

__all__ = ["save_state", "load_state", "load_density_matrix"]

FORMAT_TAG = "mks-checkpoint-1"


def _pack(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return {
        "dtype": arr.dtype.str.lstrip("<>=|"),
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _unpack(blob: dict) -> np.ndarray:
    raw = base64.b64decode(blob["data"])
    arr = np.frombuffer(raw, dtype=np.dtype(blob["dtype"]).newbyteorder("<"))
    return arr.reshape(blob["shape"]).copy()


def save_state(state, path) -> None:
    """Write a converged ScfState (or compatible object) to one file."""
    gamma = state.gamma
    basis = gamma.basis
    doc = {
        "format": FORMAT_TAG,
        "basis": {
            "dimension": basis.cell.dimension,
            "lattice": _pack(basis.cell.lattice),
            "cutoff": basis.cutoff,
            "size": basis.size,
        },
        "n_electrons": state.n_electrons,
        "beta": state.smearing.beta,
        "hartree_on": bool(state.hartree_on),
        "xc": state.xc.name,
        "mu": state.mu,
        "iterations": state.iterations,
        "converged": bool(state.converged),
        "residual_density": float(state.residual_density),
        "residual_fixedpoint": float(state.residual_fixedpoint),
        "free_energy": state.free_energy.as_dict(),
        "arrays": {
            "occupations": _pack(gamma.occupations),
            "eigenvalues": _pack(
                gamma.eigenvalues
                if gamma.eigenvalues is not None
                else np.full(gamma.n_states, np.nan)
            ),
            "orbitals": _pack(gamma.orbitals),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_state(path) -> dict:
    """Read a checkpoint back into a plain dict with numpy arrays."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"not a {FORMAT_TAG} file: {path}")
    doc["basis"]["lattice"] = _unpack(doc["basis"]["lattice"])
    arrays = doc["arrays"]
    for key in ("occupations", "eigenvalues", "orbitals"):
        arrays[key] = _unpack(arrays[key])
    return doc


def load_density_matrix(path):
    """Rebuild (DensityMatrix, metadata) from a checkpoint file."""
    doc = load_state(path)
    cell = Cell(doc["basis"]["lattice"])
    basis = PlaneWaveBasis(cell, doc["basis"]["cutoff"])
    if basis.size != doc["basis"]["size"]:
        raise ValueError(
            f"checkpoint basis size {doc['basis']['size']} does not match "
            f"rebuilt basis size {basis.size}"
        )
    arrays = doc.pop("arrays")
    eigenvalues = arrays["eigenvalues"]
    if np.all(np.isnan(eigenvalues)):
        eigenvalues = None
    gamma = DensityMatrix(
        basis, arrays["orbitals"], arrays["occupations"], eigenvalues
    )
    return gamma, doc
