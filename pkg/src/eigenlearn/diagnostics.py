"""Eigenstate structure measures: entanglement, participation, density of states.

These quantify the qualitative split of the spectrum: low-energy states
are weakly entangled and concentrated on few basis configurations, while
mid-spectrum states approach random-vector behavior. Natural logarithm
throughout; normalizations map the theoretical maxima to 1
(S_vN / (floor(L/2) ln 2) for the half-chain cut, S_part / ln D).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .eigensolver import Spectrum

__all__ = [
    "DiagnosticsRecord",
    "entanglement_entropy",
    "participation_entropy",
    "density_of_states",
    "fidelity",
    "spectrum_diagnostics",
    "write_diagnostics_csv",
]

_EIG_CLIP = 1e-14  # reduced-density eigenvalues below this count as exact zeros
_NORM_TOL = 1e-9


def _check_normalized(state: np.ndarray, name: str = "state") -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    norm = np.linalg.norm(state)
    if abs(norm - 1.0) > _NORM_TOL:
        raise ValueError(f"{name} is not normalized: |norm - 1| = {abs(norm - 1.0):.3e}")
    return state


def entanglement_entropy(state: np.ndarray, L: int, cut: int) -> float:
    """Von Neumann entropy of the reduced density matrix over sites 1..cut.

    Uses the Schmidt decomposition: singular values of the
    2^cut x 2^(L-cut) reshape square to the reduced-density eigenvalues.
    Site 1 is the most significant bit, so a C-order reshape splits the
    chain at the cut.
    """
    state = _check_normalized(state)
    if state.shape != (2 ** L,):
        raise ValueError(f"state length {state.shape} does not match L={L}")
    if not 1 <= cut < L:
        raise ValueError(f"cut must satisfy 1 <= cut < L, got cut={cut}, L={L}")
    sv = np.linalg.svd(state.reshape(2 ** cut, 2 ** (L - cut)), compute_uv=False)
    lam = sv * sv
    lam = lam[lam > _EIG_CLIP]
    return float(-np.sum(lam * np.log(lam)))


def participation_entropy(state: np.ndarray) -> float:
    """Shannon entropy of squared amplitudes in the computational basis."""
    state = _check_normalized(state)
    p = state * state
    p = p[p > 0.0]
    return float(-np.sum(p * np.log(p)))


def density_of_states(energies: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of the rescaled spectrum (E - E0)/(Emax - E0) over [0, 1].

    Returns (bin centers, counts); equal-width bins, right edge inclusive
    in the last bin, counts summing to the spectrum size.
    """
    energies = np.asarray(energies, dtype=np.float64)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    e0, emax = energies[0], energies[-1]
    if not emax > e0:
        raise ValueError("degenerate spectrum: Emax must exceed E0")
    rescaled = (energies - e0) / (emax - e0)
    idx = np.minimum((rescaled * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    centers = (np.arange(bins) + 0.5) / bins
    return centers, counts


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Squared overlap |<a|b>|^2; insensitive to the sign gauge."""
    a = _check_normalized(a, "a")
    b = _check_normalized(b, "b")
    return float(np.dot(a, b) ** 2)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Per-eigenstate structure measures over one full spectrum.

    All arrays share length D: normalized index m/D, rescaled energy,
    and the normalized half-chain and participation entropies.
    """

    index_norm: np.ndarray
    energy_rescaled: np.ndarray
    svn_norm: np.ndarray
    spart_norm: np.ndarray


def spectrum_diagnostics(spectrum: Spectrum) -> DiagnosticsRecord:
    """Evaluate both entropies for every eigenstate of a spectrum."""
    L, dim = spectrum.L, spectrum.dim
    cut = L // 2
    e = spectrum.energies
    svn = np.array([entanglement_entropy(spectrum.vectors[:, m], L, cut) for m in range(dim)])
    spart = np.array([participation_entropy(spectrum.vectors[:, m]) for m in range(dim)])
    return DiagnosticsRecord(
        index_norm=(np.arange(1, dim + 1)) / dim,
        energy_rescaled=(e - e[0]) / (e[-1] - e[0]),
        svn_norm=svn / (cut * np.log(2.0)),
        spart_norm=spart / np.log(dim),
    )


def write_diagnostics_csv(record: DiagnosticsRecord, path: str | Path) -> None:
    """Per-state CSV: (m_index, index_norm, energy_rescaled, svn_norm, spart_norm)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m_index", "index_norm", "energy_rescaled", "svn_norm", "spart_norm"])
        for m in range(record.index_norm.shape[0]):
            writer.writerow([
                m + 1,
                repr(float(record.index_norm[m])),
                repr(float(record.energy_rescaled[m])),
                repr(float(record.svn_norm[m])),
                repr(float(record.spart_norm[m])),
            ])
