"""Dense diagonalization with deterministic ordering and sign gauge.

The heavy lifting is LAPACK's symmetric eigensolver (via numpy), which is
deterministic for bit-identical inputs within one environment; this module
adds the fixed ascending order and the eigenvector sign convention that
make spectra reproducible enough to feed a network. Internally everything
is float64 even though training later narrows the vectors to float32:
eigenvector accuracy should not be the experiment's noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Spectrum", "diagonalize", "fix_gauge", "mean_energy_index", "near_degenerate_pairs"]


@dataclass(frozen=True)
class Spectrum:
    """Full eigendecomposition of one Hamiltonian realization.

    energies is ascending; column m of vectors belongs to energies[m] and
    is gauge-fixed so its largest-magnitude entry is positive.
    """

    energies: np.ndarray
    vectors: np.ndarray
    L: int

    @property
    def dim(self) -> int:
        return self.energies.shape[0]


def fix_gauge(vectors: np.ndarray) -> np.ndarray:
    """Scale each column by +-1 so its largest-|.| entry is positive.

    Ties in magnitude resolve to the lowest row index (argmax rule), so
    the map is deterministic and idempotent. Raises on a zero column.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    lead = np.argmax(np.abs(vectors), axis=0)
    picked = vectors[lead, np.arange(vectors.shape[1])]
    if np.any(picked == 0.0):
        bad = int(np.nonzero(picked == 0.0)[0][0])
        raise ValueError(f"column {bad} is zero; no gauge can be fixed")
    return vectors * np.where(picked < 0.0, -1.0, 1.0)


def diagonalize(H: np.ndarray) -> Spectrum:
    """Full spectrum of a real-symmetric H with 2^L rows.

    Deterministic given bit-identical input: LAPACK ordering is already
    ascending, and fix_gauge removes the sign ambiguity.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    if not np.isfinite(H).all():
        raise ValueError("Hamiltonian contains non-finite entries")
    if not np.array_equal(H, H.T):
        raise ValueError("Hamiltonian must be exactly symmetric")
    L = int(round(np.log2(H.shape[0])))
    if 2 ** L != H.shape[0]:
        raise ValueError(f"dimension {H.shape[0]} is not a power of two")
    try:
        energies, vectors = np.linalg.eigh(H)
    except np.linalg.LinAlgError as err:  # pragma: no cover - LAPACK failure is exotic
        raise RuntimeError(f"eigensolver failed to converge: {err}") from err
    order = np.argsort(energies, kind="stable")
    return Spectrum(energies=energies[order], vectors=fix_gauge(vectors[:, order]), L=L)


def mean_energy_index(spectrum: Spectrum, H: np.ndarray) -> int:
    """1-based index of the eigenstate closest to the mean energy tr(H)/D.

    Ties break toward the smaller index.
    """
    e_av = float(np.trace(H)) / spectrum.dim
    return int(np.argmin(np.abs(spectrum.energies - e_av))) + 1


def near_degenerate_pairs(energies: np.ndarray, gap: float = 1e-10) -> list[tuple[int, int]]:
    """Adjacent 1-based index pairs with energy gap below `gap`.

    Such pairs have gauge-unstable eigenvector mixing and are surfaced in
    run manifests; the symmetry-breaking perturbations keep dataset
    Hamiltonians clear of them by design.
    """
    diffs = np.diff(np.asarray(energies))
    return [(int(i) + 1, int(i) + 2) for i in np.nonzero(diffs < gap)[0]]
