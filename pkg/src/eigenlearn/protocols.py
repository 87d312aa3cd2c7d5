"""Spectral selection protocols: which eigenstates feed the encoder.

Three rules: the lowest M states, M consecutive states around the index
closest to the mean energy, or a single swept index. All indices here are
1-based, matching the spectral position labels m_i = 1..D used everywhere
else in the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .eigensolver import Spectrum

__all__ = ["ProtocolKind", "SpectralProtocol", "StateBlock", "select_indices", "build_state_block"]


class ProtocolKind(str, Enum):
    LOW = "low"
    MID = "mid"
    SINGLE = "single"


@dataclass(frozen=True)
class SpectralProtocol:
    """Selection rule plus its size parameter (M, or m_index for SINGLE)."""

    kind: ProtocolKind
    M: int = 1
    m_index: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        if self.kind is ProtocolKind.SINGLE:
            if self.m_index < 1:
                raise ValueError("m_index must be >= 1")
            object.__setattr__(self, "M", 1)
        elif self.M < 1:
            raise ValueError("M must be >= 1")

    @property
    def n_states(self) -> int:
        return 1 if self.kind is ProtocolKind.SINGLE else self.M

    def label(self) -> str:
        if self.kind is ProtocolKind.SINGLE:
            return f"single:m={self.m_index}"
        return f"{self.kind.value}:M={self.M}"


@dataclass(frozen=True)
class StateBlock:
    """Encoder input: selected eigenvector columns with their energies.

    theta_true is carried for post-training evaluation only; the training
    loss never reads it.
    """

    psi: np.ndarray
    energies: np.ndarray
    indices: np.ndarray
    theta_true: np.ndarray


def _mid_window(dim: int, M: int, m_av: int) -> np.ndarray:
    # Bracket [m_av - floor(M/2), m_av + floor(M/2)] holds M+1 entries for
    # even M; dropping the topmost keeps the lower edge and the centering.
    lo = m_av - M // 2
    hi = lo + M - 1
    if lo < 1:  # clamp by shifting inward, preserving the width
        lo, hi = 1, M
    elif hi > dim:
        lo, hi = dim - M + 1, dim
    return np.arange(lo, hi + 1, dtype=np.int64)


def select_indices(protocol: SpectralProtocol, spectrum: Spectrum, m_av: int = 0) -> np.ndarray:
    """1-based eigenstate indices selected by the protocol.

    MID requires m_av (from mean_energy_index). The result always has
    exactly protocol.n_states sorted entries inside [1, D].
    """
    dim = spectrum.dim
    if protocol.kind is ProtocolKind.SINGLE:
        if protocol.m_index > dim:
            raise ValueError(f"m_index {protocol.m_index} exceeds spectrum size {dim}")
        return np.array([protocol.m_index], dtype=np.int64)
    if protocol.M > dim:
        raise ValueError(f"M={protocol.M} exceeds spectrum size {dim}")
    if protocol.kind is ProtocolKind.LOW:
        return np.arange(1, protocol.M + 1, dtype=np.int64)
    if not 1 <= m_av <= dim:
        raise ValueError(f"MID protocol needs a valid m_av in 1..{dim}, got {m_av}")
    return _mid_window(dim, protocol.M, m_av)


def build_state_block(spectrum: Spectrum, indices: Sequence[int], theta: Sequence[float]) -> StateBlock:
    """Gather gauge-fixed columns and energies at the given 1-based indices."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("indices must be a nonempty 1-D sequence")
    if idx.min() < 1 or idx.max() > spectrum.dim:
        raise ValueError(f"indices out of range 1..{spectrum.dim}")
    cols = idx - 1
    return StateBlock(
        psi=spectrum.vectors[:, cols].copy(),
        energies=spectrum.energies[cols].copy(),
        indices=idx.copy(),
        theta_true=np.atleast_1d(np.asarray(theta, dtype=np.float64)).copy(),
    )
