"""Physics-informed reconstruction objective and evaluation metrics.

The candidate Hamiltonian H(theta~) is projected into the input eigenbasis,
R = Psi^T H(theta~) Psi. If theta~ reproduces the generating couplings, R is
diagonal with the target energies on the diagonal, so the loss penalizes
off-diagonal weight plus (gamma-weighted) diagonal mismatch, normalized by
the mean squared target energy so a global rescaling of the Hamiltonian
leaves the value unchanged.

Because H(theta~) is affine in theta~, the projections G_l = Psi^T B_l Psi
and G_const = Psi^T H_const Psi are computed once per sample and reused at
every optimization step; evaluating loss and gradient then costs O(M^2)
per sample instead of a fresh dense rebuild, and no diagonalization is
ever needed during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .protocols import StateBlock

__all__ = [
    "ProjectedBasis",
    "LossConfig",
    "project_basis",
    "residual_matrix",
    "rayleigh_loss",
    "theta_loss",
    "spectral_error",
]


@dataclass(frozen=True)
class LossConfig:
    """gamma weights the diagonal-mismatch term; epsilon guards the
    normalization against an all-zero target spectrum."""

    gamma: float = 0.1
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.gamma < 0.0 or self.epsilon < 0.0:
            raise ValueError("gamma and epsilon must be >= 0")


@dataclass(frozen=True)
class ProjectedBasis:
    """Per-sample projections of the decoder basis into the input eigenbasis.

    G[l] = Psi^T B_l Psi and G_const = Psi^T H_const Psi (all M x M),
    plus the target energies of the selected states.
    """

    G: tuple[np.ndarray, ...]
    G_const: np.ndarray
    energies: np.ndarray

    @property
    def M(self) -> int:
        return self.G_const.shape[0]

    @property
    def theta_dim(self) -> int:
        return len(self.G)


def project_basis(block: StateBlock, basis: tuple[list[np.ndarray], np.ndarray]) -> ProjectedBasis:
    """Project the decoder operators through the block's eigenvector columns.

    Computed in float64 regardless of the block's storage precision; the
    projections set the accuracy floor of the training loss.
    """
    ops, h_const = basis
    psi = np.asarray(block.psi, dtype=np.float64)
    if psi.shape[0] != h_const.shape[0]:
        raise ValueError(f"state dimension {psi.shape[0]} does not match operators {h_const.shape[0]}")
    gs = tuple(psi.T @ (b @ psi) for b in ops)
    return ProjectedBasis(G=gs, G_const=psi.T @ (h_const @ psi), energies=block.energies.copy())


def residual_matrix(pb: ProjectedBasis, theta_tilde: np.ndarray) -> np.ndarray:
    """R(theta~) = G_const + sum_l theta~_l G_l."""
    theta_tilde = np.atleast_1d(np.asarray(theta_tilde, dtype=np.float64))
    if theta_tilde.shape != (pb.theta_dim,):
        raise ValueError(f"theta_tilde must have shape ({pb.theta_dim},), got {theta_tilde.shape}")
    R = pb.G_const.copy()
    for t, G in zip(theta_tilde, pb.G):
        R += t * G
    return R


def rayleigh_loss(
    pb: ProjectedBasis, theta_tilde: np.ndarray, cfg: LossConfig = LossConfig()
) -> tuple[float, np.ndarray]:
    """Loss value and its analytic gradient with respect to theta~.

    value = [sum_{i!=j} R_ij^2] / (N M (M-1))
          + gamma [sum_i (R_ii - E_i)^2] / (N M),    N = mean(E^2) + epsilon.

    For M=1 the off-diagonal sum is empty and contributes zero.
    """
    R = residual_matrix(pb, theta_tilde)
    M = pb.M
    E = pb.energies
    norm = float(np.mean(E * E)) + cfg.epsilon
    if norm == 0.0:
        raise ValueError("normalization is zero: all target energies vanish and epsilon = 0")

    diag = np.diagonal(R)
    off_sq = float(np.sum(R * R)) - float(np.sum(diag * diag))
    mismatch = diag - E
    value = cfg.gamma * float(np.sum(mismatch * mismatch)) / (norm * M)
    if M > 1:
        value += off_sq / (norm * M * (M - 1))

    grad = np.empty(pb.theta_dim)
    for l, G in enumerate(pb.G):
        g_diag = np.diagonal(G)
        term = 2.0 * cfg.gamma * float(np.sum(mismatch * g_diag)) / (norm * M)
        if M > 1:
            off_dot = float(np.sum(R * G)) - float(np.sum(diag * g_diag))
            term += 2.0 * off_dot / (norm * M * (M - 1))
        grad[l] = term
    return value, grad


def theta_loss(theta_tilde: np.ndarray, theta_true: np.ndarray) -> float:
    """Mean squared error over the free couplings; evaluation only, never
    part of the default training objective."""
    theta_tilde = np.atleast_1d(np.asarray(theta_tilde, dtype=np.float64))
    theta_true = np.atleast_1d(np.asarray(theta_true, dtype=np.float64))
    if theta_tilde.shape != theta_true.shape:
        raise ValueError(f"shape mismatch: {theta_tilde.shape} vs {theta_true.shape}")
    diff = theta_tilde - theta_true
    return float(np.mean(diff * diff))


def spectral_error(E: np.ndarray, E_tilde: np.ndarray) -> float:
    """Mean absolute eigenvalue deviation relative to the true bandwidth:
    (1/D) sum_i |E_i - E~_i| / (E_max - E_0), both spectra ascending."""
    E = np.asarray(E, dtype=np.float64)
    E_tilde = np.asarray(E_tilde, dtype=np.float64)
    if E.shape != E_tilde.shape:
        raise ValueError(f"shape mismatch: {E.shape} vs {E_tilde.shape}")
    width = float(E[-1] - E[0])
    if width <= 0.0:
        raise ValueError("degenerate spectrum: E_max must exceed E_0")
    return float(np.mean(np.abs(E - E_tilde))) / width
