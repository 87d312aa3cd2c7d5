"""Spin-1/2 chain Hamiltonians with nearest and next-nearest couplings.

The model family is

    H = J1 * sum_i h_{i,i+1} + J2 * sum_i h_{i,i+2}
        + sum_i [ hz_i * sigma^z_i + gx_i * sigma^x_i ],

    h_ij = sigma^x_i sigma^x_j + sigma^y_i sigma^y_j + Delta sigma^z_i sigma^z_j,

under periodic boundary conditions (site L+1 is site 1, L+2 is site 2).
All matrices are dense, real and symmetric: the only complex building
block, sigma^y sigma^y, is assembled directly as a real signed flip term,
so nothing complex is ever materialized.

Basis convention: computational basis |s_1 ... s_L> with s=0 (spin up,
sigma^z eigenvalue +1) first and site 1 as the most significant bit.
With this ordering every single-site embedding is a plain stride pattern
on the basis index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "SpinChainParams",
    "LatentSpec",
    "chain_params",
    "embed_pauli",
    "coupling_term",
    "build_hamiltonian",
    "apply_symmetry_breaking",
    "basis_operators",
]

FREE_PARAMETER_NAMES = ("J1", "J2")


@dataclass(frozen=True)
class SpinChainParams:
    """Full coupling vector of one chain realization.

    hz and gx are per-site fields of length L. The instance is frozen;
    the field arrays are copied on construction and must not be mutated.
    """

    L: int
    J1: float
    J2: float
    Delta: float
    hz: np.ndarray
    gx: np.ndarray

    def __post_init__(self) -> None:
        if self.L < 3:
            raise ValueError(f"need L >= 3 so the i+2 wrap cannot alias site i, got L={self.L}")
        hz = np.asarray(self.hz, dtype=np.float64).copy()
        gx = np.asarray(self.gx, dtype=np.float64).copy()
        if hz.shape != (self.L,) or gx.shape != (self.L,):
            raise ValueError(f"hz and gx must have shape ({self.L},)")
        scalars = (self.J1, self.J2, self.Delta)
        if not all(np.isfinite(scalars)) or not (np.isfinite(hz).all() and np.isfinite(gx).all()):
            raise ValueError("all couplings must be finite")
        object.__setattr__(self, "hz", hz)
        object.__setattr__(self, "gx", gx)

    @property
    def dim(self) -> int:
        return 2 ** self.L


def chain_params(
    L: int,
    J1: float = 0.0,
    J2: float = 0.5,
    Delta: float = 1.0,
    hz: float | Sequence[float] = 0.5,
    gx: float | Sequence[float] = -0.2,
) -> SpinChainParams:
    """Build SpinChainParams, broadcasting scalar fields to all sites.

    The defaults are the fixed couplings of the studied family
    (hz=0.5, gx=-0.2, Delta=1.0, J2=0.5).
    """
    hz_arr = np.broadcast_to(np.asarray(hz, dtype=np.float64), (L,))
    gx_arr = np.broadcast_to(np.asarray(gx, dtype=np.float64), (L,))
    return SpinChainParams(L=L, J1=J1, J2=J2, Delta=Delta, hz=hz_arr, gx=gx_arr)


@dataclass(frozen=True)
class LatentSpec:
    """Which couplings are free (latent) and what supplies the rest.

    free is an ordered subset of ("J1", "J2"); fixed_base provides every
    non-free value. Hamiltonians of the family are affine in the free
    couplings, H(theta) = H_const + sum_l theta_l * B_l, which is what
    basis_operators exposes for the parameter-free decoder.
    """

    free: tuple[str, ...]
    fixed_base: SpinChainParams

    def __post_init__(self) -> None:
        free = tuple(self.free)
        if len(set(free)) != len(free):
            raise ValueError("free parameter names must be unique")
        for name in free:
            if name not in FREE_PARAMETER_NAMES:
                raise ValueError(f"unknown free parameter {name!r}; choose from {FREE_PARAMETER_NAMES}")
        object.__setattr__(self, "free", free)

    @property
    def theta_dim(self) -> int:
        return len(self.free)

    @property
    def L(self) -> int:
        return self.fixed_base.L

    def params_for(self, theta: Sequence[float]) -> SpinChainParams:
        """fixed_base with the free couplings replaced by theta."""
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.theta_dim,):
            raise ValueError(f"theta must have shape ({self.theta_dim},), got {theta.shape}")
        return replace(self.fixed_base, **{name: float(v) for name, v in zip(self.free, theta)})

    def altered(self) -> "LatentSpec":
        """Same latent structure on the symmetry-broken base."""
        return LatentSpec(free=self.free, fixed_base=apply_symmetry_breaking(self.fixed_base))


def _site_signs(site: int, L: int) -> np.ndarray:
    """sigma^z eigenvalues (+1/-1) of `site` over all basis states."""
    bits = (np.arange(2 ** L) >> (L - site)) & 1
    return 1.0 - 2.0 * bits


def _site_mask(site: int, L: int) -> int:
    return 1 << (L - site)


def embed_pauli(site: int, axis: str, L: int) -> tuple[np.ndarray, bool]:
    """Kronecker embedding I x ... x sigma^axis x ... x I at `site` (1-based).

    Returns (matrix, imaginary). For axis "x" and "z" the matrix is the
    operator itself and imaginary is False. sigma^y is purely imaginary,
    so for axis "y" the returned matrix A is the real factor with
    sigma^y = i * A, flagged imaginary=True; callers only ever need y in
    pair products (see coupling_term), which are real.
    """
    if L < 1:
        raise ValueError(f"need L >= 1, got {L}")
    if not 1 <= site <= L:
        raise ValueError(f"site {site} out of range 1..{L}")
    dim = 2 ** L
    basis = np.arange(dim)
    signs = _site_signs(site, L)
    mask = _site_mask(site, L)
    if axis == "z":
        return np.diag(signs), False
    flipped = basis ^ mask
    mat = np.zeros((dim, dim))
    if axis == "x":
        mat[flipped, basis] = 1.0
        return mat, False
    if axis == "y":
        # sigma^y |s> = i*(-1)^s |1-s>  =>  real factor carries (-1)^s = signs
        mat[flipped, basis] = signs
        return mat, True
    raise ValueError(f"axis must be one of 'x', 'y', 'z', got {axis!r}")


def coupling_term(i: int, j: int, Delta: float, L: int) -> np.ndarray:
    """Two-site bond operator xx + yy + Delta*zz with PBC index wrap.

    xx + yy flips anti-aligned pairs with amplitude 2 and is diagonal-free;
    zz contributes (-1)^(s_i+s_j) on the diagonal. The result is real
    symmetric by construction.
    """
    i = (i - 1) % L + 1
    j = (j - 1) % L + 1
    if i == j:
        raise ValueError(f"self-coupling: sites {i} and {j} coincide mod L={L}")
    dim = 2 ** L
    basis = np.arange(dim)
    si = _site_signs(i, L)
    sj = _site_signs(j, L)
    mat = np.zeros((dim, dim))
    np.fill_diagonal(mat, Delta * si * sj)
    # xx + yy: amplitude 1 - (-1)^(s_i+s_j) = 2 exactly on anti-aligned pairs
    anti = si * sj < 0
    flipped = basis ^ (_site_mask(i, L) | _site_mask(j, L))
    mat[flipped[anti], basis[anti]] = 2.0
    return mat


def build_hamiltonian(p: SpinChainParams) -> np.ndarray:
    """Dense real-symmetric Hamiltonian of one parameter realization."""
    dim = p.dim
    H = np.zeros((dim, dim))
    for i in range(1, p.L + 1):
        if p.J1 != 0.0:
            H += p.J1 * coupling_term(i, i + 1, p.Delta, p.L)
        if p.J2 != 0.0:
            H += p.J2 * coupling_term(i, i + 2, p.Delta, p.L)
    diag = np.zeros(dim)
    for i in range(1, p.L + 1):
        if p.hz[i - 1] != 0.0:
            diag += p.hz[i - 1] * _site_signs(i, p.L)
        if p.gx[i - 1] != 0.0:
            Hx, _ = embed_pauli(i, "x", p.L)
            H += p.gx[i - 1] * Hx
    H[np.diag_indices(dim)] += diag
    return H


def apply_symmetry_breaking(p: SpinChainParams) -> SpinChainParams:
    """On-site perturbations lifting spatial and parity symmetries.

    Site 1 has both fields sign-flipped; site floor(L/2) gets hz shifted
    by -0.1 and gx by +0.1. Not idempotent: a second application undoes
    the sign flips but shifts the mid-chain site again.
    """
    if p.L < 4:
        raise ValueError(f"need L >= 4 so the perturbed sites differ, got L={p.L}")
    hz = p.hz.copy()
    gx = p.gx.copy()
    mid = p.L // 2  # 1-based site index
    hz[0] = -hz[0]
    gx[0] = -gx[0]
    hz[mid - 1] -= 0.1
    gx[mid - 1] += 0.1
    return replace(p, hz=hz, gx=gx)


def basis_operators(spec: LatentSpec) -> tuple[list[np.ndarray], np.ndarray]:
    """Decoder building blocks: per-free-coupling derivative matrices and
    the constant remainder.

    Returns (ops, H_const) with ops[l] = dH/dtheta_l, so that
    H_const + sum_l theta_l * ops[l] reproduces build_hamiltonian exactly
    for any theta.
    """
    base = spec.fixed_base
    L, Delta = base.L, base.Delta
    ops: list[np.ndarray] = []
    for name in spec.free:
        step = 1 if name == "J1" else 2
        B = np.zeros((base.dim, base.dim))
        for i in range(1, L + 1):
            B += coupling_term(i, i + step, Delta, L)
        ops.append(B)
    zeroed = {name: 0.0 for name in spec.free}
    H_const = build_hamiltonian(replace(base, **zeroed))
    return ops, H_const
