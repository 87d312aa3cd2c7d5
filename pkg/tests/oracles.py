"""Independent oracles the tests check the package against.

Each oracle deliberately takes a different computational route from the
implementation it validates: literal Kronecker products instead of bit
arithmetic, power iteration with deflation instead of LAPACK, explicit
reduced density matrices instead of singular values, and central finite
differences instead of analytic gradients.
"""

from __future__ import annotations

from functools import reduce

import numpy as np

_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_ID = np.eye(2, dtype=complex)
_PAULI = {"x": _SX, "y": _SY, "z": _SZ}


def kron_embed(site: int, axis: str, L: int) -> np.ndarray:
    """Literal I x ... x sigma x ... x I product, complex arithmetic."""
    ops = [_ID] * L
    ops[site - 1] = _PAULI[axis]
    return reduce(np.kron, ops)


def kron_coupling(i: int, j: int, delta: float, L: int) -> np.ndarray:
    """xx + yy + delta*zz bond via explicit Kronecker products (real part)."""
    i = (i - 1) % L + 1
    j = (j - 1) % L + 1
    mat = (
        kron_embed(i, "x", L) @ kron_embed(j, "x", L)
        + kron_embed(i, "y", L) @ kron_embed(j, "y", L)
        + delta * kron_embed(i, "z", L) @ kron_embed(j, "z", L)
    )
    assert np.abs(mat.imag).max() < 1e-12
    return mat.real


def kron_hamiltonian(p) -> np.ndarray:
    """Full chain Hamiltonian assembled purely from Kronecker products."""
    dim = 2 ** p.L
    H = np.zeros((dim, dim), dtype=complex)
    for i in range(1, p.L + 1):
        H += p.J1 * kron_coupling(i, i + 1, p.Delta, p.L)
        H += p.J2 * kron_coupling(i, i + 2, p.Delta, p.L)
        H += p.hz[i - 1] * kron_embed(i, "z", p.L)
        H += p.gx[i - 1] * kron_embed(i, "x", p.L)
    assert np.abs(H.imag).max() < 1e-12
    return H.real


def eigvals_power_deflation(H: np.ndarray, tol: float = 1e-9, max_iter: int = 50_000,
                            seed: int = 0, squarings: int = 4) -> np.ndarray:
    """All eigenvalues by shifted power iteration with deflation.

    The spectrum is shifted positive (Gershgorin bound), the operator is
    repeatedly squared to sharpen the convergence ratio, and each new
    eigenvector is found by power iteration while projecting out the ones
    already found. Eigenvalues come from Rayleigh quotients with the
    original matrix and are accepted on the true residual |Hv - lam*v|.
    Completely independent of any library eigensolver.
    """
    H = np.asarray(H, dtype=np.float64)
    dim = H.shape[0]
    shift = np.abs(H).sum(axis=1).max()
    A = H + shift * np.eye(dim)
    for _ in range(squarings):
        A = A @ A
        A /= np.abs(A).max()
    rng = np.random.default_rng(seed)
    V = np.zeros((dim, 0))
    h_scale = max(1.0, np.abs(H).sum(axis=1).max())
    values = []
    for _ in range(dim):
        v = rng.standard_normal(dim)
        v -= V @ (V.T @ v)
        v /= np.linalg.norm(v)
        for it in range(max_iter):
            w = A @ v
            w -= V @ (V.T @ w)
            norm = np.linalg.norm(w)
            if norm == 0.0:
                w = rng.standard_normal(dim)
                w -= V @ (V.T @ w)
                norm = np.linalg.norm(w)
            v = w / norm
            if it % 4 == 3:
                lam = v @ (H @ v)
                if np.linalg.norm(H @ v - lam * v) <= tol * h_scale:
                    break
        values.append(v @ (H @ v))
        V = np.concatenate([V, v[:, None]], axis=1)
    return np.sort(np.array(values))


def entropy_partial_trace(state: np.ndarray, L: int, cut: int) -> float:
    """Von Neumann entropy via the explicit reduced density matrix."""
    psi = np.asarray(state, dtype=np.float64).reshape(2 ** cut, 2 ** (L - cut))
    rho = psi @ psi.T
    lam = np.linalg.eigvalsh(rho)
    lam = lam[lam > 1e-14]
    return float(-np.sum(lam * np.log(lam)))


def central_difference(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for k in range(xf.size):
        orig = xf[k]
        xf[k] = orig + step
        f_plus = f(x)
        xf[k] = orig - step
        f_minus = f(x)
        xf[k] = orig
        flat[k] = (f_plus - f_minus) / (2.0 * step)
    return grad
