"""Point-wise MLP encoder mapping eigenstate amplitudes to latent couplings.

Each of the D basis amplitudes of the input block forms one M-feature
point. Every point passes through the same small network: a linear lift
M -> w_h with feature normalization and SiLU, one residual block
x -> SiLU(x + f(x)) built from two normalized linear layers, a mean pool
over the D points (which makes the encoding invariant under permutations
of the basis ordering), and a two-layer readout to the latent vector.

This module is the reference implementation: plain numpy, any float
dtype, exact manual backpropagation. The batched float32 training path
lives in `engine`, which reproduces this math with fused kernels; both
are checked against each other and against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

__all__ = [
    "EncoderParams",
    "ForwardCache",
    "init_params",
    "num_parameters",
    "forward",
    "forward_batch",
    "backward",
    "backward_batch",
    "save_params",
    "load_params",
    "FIELD_ORDER",
]

LN_EPS = 1e-5

# Serialization and flattening order; matches the declaration order below.
FIELD_ORDER = (
    "w_in", "b_in",
    "ln1_scale", "ln1_shift",
    "ln2_scale", "ln2_shift",
    "ln3_scale", "ln3_shift",
    "w_r1", "b_r1",
    "w_r2", "b_r2",
    "w_out1", "b_out1",
    "w_out2", "b_out2",
)


@dataclass
class EncoderParams:
    """All trainable weights. Doubles as the container for gradients."""

    w_in: np.ndarray      # (M, w_h) per-point lift
    b_in: np.ndarray      # (w_h,)
    ln1_scale: np.ndarray  # (w_h,) feature-norm scale/shift, three stages
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    ln3_scale: np.ndarray
    ln3_shift: np.ndarray
    w_r1: np.ndarray      # (w_h, w_h) residual block
    b_r1: np.ndarray
    w_r2: np.ndarray      # (w_h, w_h)
    b_r2: np.ndarray
    w_out1: np.ndarray    # (w_h, w_h) readout
    b_out1: np.ndarray
    w_out2: np.ndarray    # (w_h, theta_dim)
    b_out2: np.ndarray

    @property
    def M(self) -> int:
        return self.w_in.shape[0]

    @property
    def w_h(self) -> int:
        return self.w_in.shape[1]

    @property
    def theta_dim(self) -> int:
        return self.w_out2.shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self.w_in.dtype

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in FIELD_ORDER]

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(*(a.astype(dtype) for a in self.arrays()))

    def copy(self) -> "EncoderParams":
        return EncoderParams(*(a.copy() for a in self.arrays()))


assert tuple(f.name for f in fields(EncoderParams)) == FIELD_ORDER


def init_params(M: int, w_h: int, theta_dim: int, seed: int, dtype=np.float32) -> EncoderParams:
    """Deterministic initialization: Glorot-uniform weights, zero biases,
    unit normalization scales.

    The five weight matrices are drawn in a fixed order from one PCG64
    stream, so identical seeds give bit-identical parameters.
    """
    if min(M, w_h, theta_dim) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)

    zeros = lambda n: np.zeros(n, dtype=dtype)
    ones = lambda n: np.ones(n, dtype=dtype)
    return EncoderParams(
        w_in=glorot(M, w_h), b_in=zeros(w_h),
        ln1_scale=ones(w_h), ln1_shift=zeros(w_h),
        ln2_scale=ones(w_h), ln2_shift=zeros(w_h),
        ln3_scale=ones(w_h), ln3_shift=zeros(w_h),
        w_r1=glorot(w_h, w_h), b_r1=zeros(w_h),
        w_r2=glorot(w_h, w_h), b_r2=zeros(w_h),
        w_out1=glorot(w_h, w_h), b_out1=zeros(w_h),
        w_out2=glorot(w_h, theta_dim), b_out2=zeros(theta_dim),
    )


def num_parameters(params: EncoderParams) -> int:
    return int(sum(a.size for a in params.arrays()))


@dataclass
class ForwardCache:
    """Intermediates of one batched forward pass, consumed by backward."""

    psi: np.ndarray   # (B, D, M) input
    a1: np.ndarray    # (B*D, w_h) pre-norm activations, three stages
    xh1: np.ndarray
    inv1: np.ndarray
    n1: np.ndarray
    h: np.ndarray
    a2: np.ndarray
    xh2: np.ndarray
    inv2: np.ndarray
    n2: np.ndarray
    s2: np.ndarray
    a3: np.ndarray
    xh3: np.ndarray
    inv3: np.ndarray
    z: np.ndarray
    g: np.ndarray     # (B, w_h) pooled
    u: np.ndarray     # (B, w_h) readout pre-activation
    r1: np.ndarray


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _silu(x: np.ndarray) -> np.ndarray:
    return x * _sigmoid(x)


def _silu_grad(x: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _ln_forward(a: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    # Per-point feature normalization: biased variance over the w_h features.
    mu = a.mean(axis=1, keepdims=True)
    xc = a - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=a.dtype))
    xh = xc * inv
    return xh * scale + shift, xh, inv


def _ln_backward(dn: np.ndarray, xh: np.ndarray, inv: np.ndarray, scale: np.ndarray):
    dxh = dn * scale
    m1 = dxh.mean(axis=1, keepdims=True)
    m2 = np.mean(dxh * xh, axis=1, keepdims=True)
    da = inv * (dxh - m1 - xh * m2)
    return da, np.einsum("ij,ij->j", dn, xh), dn.sum(axis=0)


def forward_batch(params: EncoderParams, psi: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Encode a batch of state blocks (B, D, M) into latents (B, theta_dim)."""
    psi = np.asarray(psi, dtype=params.dtype)
    if psi.ndim != 3 or psi.shape[2] != params.M:
        raise ValueError(f"expected psi of shape (B, D, {params.M}), got {psi.shape}")
    B, D, M = psi.shape
    x = psi.reshape(B * D, M)

    a1 = x @ params.w_in + params.b_in
    n1, xh1, inv1 = _ln_forward(a1, params.ln1_scale, params.ln1_shift)
    h = _silu(n1)
    a2 = h @ params.w_r1 + params.b_r1
    n2, xh2, inv2 = _ln_forward(a2, params.ln2_scale, params.ln2_shift)
    s2 = _silu(n2)
    a3 = s2 @ params.w_r2 + params.b_r2
    n3, xh3, inv3 = _ln_forward(a3, params.ln3_scale, params.ln3_shift)
    z = h + n3
    h2 = _silu(z)
    g = h2.reshape(B, D, params.w_h).mean(axis=1)
    u = g @ params.w_out1 + params.b_out1
    r1 = _silu(u)
    theta = r1 @ params.w_out2 + params.b_out2

    cache = ForwardCache(psi=psi, a1=a1, xh1=xh1, inv1=inv1, n1=n1, h=h,
                         a2=a2, xh2=xh2, inv2=inv2, n2=n2, s2=s2,
                         a3=a3, xh3=xh3, inv3=inv3, z=z, g=g, u=u, r1=r1)
    return theta, cache


def forward(params: EncoderParams, psi: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Single-sample encode: psi (D, M) -> latent vector (theta_dim,)."""
    psi = np.asarray(psi)
    if psi.ndim != 2:
        raise ValueError(f"expected psi of shape (D, M), got {psi.shape}")
    theta, cache = forward_batch(params, psi[None, :, :])
    return theta[0], cache


def backward_batch(params: EncoderParams, cache: ForwardCache, d_theta: np.ndarray) -> EncoderParams:
    """Gradient of sum_b d_theta[b] . theta[b] with respect to every parameter."""
    d_theta = np.asarray(d_theta, dtype=params.dtype)
    B, D, M = cache.psi.shape
    if d_theta.shape != (B, params.theta_dim):
        raise ValueError(f"expected d_theta of shape ({B}, {params.theta_dim}), got {d_theta.shape}")
    w_h = params.w_h
    x = cache.psi.reshape(B * D, M)

    d_w_out2 = cache.r1.T @ d_theta
    d_b_out2 = d_theta.sum(axis=0)
    d_r1 = d_theta @ params.w_out2.T
    d_u = d_r1 * _silu_grad(cache.u)
    d_w_out1 = cache.g.T @ d_u
    d_b_out1 = d_u.sum(axis=0)
    d_g = d_u @ params.w_out1.T

    d_h2 = np.broadcast_to(d_g[:, None, :] / D, (B, D, w_h)).reshape(B * D, w_h)
    d_z = d_h2 * _silu_grad(cache.z)
    d_a3, d_g3, d_s3 = _ln_backward(d_z, cache.xh3, cache.inv3, params.ln3_scale)
    d_w_r2 = cache.s2.T @ d_a3
    d_b_r2 = d_a3.sum(axis=0)
    d_s2 = d_a3 @ params.w_r2.T
    d_n2 = d_s2 * _silu_grad(cache.n2)
    d_a2, d_g2, d_s2s = _ln_backward(d_n2, cache.xh2, cache.inv2, params.ln2_scale)
    d_w_r1 = cache.h.T @ d_a2
    d_b_r1 = d_a2.sum(axis=0)
    d_h = d_z + d_a2 @ params.w_r1.T
    d_n1 = d_h * _silu_grad(cache.n1)
    d_a1, d_g1, d_s1 = _ln_backward(d_n1, cache.xh1, cache.inv1, params.ln1_scale)
    d_w_in = x.T @ d_a1
    d_b_in = d_a1.sum(axis=0)

    return EncoderParams(
        w_in=d_w_in, b_in=d_b_in,
        ln1_scale=d_g1, ln1_shift=d_s1,
        ln2_scale=d_g2, ln2_shift=d_s2s,
        ln3_scale=d_g3, ln3_shift=d_s3,
        w_r1=d_w_r1, b_r1=d_b_r1,
        w_r2=d_w_r2, b_r2=d_b_r2,
        w_out1=d_w_out1, b_out1=d_b_out1,
        w_out2=d_w_out2, b_out2=d_b_out2,
    )


def backward(params: EncoderParams, cache: ForwardCache, d_theta: np.ndarray) -> EncoderParams:
    """Single-sample gradient of d_theta . theta with respect to the parameters."""
    d_theta = np.atleast_1d(np.asarray(d_theta, dtype=params.dtype))
    return backward_batch(params, cache, d_theta[None, :])


_MAGIC = b"ENC1"


def save_params(params: EncoderParams, path: str | Path) -> None:
    """Checkpoint: magic, (M, w_h, theta_dim) as little-endian int64, then
    every field flattened row-major as little-endian float32 in FIELD_ORDER."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<3q", params.M, params.w_h, params.theta_dim))
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_params(path: str | Path) -> EncoderParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not an encoder checkpoint (bad magic)")
    M, w_h, theta_dim = struct.unpack_from("<3q", raw, 4)
    shapes = _field_shapes(M, w_h, theta_dim)
    offset = 4 + 24
    arrays = []
    for name in FIELD_ORDER:
        shape = shapes[name]
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays.append(arr.astype(np.float32))
        offset += 4 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter payload")
    return EncoderParams(*arrays)


def _field_shapes(M: int, w_h: int, theta_dim: int) -> dict[str, tuple[int, ...]]:
    return {
        "w_in": (M, w_h), "b_in": (w_h,),
        "ln1_scale": (w_h,), "ln1_shift": (w_h,),
        "ln2_scale": (w_h,), "ln2_shift": (w_h,),
        "ln3_scale": (w_h,), "ln3_shift": (w_h,),
        "w_r1": (w_h, w_h), "b_r1": (w_h,),
        "w_r2": (w_h, w_h), "b_r2": (w_h,),
        "w_out1": (w_h, w_h), "b_out1": (w_h,),
        "w_out2": (w_h, theta_dim), "b_out2": (theta_dim,),
    }
