"""Batched float32 training engine.

Stacks the per-point computation of `encoder` over whole mini-batches:
rows = B*D points flow through BLAS matmuls for the dense layers and
through the fused kernels of `_kernels` for everything elementwise. A
pure-numpy backend with identical call structure serves as fallback and
as an independent cross-check of the fused path.

The engine owns reusable workspaces keyed by row count, so a training
loop allocates nothing per step. Backward consumes the workspace filled
by the matching forward call.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .encoder import FIELD_ORDER, EncoderParams

__all__ = ["FlatParams", "BatchEngine", "make_engine", "flatten_params", "unflatten_params", "default_backend"]

f32 = np.float32


def _field_shapes(M: int, w_h: int, theta_dim: int) -> dict[str, tuple[int, ...]]:
    return enc._field_shapes(M, w_h, theta_dim)


@dataclass
class FlatParams:
    """All encoder parameters in one contiguous float32 vector plus named
    views; the flat layout is what the fused Adam kernel updates."""

    data: np.ndarray
    views: dict[str, np.ndarray]
    M: int
    w_h: int
    theta_dim: int

    @classmethod
    def zeros(cls, M: int, w_h: int, theta_dim: int) -> "FlatParams":
        shapes = _field_shapes(M, w_h, theta_dim)
        total = sum(int(np.prod(s)) for s in shapes.values())
        data = np.zeros(total, dtype=f32)
        views = {}
        offset = 0
        for name in FIELD_ORDER:
            size = int(np.prod(shapes[name]))
            views[name] = data[offset:offset + size].reshape(shapes[name])
            offset += size
        return cls(data=data, views=views, M=M, w_h=w_h, theta_dim=theta_dim)

    def load(self, params: EncoderParams) -> "FlatParams":
        for name in FIELD_ORDER:
            self.views[name][...] = getattr(params, name)
        return self


def flatten_params(params: EncoderParams) -> FlatParams:
    return FlatParams.zeros(params.M, params.w_h, params.theta_dim).load(params.astype(f32))


def unflatten_params(fp: FlatParams) -> EncoderParams:
    return EncoderParams(*(fp.views[name].copy() for name in FIELD_ORDER))


def default_backend() -> str:
    """"numba" when importable, else "numpy"; EIGENLEARN_BACKEND overrides."""
    forced = os.environ.get("EIGENLEARN_BACKEND", "").strip().lower()
    if forced in ("numba", "numpy"):
        return forced
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:  # pragma: no cover - numba is a hard dependency
        return "numpy"


class _Workspace:
    """Reusable buffers for one row count (rows = batch_samples * D)."""

    def __init__(self, rows: int, M: int, w_h: int, n_samples: int):
        shape = (rows, w_h)
        self.rows = rows
        self.n_samples = n_samples
        self.x = np.empty((rows, M), f32)
        self.h = np.empty(shape, f32)
        self.s2 = np.empty(shape, f32)
        self.a2 = np.empty(shape, f32)
        self.a3 = np.empty(shape, f32)   # reused as d_s2 and d_h scratch in backward
        self.d_a = np.empty(shape, f32)  # d_a3 then d_a2
        self.d_z = np.empty(shape, f32)  # skip grad, then d_a1
        self.mu1 = np.empty(rows, f32)
        self.inv1 = np.empty(rows, f32)
        self.mu2 = np.empty(rows, f32)
        self.inv2 = np.empty(rows, f32)
        self.mu3 = np.empty(rows, f32)
        self.inv3 = np.empty(rows, f32)
        self.pool = np.empty((n_samples, w_h), f32)
        self.u = np.empty((n_samples, w_h), f32)
        self.sig_u = np.empty((n_samples, w_h), f32)
        self.r1 = np.empty((n_samples, w_h), f32)


class BatchEngine:
    """Forward/backward over stacked (B, D, M) inputs at fixed D.

    backend "numba" runs the fused kernels; "numpy" runs the reference
    implementation from `encoder` behind the same interface.
    """

    def __init__(self, M: int, w_h: int, theta_dim: int, D: int, backend: str | None = None):
        self.M, self.w_h, self.theta_dim, self.D = M, w_h, theta_dim, D
        self.backend = backend or default_backend()
        if self.backend not in ("numba", "numpy"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "numba":
            from . import _kernels
            _kernels.warmup(w_h=min(w_h, 8), m_dim=min(M, 2))
            self._k = _kernels
        self._workspaces: dict[int, _Workspace] = {}
        self._grad = FlatParams.zeros(M, w_h, theta_dim)
        self._last: _Workspace | None = None
        self._ref_cache = None

    def _workspace(self, n_samples: int) -> _Workspace:
        rows = n_samples * self.D
        ws = self._workspaces.get(rows)
        if ws is None:
            ws = _Workspace(rows, self.M, self.w_h, n_samples)
            self._workspaces[rows] = ws
        return ws

    # -- forward -----------------------------------------------------------

    def forward(self, fp: FlatParams, psi: np.ndarray) -> np.ndarray:
        """psi (B, D, M) float32 -> latents (B, theta_dim) float32."""
        if psi.ndim != 3 or psi.shape[1] != self.D or psi.shape[2] != self.M:
            raise ValueError(f"expected psi of shape (B, {self.D}, {self.M}), got {psi.shape}")
        if self.backend == "numpy":
            params = unflatten_params(fp)
            theta, cache = enc.forward_batch(params, psi)
            self._ref_cache = (params, cache)
            return theta
        B = psi.shape[0]
        ws = self._workspace(B)
        v = fp.views
        np.copyto(ws.x, psi.reshape(B * self.D, self.M))
        self._k.lift_ln_silu_fwd(ws.x, v["w_in"], v["b_in"], v["ln1_scale"], v["ln1_shift"],
                                 ws.h, ws.mu1, ws.inv1)
        np.matmul(ws.h, v["w_r1"], out=ws.a2)
        self._k.ln_silu_fwd(ws.a2, v["b_r1"], v["ln2_scale"], v["ln2_shift"], ws.s2, ws.mu2, ws.inv2)
        np.matmul(ws.s2, v["w_r2"], out=ws.a3)
        self._k.skip_ln_silu_pool_fwd(ws.a3, v["b_r2"], v["ln3_scale"], v["ln3_shift"],
                                      ws.h, ws.pool, ws.mu3, ws.inv3, self.D)
        np.matmul(ws.pool, v["w_out1"], out=ws.u)
        ws.u += v["b_out1"]
        np.negative(ws.u, out=ws.sig_u)
        np.exp(ws.sig_u, out=ws.sig_u)
        ws.sig_u += f32(1.0)
        np.reciprocal(ws.sig_u, out=ws.sig_u)
        np.multiply(ws.u, ws.sig_u, out=ws.r1)
        self._last = ws
        return ws.r1 @ v["w_out2"] + v["b_out2"]

    # -- backward ----------------------------------------------------------

    def backward(self, fp: FlatParams, d_theta: np.ndarray) -> FlatParams:
        """Gradient of sum_b d_theta[b] . theta[b]; returns an engine-owned
        FlatParams overwritten on every call."""
        if self.backend == "numpy":
            params, cache = self._ref_cache
            grads = enc.backward_batch(params, cache, d_theta.astype(f32))
            return self._grad.load(grads)
        ws = self._last
        if ws is None:
            raise RuntimeError("backward called before forward")
        v = fp.views
        g = self._grad
        g.data[...] = 0.0
        d_theta = np.ascontiguousarray(d_theta, dtype=f32)

        np.matmul(ws.r1.T, d_theta, out=g.views["w_out2"])
        np.sum(d_theta, axis=0, out=g.views["b_out2"])
        d_r1 = d_theta @ v["w_out2"].T
        # silu'(u) from the cached sigmoid
        d_u = d_r1 * (ws.sig_u * (f32(1.0) + ws.u * (f32(1.0) - ws.sig_u)))
        np.matmul(ws.pool.T, d_u, out=g.views["w_out1"])
        np.sum(d_u, axis=0, out=g.views["b_out1"])
        d_pool = d_u @ v["w_out1"].T

        self._k.skip_pool_bwd(d_pool, ws.a3, v["b_r2"], v["ln3_scale"], v["ln3_shift"],
                              ws.h, ws.mu3, ws.inv3, ws.d_a, ws.d_z,
                              g.views["ln3_scale"], g.views["ln3_shift"], g.views["b_r2"], self.D)
        np.matmul(ws.s2.T, ws.d_a, out=g.views["w_r2"])
        np.matmul(ws.d_a, v["w_r2"].T, out=ws.a3)  # a3 now holds d_s2
        self._k.ln_silu_bwd(ws.a3, ws.a2, v["b_r1"], v["ln2_scale"], v["ln2_shift"],
                            ws.mu2, ws.inv2, ws.d_a,
                            g.views["ln2_scale"], g.views["ln2_shift"], g.views["b_r1"])
        np.matmul(ws.h.T, ws.d_a, out=g.views["w_r1"])
        np.matmul(ws.d_a, v["w_r1"].T, out=ws.a3)  # a3 now holds the non-skip part of d_h
        self._k.lift_ln_silu_bwd(ws.a3, ws.d_z, ws.x, v["w_in"], v["b_in"],
                                 v["ln1_scale"], v["ln1_shift"], ws.mu1, ws.inv1, ws.h,
                                 g.views["ln1_scale"], g.views["ln1_shift"], g.views["b_in"])
        np.matmul(ws.x.T, ws.h, out=g.views["w_in"])
        return g

    # -- optimizer ---------------------------------------------------------

    def adam_update(self, fp: FlatParams, grad: FlatParams, m: np.ndarray, vmom: np.ndarray,
                    t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                    eps: float = 1e-8) -> None:
        """In-place Adam step on the flat parameter vector (moment arrays
        live with the caller); t is the 1-based step counter."""
        c1 = f32(1.0 / (1.0 - beta1 ** t))
        c2 = f32(1.0 / (1.0 - beta2 ** t))
        if self.backend == "numba":
            self._k.adam_step(fp.data, grad.data, m, vmom, c1, c2,
                              f32(lr), f32(beta1), f32(beta2), f32(eps))
            return
        b1, b2 = f32(beta1), f32(beta2)
        m[...] = b1 * m + (f32(1.0) - b1) * grad.data
        vmom[...] = b2 * vmom + (f32(1.0) - b2) * grad.data * grad.data
        fp.data -= f32(lr) * (m * c1) / (np.sqrt(vmom * c2) + f32(eps))


def make_engine(M: int, w_h: int, theta_dim: int, D: int, backend: str | None = None) -> BatchEngine:
    return BatchEngine(M, w_h, theta_dim, D, backend=backend)
