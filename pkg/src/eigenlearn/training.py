"""Dataset generation over the coupling family and the training loop.

The pipeline per parameter draw: assemble the symmetry-broken Hamiltonian,
diagonalize, select eigenstates by protocol, project the decoder basis
through them. Eigenvector blocks are narrowed to float32 for the network
input; energies and basis projections stay float64 because they set the
loss accuracy floor.

Every stochastic stage (parameter sampling, weight init, train/val split,
batch shuffling) draws from its own generator seeded by a label derived
from the master seed, so runs are reproducible stage by stage.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoder as enc
from .encoder import EncoderParams
from .engine import FlatParams, flatten_params, make_engine, unflatten_params
from .eigensolver import diagonalize, mean_energy_index, near_degenerate_pairs
from .loss import LossConfig, ProjectedBasis, project_basis, rayleigh_loss, spectral_error, theta_loss
from .protocols import ProtocolKind, SpectralProtocol, StateBlock, build_state_block, select_indices
from .spin_chain import LatentSpec, basis_operators

__all__ = [
    "Dataset",
    "DatasetSample",
    "TrainConfig",
    "AdamState",
    "History",
    "TrainingDiverged",
    "derive_seed",
    "sample_parameters",
    "generate_dataset",
    "split_dataset",
    "init_adam_state",
    "adam_update",
    "run_training",
    "evaluate",
    "save_dataset",
    "load_dataset",
    "write_history_csv",
]

f32 = np.float32

# One interval union per free parameter, e.g. ((-2.0, 2.0),) or
# ((-2.0, -1.0), (0.5, 2.0)).
ParamRange = tuple[tuple[float, float], ...]


def derive_seed(master: int, label: str) -> int:
    """Independent per-stage seed: first 8 bytes of sha256("master:label")."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class DatasetSample:
    theta_true: np.ndarray
    block: StateBlock
    pb: ProjectedBasis


@dataclass
class Dataset:
    """Samples plus the generation metadata needed to reproduce them.

    latent is the (symmetry-broken) parameterization actually used to
    build the Hamiltonians; it is None for datasets loaded from file,
    which only persist the numeric payload.
    """

    samples: list[DatasetSample]
    meta: dict
    latent: LatentSpec | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_states(self) -> int:
        return self.samples[0].block.psi.shape[1]

    @property
    def dim(self) -> int:
        return self.samples[0].block.psi.shape[0]

    @property
    def theta_dim(self) -> int:
        return self.samples[0].theta_true.shape[0]


def _union_lengths(union: ParamRange) -> np.ndarray:
    lengths = np.array([hi - lo for lo, hi in union], dtype=np.float64)
    if np.any(lengths <= 0.0):
        raise ValueError(f"empty or inverted interval in {union}")
    return lengths


def _grid_over_union(union: ParamRange, count: int) -> np.ndarray:
    lengths = _union_lengths(union)
    if count < len(union):
        union = union[: max(count, 1)]
        lengths = lengths[: max(count, 1)]
    # proportional allocation, largest remainder, at least one per interval
    raw = lengths / lengths.sum() * count
    alloc = np.maximum(np.floor(raw).astype(int), 1)
    while alloc.sum() > count:
        alloc[np.argmax(alloc)] -= 1
    while alloc.sum() < count:
        alloc[np.argmax(raw - alloc)] += 1
    pieces = [np.linspace(lo, hi, k) for (lo, hi), k in zip(union, alloc)]
    return np.sort(np.concatenate(pieces))


def sample_parameters(
    ranges: Sequence[ParamRange],
    n_samples: int,
    mode: str = "uniform",
    seed: int = 0,
) -> np.ndarray:
    """Latent parameter draws, shape (n_samples, theta_dim).

    grid: per-axis endpoint-inclusive grids of size ceil(n^(1/theta_dim)),
    Cartesian product truncated to n_samples; interval unions receive
    points proportional to their lengths. uniform: i.i.d. draws, interval
    chosen with probability proportional to its length; deterministic in
    the seed.
    """
    ranges = [tuple((float(lo), float(hi)) for lo, hi in union) for union in ranges]
    ndim = len(ranges)
    if ndim == 0 or n_samples < 1:
        raise ValueError("need at least one free parameter and one sample")
    if mode == "grid":
        per_axis = int(np.ceil(n_samples ** (1.0 / ndim)))
        axes = [_grid_over_union(union, per_axis) for union in ranges]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return pts[:n_samples]
    if mode != "uniform":
        raise ValueError(f"mode must be 'grid' or 'uniform', got {mode!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    cols = []
    for union in ranges:
        lengths = _union_lengths(union)
        probs = lengths / lengths.sum()
        pick = rng.choice(len(union), size=n_samples, p=probs)
        u = rng.random(n_samples)
        lo = np.array([iv[0] for iv in union])
        hi = np.array([iv[1] for iv in union])
        cols.append(lo[pick] + u * (hi[pick] - lo[pick]))
    return np.stack(cols, axis=1)


def generate_dataset(
    thetas: np.ndarray,
    latent: LatentSpec,
    protocol: SpectralProtocol,
    seed: int = 0,
    apply_alteration: bool = True,
) -> Dataset:
    """Build, diagonalize and project one sample per parameter row.

    Hamiltonians are assembled through the affine decoder form
    H_const + sum_l theta_l B_l (identical to the direct build to well
    below solver accuracy), so generation is deterministic and cheap.
    apply_alteration=False skips the symmetry-breaking perturbations and
    exists for symmetry unit tests only.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    spec = latent.altered() if apply_alteration else latent
    if thetas.shape[1] != spec.theta_dim:
        raise ValueError(f"theta rows must have length {spec.theta_dim}, got {thetas.shape[1]}")
    ops, h_const = basis_operators(spec)
    basis = (ops, h_const)
    samples: list[DatasetSample] = []
    near_degenerate_total = 0
    for k, theta in enumerate(thetas):
        try:
            H = h_const.copy()
            for t, B in zip(theta, ops):
                H += t * B
            spectrum = diagonalize(H)
            near_degenerate_total += len(near_degenerate_pairs(spectrum.energies))
            m_av = mean_energy_index(spectrum, H)
            idx = select_indices(protocol, spectrum, m_av)
            block = build_state_block(spectrum, idx, theta)
            pb = project_basis(block, basis)
            block = replace(block, psi=np.ascontiguousarray(block.psi, dtype=f32))
            samples.append(DatasetSample(theta_true=theta.copy(), block=block, pb=pb))
        except Exception as err:
            raise RuntimeError(f"dataset generation failed at sample {k}: {err}") from err
    meta = {
        "L": spec.L,
        "dim": 2 ** spec.L,
        "protocol": protocol.label(),
        "n_states": protocol.n_states,
        "n_samples": len(samples),
        "theta_dim": spec.theta_dim,
        "free": list(spec.free),
        "seed": seed,
        "altered": bool(apply_alteration),
        "near_degenerate_total": near_degenerate_total,
    }
    return Dataset(samples=samples, meta=meta, latent=spec)


def _split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction < 1.0:
        raise ValueError("split fraction must lie strictly between 0 and 1")
    if n < 2:
        raise ValueError("need at least two samples to split")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    return perm[:n_train], perm[n_train:]


def split_dataset(ds: Dataset, split_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split into disjoint, exhaustive train/val parts."""
    tr, va = _split_indices(len(ds), split_fraction, seed)
    mk = lambda idx, tag: Dataset(
        samples=[ds.samples[i] for i in idx],
        meta={**ds.meta, "split": tag, "n_samples": len(idx)},
        latent=ds.latent,
    )
    return mk(tr, "train"), mk(va, "val")


# -- optimizer (reference, structure-of-arrays form) -------------------------


@dataclass
class AdamState:
    m: EncoderParams
    v: EncoderParams
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8


def init_adam_state(params: EncoderParams, beta1: float = 0.9, beta2: float = 0.999,
                    eps_opt: float = 1e-8) -> AdamState:
    zeros = EncoderParams(*(np.zeros_like(a) for a in params.arrays()))
    return AdamState(m=zeros, v=zeros.copy(), t=0, beta1=beta1, beta2=beta2, eps_opt=eps_opt)


def adam_update(params: EncoderParams, grads: EncoderParams, state: AdamState,
                lr: float) -> tuple[EncoderParams, AdamState]:
    """Standard Adam recurrence with bias correction, updating in place.

    Matches the fused flat kernel bit for bit at float32: identical
    operation order per element.
    """
    for g in grads.arrays():
        if not np.isfinite(g).all():
            raise ValueError("non-finite gradient; aborting the optimizer step")
    state.t += 1
    dt = params.dtype.type
    b1, b2, eps = dt(state.beta1), dt(state.beta2), dt(state.eps_opt)
    c1 = dt(1.0 / (1.0 - state.beta1 ** state.t))
    c2 = dt(1.0 / (1.0 - state.beta2 ** state.t))
    one = dt(1.0)
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m[...] = b1 * m + (one - b1) * g
        v[...] = b2 * v + (one - b2) * g * g
        p -= dt(lr) * (m * c1) / (np.sqrt(v * c2) + eps)
    return params, state


# -- training loop ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int
    learning_rate: float = 1e-3
    batch_size: int = 64
    gamma: float = 0.1
    epsilon: float = 1e-8
    split_fraction: float = 0.7
    seed: int = 0
    loss_mode: str = "rayleigh"  # or "supervised_theta"
    val_every: int = 1
    backend: str | None = None

    def __post_init__(self) -> None:
        if self.n_epochs < 1:
            raise ValueError("n_epochs must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly between 0 and 1")
        if self.loss_mode not in ("rayleigh", "supervised_theta"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")
        if self.batch_size < 1 or self.val_every < 1:
            raise ValueError("batch_size and val_every must be >= 1")


@dataclass
class History:
    """Per-epoch metrics; validation entries are NaN on epochs where the
    cadence skipped them (val_every > 1)."""

    train_rayleigh: np.ndarray
    val_rayleigh: np.ndarray
    val_theta: np.ndarray


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class _Stacked:
    psi: np.ndarray      # (N, D, M) float32
    G: np.ndarray        # (N, theta_dim, M, M) float64
    G_const: np.ndarray  # (N, M, M) float64
    energies: np.ndarray  # (N, M) float64
    theta: np.ndarray    # (N, theta_dim) float64


def _stack(ds: Dataset) -> _Stacked:
    n = len(ds)
    s0 = ds.samples[0]
    D, M = s0.block.psi.shape
    theta_dim = s0.theta_true.shape[0]
    st = _Stacked(
        psi=np.empty((n, D, M), dtype=f32),
        G=np.empty((n, theta_dim, M, M)),
        G_const=np.empty((n, M, M)),
        energies=np.empty((n, M)),
        theta=np.empty((n, theta_dim)),
    )
    for i, s in enumerate(ds.samples):
        st.psi[i] = s.block.psi
        for l in range(theta_dim):
            st.G[i, l] = s.pb.G[l]
        st.G_const[i] = s.pb.G_const
        st.energies[i] = s.block.energies
        st.theta[i] = s.theta_true
    return st


def _batch_rayleigh(G, G_const, E, theta, gamma, eps):
    """Vectorized rayleigh_loss over a batch; float64 throughout.

    Returns (value (B,), grad (B, theta_dim)); same math as
    loss.rayleigh_loss sample by sample.
    """
    M = E.shape[1]
    R = G_const + np.einsum("bl,blij->bij", theta, G)
    diag = np.einsum("bii->bi", R)
    norm = np.mean(E * E, axis=1) + eps
    if np.any(norm == 0.0):
        raise ValueError("normalization is zero: all target energies vanish and epsilon = 0")
    mism = diag - E
    val = gamma * np.sum(mism * mism, axis=1) / (norm * M)
    g_diag = np.einsum("blii->bli", G)
    grad = 2.0 * gamma * np.einsum("bi,bli->bl", mism, g_diag) / (norm * M)[:, None]
    if M > 1:
        off = np.sum(R * R, axis=(1, 2)) - np.sum(diag * diag, axis=1)
        val += off / (norm * M * (M - 1))
        off_dot = np.einsum("bij,blij->bl", R, G) - np.einsum("bi,bli->bl", diag, g_diag)
        grad += 2.0 * off_dot / (norm * M * (M - 1))[:, None]
    return val, grad


def _batch_objective(st: _Stacked, idx: np.ndarray, theta_tilde: np.ndarray, cfg: TrainConfig):
    """(objective per sample, d objective/d theta~, rayleigh per sample)."""
    theta64 = theta_tilde.astype(np.float64)
    ray_val, ray_grad = _batch_rayleigh(
        st.G[idx], st.G_const[idx], st.energies[idx], theta64, cfg.gamma, cfg.epsilon
    )
    if cfg.loss_mode == "rayleigh":
        return ray_val, ray_grad, ray_val
    diff = theta64 - st.theta[idx]
    sup_val = np.mean(diff * diff, axis=1)
    sup_grad = 2.0 * diff / diff.shape[1]
    return sup_val, sup_grad, ray_val


def _forward_all(engine, fp: FlatParams, psi: np.ndarray, chunk: int) -> np.ndarray:
    outs = []
    for start in range(0, psi.shape[0], chunk):
        outs.append(engine.forward(fp, psi[start:start + chunk]).astype(np.float64))
    return np.concatenate(outs, axis=0)


def run_training(ds: Dataset, cfg: TrainConfig, encoder_init: EncoderParams
                 ) -> tuple[EncoderParams, History]:
    """Mini-batch optimization of the encoder on one dataset.

    The rayleigh mode touches only the projected operators and target
    energies; the generating parameters never reach the loss path.
    Deterministic for a fixed (seed, config, backend) on one machine.
    """
    if len(ds) < 2:
        raise ValueError("dataset too small to split")
    st = _stack(ds)
    n, D, M = st.psi.shape
    theta_dim = st.theta.shape[1]
    if encoder_init.M != M or encoder_init.theta_dim != theta_dim:
        raise ValueError("encoder dimensions do not match the dataset")

    tr_idx, va_idx = _split_indices(n, cfg.split_fraction, derive_seed(cfg.seed, "split"))
    engine = make_engine(M, encoder_init.w_h, theta_dim, D, backend=cfg.backend)
    fp = flatten_params(encoder_init)
    m_mom = np.zeros_like(fp.data)
    v_mom = np.zeros_like(fp.data)
    rng_batch = np.random.Generator(np.random.PCG64(derive_seed(cfg.seed, "batch")))

    hist = History(
        train_rayleigh=np.full(cfg.n_epochs, np.nan),
        val_rayleigh=np.full(cfg.n_epochs, np.nan),
        val_theta=np.full(cfg.n_epochs, np.nan),
    )
    psi_val = np.ascontiguousarray(st.psi[va_idx])
    step = 0
    for epoch in range(cfg.n_epochs):
        perm = rng_batch.permutation(tr_idx.shape[0])
        order = tr_idx[perm]
        ray_sum = 0.0
        for start in range(0, order.shape[0], cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            x = np.ascontiguousarray(st.psi[batch])
            theta_tilde = engine.forward(fp, x)
            _, grad_theta, ray = _batch_objective(st, batch, theta_tilde, cfg)
            bsum = float(ray.sum())
            if not np.isfinite(bsum) or not np.isfinite(grad_theta).all():
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
            ray_sum += bsum
            d_theta = (grad_theta / batch.shape[0]).astype(f32)
            grad = engine.backward(fp, d_theta)
            step += 1
            engine.adam_update(fp, grad, m_mom, v_mom, step, cfg.learning_rate)
        hist.train_rayleigh[epoch] = ray_sum / order.shape[0]

        if (epoch + 1) % cfg.val_every == 0 or epoch == cfg.n_epochs - 1:
            theta_va = _forward_all(engine, fp, psi_val, cfg.batch_size)
            ray_va, _ = _batch_rayleigh(
                st.G[va_idx], st.G_const[va_idx], st.energies[va_idx], theta_va,
                cfg.gamma, cfg.epsilon,
            )
            diff = theta_va - st.theta[va_idx]
            hist.val_rayleigh[epoch] = float(ray_va.mean())
            hist.val_theta[epoch] = float(np.mean(np.sum(diff * diff, axis=1) / theta_dim))
    return unflatten_params(fp), hist


def evaluate(params: EncoderParams, ds: Dataset, loss_cfg: LossConfig = LossConfig(),
             spectral: bool = False, fidelity: bool = False, chunk: int = 64,
             backend: str | None = None) -> dict:
    """Post-training metrics on a dataset (typically the validation split).

    spectral/fidelity rebuild and diagonalize H(theta~) once per sample,
    which training itself never does; they need ds.latent and are off by
    default.
    """
    st = _stack(ds)
    n, D, M = st.psi.shape
    engine = make_engine(M, params.w_h, st.theta.shape[1], D, backend=backend)
    fp = flatten_params(params)
    theta_tilde = _forward_all(engine, fp, st.psi, chunk)
    ray, _ = _batch_rayleigh(st.G, st.G_const, st.energies, theta_tilde, loss_cfg.gamma, loss_cfg.epsilon)
    diff = theta_tilde - st.theta
    tl = np.sum(diff * diff, axis=1) / diff.shape[1]
    out = {
        "n_samples": n,
        "mean_theta_loss": float(tl.mean()),
        "median_theta_loss": float(np.median(tl)),
        "mean_rayleigh": float(ray.mean()),
        "theta_tilde": theta_tilde,
        "theta_loss": tl,
    }
    if spectral or fidelity:
        if ds.latent is None:
            raise ValueError("spectral/fidelity evaluation needs the dataset's latent specification")
        ops, h_const = basis_operators(ds.latent)
        spect_errs, fids = [], []
        for i, s in enumerate(ds.samples):
            H_true = h_const.copy()
            H_tilde = h_const.copy()
            for l, B in enumerate(ops):
                H_true += st.theta[i, l] * B
                H_tilde += theta_tilde[i, l] * B
            sp = diagonalize(H_tilde)
            if spectral:
                true_e = np.linalg.eigvalsh(H_true)
                spect_errs.append(spectral_error(true_e, sp.energies))
            if fidelity:
                cols = s.block.indices - 1
                ov = np.einsum("ij,ij->j", s.block.psi.astype(np.float64), sp.vectors[:, cols])
                fids.append(float(np.mean(ov * ov)))
        if spectral:
            out["mean_spectral_error"] = float(np.mean(spect_errs))
            out["spectral_error"] = np.array(spect_errs)
        if fidelity:
            out["mean_fidelity"] = float(np.mean(fids))
    return out


# -- persistence --------------------------------------------------------------

_DS_MAGIC = b"EIGD"
_DS_VERSION = 1
_PROTO_CODE = {ProtocolKind.LOW: 0, ProtocolKind.MID: 1, ProtocolKind.SINGLE: 2}
_PROTO_FROM_CODE = {v: k for k, v in _PROTO_CODE.items()}


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Binary layout: magic, u32 version, (L, D, M, theta_dim, N) as int64,
    protocol tag (u32 kind code + int64 size parameter), then per sample:
    theta (f64), indices (i64), energies (f64), psi column-major (f32),
    the G_l blocks and G_const (f64). All little-endian."""
    path = Path(path)
    s0 = ds.samples[0]
    D, M = s0.block.psi.shape
    theta_dim = s0.theta_true.shape[0]
    L = int(ds.meta.get("L", int(round(np.log2(D)))))
    kind, param = _protocol_tag(ds.meta.get("protocol", "low:M=%d" % M))
    with path.open("wb") as fh:
        fh.write(_DS_MAGIC)
        fh.write(struct.pack("<I", _DS_VERSION))
        fh.write(struct.pack("<5q", L, D, M, theta_dim, len(ds)))
        fh.write(struct.pack("<Iq", kind, param))
        for s in ds.samples:
            fh.write(np.ascontiguousarray(s.theta_true, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.block.indices, dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(s.block.energies, dtype="<f8").tobytes())
            fh.write(np.asfortranarray(s.block.psi.astype("<f4")).tobytes(order="F"))
            for G in s.pb.G:
                fh.write(np.ascontiguousarray(G, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(s.pb.G_const, dtype="<f8").tobytes())


def _protocol_tag(label: str) -> tuple[int, int]:
    kind_s, _, param_s = label.partition(":")
    kind = ProtocolKind(kind_s)
    param = int(param_s.split("=")[1]) if "=" in param_s else 1
    return _PROTO_CODE[kind], param


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _DS_MAGIC:
        raise ValueError(f"{path} is not a dataset file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _DS_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    L, D, M, theta_dim, n = struct.unpack_from("<5q", raw, 8)
    kind_code, param = struct.unpack_from("<Iq", raw, 48)
    offset = 60
    samples = []
    for _ in range(n):
        theta = np.frombuffer(raw, "<f8", theta_dim, offset).copy()
        offset += 8 * theta_dim
        indices = np.frombuffer(raw, "<i8", M, offset).copy()
        offset += 8 * M
        energies = np.frombuffer(raw, "<f8", M, offset).copy()
        offset += 8 * M
        psi = np.frombuffer(raw, "<f4", D * M, offset).reshape(D, M, order="F")
        psi = np.ascontiguousarray(psi, dtype=f32)
        offset += 4 * D * M
        gs = []
        for _l in range(theta_dim):
            gs.append(np.frombuffer(raw, "<f8", M * M, offset).reshape(M, M).copy())
            offset += 8 * M * M
        g_const = np.frombuffer(raw, "<f8", M * M, offset).reshape(M, M).copy()
        offset += 8 * M * M
        block = StateBlock(psi=psi, energies=energies, indices=indices, theta_true=theta)
        samples.append(DatasetSample(theta_true=theta.copy(), block=block,
                                     pb=ProjectedBasis(G=tuple(gs), G_const=g_const, energies=energies.copy())))
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after payload")
    kind = _PROTO_FROM_CODE[kind_code]
    label = f"single:m={param}" if kind is ProtocolKind.SINGLE else f"{kind.value}:M={param}"
    meta = {"L": int(L), "dim": int(D), "protocol": label, "n_states": int(M),
            "n_samples": int(n), "theta_dim": int(theta_dim)}
    return Dataset(samples=samples, meta=meta, latent=None)


def write_history_csv(hist: History, path: str | Path) -> None:
    import csv

    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_rayleigh", "val_rayleigh", "val_theta"])
        for e in range(hist.train_rayleigh.shape[0]):
            writer.writerow([
                e + 1,
                repr(float(hist.train_rayleigh[e])),
                repr(float(hist.val_rayleigh[e])),
                repr(float(hist.val_theta[e])),
            ])
