"""Experiment suites: spectral sweeps, capacity scans, generalization holes.

Each experiment resolves its configuration into a list of independent
training tasks, runs them (optionally across worker processes; every task
is internally deterministic), sorts the result rows by their axis keys,
and emits a CSV table plus a JSON manifest that records everything needed
to reproduce the outputs byte for byte.

Trend statistics over sweep outputs use rank correlation rather than
absolute loss values, since stochastic training outcomes are only
reproducible per seed, not across environments.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .encoder import init_params, save_params
from .engine import default_backend
from .eigensolver import diagonalize
from .loss import LossConfig
from .protocols import ProtocolKind, SpectralProtocol
from .spin_chain import LatentSpec, chain_params
from .training import (
    Dataset,
    TrainConfig,
    derive_seed,
    evaluate,
    generate_dataset,
    run_training,
    sample_parameters,
    save_dataset,
    write_history_csv,
)

__all__ = [
    "ExperimentSpec",
    "sweep_spectrum",
    "sweep_num_states",
    "sweep_hidden",
    "generalization_hole",
    "learnability_gap",
    "two_parameter_run",
    "supervised_run",
    "diagnostics_run",
    "train_single",
    "generate_only",
    "emit_results",
    "spearman_rho",
    "PRESETS",
]

ParamRange = tuple[tuple[float, float], ...]

FULL_RANGE: ParamRange = ((-2.0, 2.0),)
HOLED_RANGE: ParamRange = ((-2.0, -1.0), (0.5, 2.0))


@dataclass(frozen=True)
class ExperimentSpec:
    """Resolved configuration of one experiment run."""

    kind: str
    out_dir: Path
    L: int = 6
    n_samples: int = 1000
    n_epochs: int = 500
    learning_rate: float = 1e-3
    batch_size: int = 64
    gamma: float = 0.1
    epsilon: float = 1e-8
    split_fraction: float = 0.7
    loss_mode: str = "rayleigh"
    val_every: int = 25
    seed: int = 7
    n_seeds: int = 3
    threads: int = 1
    w_hidden: tuple[int, ...] = (128,)
    m_states: tuple[int, ...] = (5,)
    m_indices: tuple[int, ...] = (1, 4, 8, 16, 24, 32)
    protocols: tuple[str, ...] = ("low", "mid")
    range_j1: ParamRange = FULL_RANGE
    range_j2: ParamRange = FULL_RANGE
    sample_mode: str = "uniform"
    eval_grid: int = 41
    bins: int = 64
    j1_values: tuple[float, ...] = (-0.4, 0.4)
    delta: float = 1.0
    m_index: int = 1
    backend: str | None = None

    def train_config(self, run_seed: int, **over) -> TrainConfig:
        base = dict(
            n_epochs=self.n_epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            gamma=self.gamma,
            epsilon=self.epsilon,
            split_fraction=self.split_fraction,
            seed=run_seed,
            loss_mode=self.loss_mode,
            val_every=self.val_every,
            backend=self.backend,
        )
        base.update(over)
        return TrainConfig(**base)


PRESETS = {
    "desk": dict(n_samples=1000, n_epochs=500, n_seeds=3, m_indices=(1, 4, 8, 16, 24, 32),
                 w_hidden=(128,), val_every=25),
    "paper": dict(n_samples=10_000, n_epochs=2500, n_seeds=3,
                  m_indices=(1, 2, 4, 6, 8, 12, 16, 20, 24, 28, 32),
                  w_hidden=(16, 64, 128), val_every=50),
}


def _latent(spec: ExperimentSpec, two_param: bool = False) -> LatentSpec:
    free = ("J1", "J2") if two_param else ("J1",)
    return LatentSpec(free=free, fixed_base=chain_params(spec.L))


def _thetas(spec: ExperimentSpec, two_param: bool = False, ranges: list[ParamRange] | None = None) -> np.ndarray:
    if ranges is None:
        ranges = [spec.range_j1, spec.range_j2] if two_param else [spec.range_j1]
    return sample_parameters(ranges, spec.n_samples, spec.sample_mode, derive_seed(spec.seed, "sample"))


# -- task execution -----------------------------------------------------------


def _train_task(task: dict) -> dict:
    """Train one configuration; returns the task's key fields plus final metrics.

    Module-level so worker processes can receive it; everything stochastic
    inside is governed by the seeds in the payload.
    """
    ds: Dataset = task["dataset"]
    cfg: TrainConfig = task["config"]
    w_h: int = task["w_h"]
    p0 = init_params(M=ds.n_states, w_h=w_h, theta_dim=ds.theta_dim,
                     seed=derive_seed(cfg.seed, "init"))
    t0 = time.perf_counter()
    params, hist = run_training(ds, cfg, p0)
    wall = time.perf_counter() - t0
    row = {k: v for k, v in task.items()
           if k not in ("dataset", "config", "w_h", "keep_params", "keep_history")}
    row.update(
        w_h=w_h,
        rayleigh_final=float(hist.train_rayleigh[-1]),
        val_rayleigh_final=float(hist.val_rayleigh[-1]),
        theta_loss_final=float(hist.val_theta[-1]),
        wall_s=wall,
    )
    if task.get("keep_params"):
        row["params"] = params
    if task.get("keep_history"):
        row["history"] = hist
    return row


def _run_tasks(tasks: list[dict], threads: int) -> list[dict]:
    if threads <= 1 or len(tasks) <= 1:
        return [_train_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(_train_task, tasks))


# -- output emission ----------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


_METRIC_COLUMNS = {"rayleigh_final", "val_rayleigh_final", "theta_loss_final", "wall_s",
                   "theta_loss", "delta_E", "delta_mean", "delta_std"}


def emit_results(rows: list[dict], fieldnames: list[str], manifest: dict,
                 out_dir: str | Path, name: str) -> tuple[Path, Path]:
    """Write a sorted CSV plus its JSON manifest; returns both paths.

    Rows are sorted numerically by their axis columns (metrics excluded)
    so output bytes do not depend on task execution order; floats are
    written with shortest round-trip repr.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    axis_keys = [k for k in fieldnames if k not in _METRIC_COLUMNS]
    rows = sorted(rows, key=lambda r: tuple(r[k] for k in axis_keys if k in r))
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in fieldnames])
    manifest = dict(manifest)
    manifest.setdefault("outputs", [])
    manifest["outputs"].append({"path": csv_path.name, "sha256": _sha256(csv_path)})
    manifest_path = out_dir / f"{name}_manifest.json"
    with manifest_path.open("w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return csv_path, manifest_path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _gauge_warnings(datasets) -> dict:
    # near-degenerate level pairs have gauge-unstable eigenvectors; surfaced
    # so a reader can judge whether sign conventions were at risk
    return {"near_degenerate_total": int(sum(d.meta.get("near_degenerate_total", 0)
                                             for d in datasets))}


def _manifest(spec: ExperimentSpec, extra: dict | None = None) -> dict:
    cfg = asdict(spec)
    cfg["out_dir"] = str(spec.out_dir)
    man = {
        "version": __version__,
        "backend": spec.backend or default_backend(),
        "kind": spec.kind,
        "config": cfg,
        "generated_unix": time.time(),
        "pid": os.getpid(),
    }
    if extra:
        man.update(extra)
    return man


# -- experiments --------------------------------------------------------------


def sweep_spectrum(spec: ExperimentSpec) -> list[dict]:
    """Single-state protocol swept across spectral positions and widths."""
    t0 = time.perf_counter()
    latent = _latent(spec)
    thetas = _thetas(spec)
    tasks = []
    datasets = []
    for m_index in spec.m_indices:
        proto = SpectralProtocol(kind=ProtocolKind.SINGLE, m_index=m_index)
        ds = generate_dataset(thetas, latent, proto, seed=derive_seed(spec.seed, "sample"))
        datasets.append(ds)
        for w_h in spec.w_hidden:
            for rep in range(spec.n_seeds):
                run_seed = derive_seed(spec.seed, f"run:m={m_index}:wh={w_h}:rep={rep}")
                tasks.append(dict(dataset=ds, config=spec.train_config(run_seed),
                                  w_h=w_h, m_index=m_index, n_sam=spec.n_samples, seed=rep))
    rows = _run_tasks(tasks, spec.threads)
    extra = {**_gauge_warnings(datasets), "wall_clock_s": time.perf_counter() - t0}
    emit_results(rows, ["m_index", "w_h", "n_sam", "rayleigh_final", "theta_loss_final", "seed"],
                 _manifest(spec, extra=extra), spec.out_dir, "sweep_spectrum")
    return rows


def sweep_num_states(spec: ExperimentSpec) -> list[dict]:
    """Vary the number of input eigenstates for the low and mid protocols."""
    t0 = time.perf_counter()
    latent = _latent(spec)
    thetas = _thetas(spec)
    w_h = spec.w_hidden[-1]
    tasks = []
    datasets = []
    for proto_name in spec.protocols:
        kind = ProtocolKind(proto_name)
        for m in spec.m_states:
            ds = generate_dataset(thetas, latent, SpectralProtocol(kind=kind, M=m),
                                  seed=derive_seed(spec.seed, "sample"))
            datasets.append(ds)
            for rep in range(spec.n_seeds):
                run_seed = derive_seed(spec.seed, f"run:{proto_name}:M={m}:rep={rep}")
                tasks.append(dict(dataset=ds, config=spec.train_config(run_seed),
                                  w_h=w_h, protocol=proto_name, m_states=m,
                                  n_sam=spec.n_samples, seed=rep))
    rows = _run_tasks(tasks, spec.threads)
    extra = {**_gauge_warnings(datasets), "wall_clock_s": time.perf_counter() - t0}
    emit_results(rows, ["protocol", "m_states", "n_sam", "rayleigh_final", "theta_loss_final", "seed"],
                 _manifest(spec, extra=extra), spec.out_dir, "sweep_m")
    return rows


def sweep_hidden(spec: ExperimentSpec) -> list[dict]:
    """Vary the hidden width at fixed state count for both protocols."""
    t0 = time.perf_counter()
    latent = _latent(spec)
    thetas = _thetas(spec)
    m = spec.m_states[0]
    tasks = []
    datasets = []
    for proto_name in spec.protocols:
        kind = ProtocolKind(proto_name)
        ds = generate_dataset(thetas, latent, SpectralProtocol(kind=kind, M=m),
                              seed=derive_seed(spec.seed, "sample"))
        datasets.append(ds)
        for w_h in spec.w_hidden:
            for rep in range(spec.n_seeds):
                run_seed = derive_seed(spec.seed, f"run:{proto_name}:wh={w_h}:rep={rep}")
                tasks.append(dict(dataset=ds, config=spec.train_config(run_seed),
                                  w_h=w_h, protocol=proto_name, m_states=m,
                                  n_sam=spec.n_samples, seed=rep))
    rows = _run_tasks(tasks, spec.threads)
    extra = {**_gauge_warnings(datasets), "wall_clock_s": time.perf_counter() - t0}
    emit_results(rows, ["protocol", "w_h", "m_states", "rayleigh_final", "theta_loss_final", "seed"],
                 _manifest(spec, extra=extra), spec.out_dir, "sweep_hidden")
    return rows


def generalization_hole(spec: ExperimentSpec) -> list[dict]:
    """Train on the full coupling interval and on a holed one; evaluate both
    on a dense grid over the full interval, reporting per-point parameter
    loss and relative eigenvalue error."""
    t0 = time.perf_counter()
    latent = _latent(spec)
    m = spec.m_states[0]
    w_h = spec.w_hidden[-1]
    proto = SpectralProtocol(kind=ProtocolKind.LOW, M=m)
    grid = sample_parameters([spec.range_j1], spec.eval_grid, "grid", 0)
    eval_ds = generate_dataset(grid, latent, proto, seed=0)
    domains = [("full", spec.range_j1), ("holed", HOLED_RANGE)]
    rows = []
    datasets = [eval_ds]
    for tag, rng in domains:
        thetas = sample_parameters([rng], spec.n_samples, spec.sample_mode,
                                   derive_seed(spec.seed, f"sample:{tag}"))
        ds = generate_dataset(thetas, latent, proto, seed=derive_seed(spec.seed, f"sample:{tag}"))
        datasets.append(ds)
        run_seed = derive_seed(spec.seed, f"run:{tag}")
        res = _train_task(dict(dataset=ds, config=spec.train_config(run_seed),
                               w_h=w_h, keep_params=True, domain=tag, seed=0))
        ev = evaluate(res["params"], eval_ds, LossConfig(spec.gamma, spec.epsilon),
                      spectral=True, backend=spec.backend)
        for i in range(len(eval_ds)):
            rows.append(dict(domain=tag, J1=float(grid[i, 0]),
                             theta_loss=float(ev["theta_loss"][i]),
                             delta_E=float(ev["spectral_error"][i]), seed=0))
    extra = {**_gauge_warnings(datasets), "wall_clock_s": time.perf_counter() - t0}
    emit_results(rows, ["domain", "J1", "theta_loss", "delta_E", "seed"],
                 _manifest(spec, extra=extra), spec.out_dir, "generalize")
    return rows


def learnability_gap(spec: ExperimentSpec) -> list[dict]:
    """Loss gap between the smallest-capacity model and the best one in the
    capacity class, at the spectral edge and mid-spectrum."""
    t0 = time.perf_counter()
    latent = _latent(spec)
    thetas = _thetas(spec)
    dim = 2 ** spec.L
    positions = [("edge", 1), ("mid", dim // 2)]
    caps = tuple(sorted(spec.w_hidden))
    tasks = []
    datasets = []
    for tag, m_index in positions:
        proto = SpectralProtocol(kind=ProtocolKind.SINGLE, m_index=m_index)
        ds = generate_dataset(thetas, latent, proto, seed=derive_seed(spec.seed, "sample"))
        datasets.append(ds)
        for w_h in caps:
            for rep in range(spec.n_seeds):
                run_seed = derive_seed(spec.seed, f"run:{tag}:wh={w_h}:rep={rep}")
                tasks.append(dict(dataset=ds, config=spec.train_config(run_seed),
                                  w_h=w_h, position=tag, m_index=m_index, seed=rep))
    runs = _run_tasks(tasks, spec.threads)
    extra = {**_gauge_warnings(datasets), "wall_clock_s": time.perf_counter() - t0}
    emit_results(runs, ["position", "m_index", "w_h", "seed", "val_rayleigh_final", "theta_loss_final"],
                 _manifest(spec, extra=extra), spec.out_dir, "gap_runs")

    rows = []
    for tag, m_index in positions:
        deltas = []
        for rep in range(spec.n_seeds):
            by_wh = {r["w_h"]: r["val_rayleigh_final"] for r in runs
                     if r["position"] == tag and r["seed"] == rep}
            deltas.append(by_wh[caps[0]] - min(by_wh.values()))
        deltas = np.array(deltas)
        rows.append(dict(position=tag, m_index=m_index, baseline_w_h=caps[0],
                         n_seeds=spec.n_seeds, delta_mean=float(deltas.mean()),
                         delta_std=float(deltas.std(ddof=1) if len(deltas) > 1 else 0.0)))
    emit_results(rows, ["position", "m_index", "baseline_w_h", "n_seeds", "delta_mean", "delta_std"],
                 _manifest(spec, extra={"wall_clock_s": time.perf_counter() - t0}), spec.out_dir, "gap")
    return rows


def two_parameter_run(spec: ExperimentSpec) -> list[dict]:
    """Joint inference of both couplings, with matched one-parameter
    baselines; low protocol only."""
    t0 = time.perf_counter()
    w_h = spec.w_hidden[-1]
    rows = []
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for theta_dim, two in ((1, False), (2, True)):
        latent = _latent(spec, two_param=two)
        thetas = _thetas(spec, two_param=two)
        for m in spec.m_states:
            ds = generate_dataset(thetas, latent, SpectralProtocol(kind=ProtocolKind.LOW, M=m),
                                  seed=derive_seed(spec.seed, "sample"))
            for rep in range(spec.n_seeds):
                run_seed = derive_seed(spec.seed, f"run:dim={theta_dim}:M={m}:rep={rep}")
                res = _train_task(dict(dataset=ds, config=spec.train_config(run_seed),
                                       w_h=w_h, keep_history=True,
                                       theta_dim=theta_dim, m_states=m, seed=rep))
                write_history_csv(res.pop("history"),
                                  out_dir / f"history_dim{theta_dim}_M{m}_seed{rep}.csv")
                rows.append(res)
    emit_results(rows, ["theta_dim", "m_states", "rayleigh_final", "theta_loss_final", "seed"],
                 _manifest(spec, extra={"wall_clock_s": time.perf_counter() - t0}), spec.out_dir, "two_param")
    return rows


def supervised_run(spec: ExperimentSpec) -> list[dict]:
    """Training on the parameter loss directly (label-supervised variant)."""
    t0 = time.perf_counter()
    latent = _latent(spec)
    thetas = _thetas(spec)
    w_h = spec.w_hidden[-1]
    m = spec.m_states[0]
    ds = generate_dataset(thetas, latent, SpectralProtocol(kind=ProtocolKind.LOW, M=m),
                          seed=derive_seed(spec.seed, "sample"))
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rep in range(spec.n_seeds):
        run_seed = derive_seed(spec.seed, f"run:supervised:rep={rep}")
        cfg = spec.train_config(run_seed, loss_mode="supervised_theta", val_every=1)
        res = _train_task(dict(dataset=ds, config=cfg, w_h=w_h, keep_history=True,
                               m_states=m, seed=rep))
        write_history_csv(res.pop("history"), out_dir / f"history_supervised_seed{rep}.csv")
        rows.append(res)
    emit_results(rows, ["m_states", "w_h", "rayleigh_final", "theta_loss_final", "seed"],
                 _manifest(spec, extra={"wall_clock_s": time.perf_counter() - t0}), spec.out_dir, "supervised")
    return rows


def diagnostics_run(spec: ExperimentSpec) -> list[Path]:
    """Per-state entropy record plus density of states for a few coupling
    choices, written as plot-ready CSVs."""
    from .diagnostics import density_of_states, spectrum_diagnostics, write_diagnostics_csv
    from .spin_chain import apply_symmetry_breaking, build_hamiltonian

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    man = _manifest(spec)
    for j1 in spec.j1_values:
        base = chain_params(spec.L, J1=j1, Delta=spec.delta)
        H = build_hamiltonian(apply_symmetry_breaking(base))
        spectrum = diagonalize(H)
        rec = spectrum_diagnostics(spectrum)
        tag = f"J1={j1:g}"
        state_path = out_dir / f"diagnostics_{tag}.csv"
        write_diagnostics_csv(rec, state_path)
        centers, counts = density_of_states(spectrum.energies, spec.bins)
        dos_path = out_dir / f"dos_{tag}.csv"
        with dos_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "count"])
            for c, n in zip(centers, counts):
                writer.writerow([repr(float(c)), int(n)])
        for p in (state_path, dos_path):
            man["outputs"] = man.get("outputs", []) + [{"path": p.name, "sha256": _sha256(p)}]
            outputs.append(p)
    man_path = out_dir / "diagnostics_manifest.json"
    with man_path.open("w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return outputs


def train_single(spec: ExperimentSpec, protocol: SpectralProtocol,
                 dataset: Dataset | None = None) -> dict:
    """One training run behind the CLI `train` command: writes history CSV,
    the encoder checkpoint, and a manifest."""
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        two = False
        latent = _latent(spec, two_param=two)
        thetas = _thetas(spec, two_param=two)
        dataset = generate_dataset(thetas, latent, protocol, seed=derive_seed(spec.seed, "sample"))
    cfg = spec.train_config(derive_seed(spec.seed, "run"), loss_mode=spec.loss_mode)
    res = _train_task(dict(dataset=dataset, config=cfg, w_h=spec.w_hidden[-1],
                           keep_params=True, keep_history=True, seed=0))
    params = res.pop("params")
    hist = res.pop("history")
    write_history_csv(hist, out_dir / "history.csv")
    save_params(params, out_dir / "encoder.enc")
    man = _manifest(spec, extra={"protocol": protocol.label(), "final": {
        k: res[k] for k in ("rayleigh_final", "val_rayleigh_final", "theta_loss_final")}})
    for name in ("history.csv",):
        man["outputs"] = man.get("outputs", []) + [{"path": name, "sha256": _sha256(out_dir / name)}]
    with (out_dir / "train_manifest.json").open("w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return res


def generate_only(spec: ExperimentSpec, protocol: SpectralProtocol) -> Path:
    """Dataset generation behind the CLI `generate` command."""
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    latent = _latent(spec)
    thetas = _thetas(spec)
    ds = generate_dataset(thetas, latent, protocol, seed=derive_seed(spec.seed, "sample"))
    path = out_dir / "dataset.eigd"
    save_dataset(ds, path)
    man = _manifest(spec, extra={"protocol": protocol.label(), "meta": ds.meta})
    man["outputs"] = [{"path": path.name, "sha256": _sha256(path)}]
    with (out_dir / "generate_manifest.json").open("w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with average ranks on ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def ranks(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="stable")
        r = np.empty_like(v)
        r[order] = np.arange(1, v.size + 1, dtype=np.float64)
        for val in np.unique(v):
            mask = v == val
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    if denom == 0.0:
        return 0.0
    return float(np.sum(rx * ry) / denom)
