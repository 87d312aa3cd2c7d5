"""Figure rendering for experiment outputs.

Every experiment writes plot-ready CSV tables; this module turns them into
PNG figures saved next to the data. Rendering is optional everywhere
(--plot on the experiment commands, or the standalone `plot` command on an
output directory), and nothing here feeds back into the numerics.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_experiment", "render_out_dir"]

_RC = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 130,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.markersize": 4.5,
    "legend.fontsize": 8,
    "savefig.bbox": "tight",
}

_PROTO_COLOR = {"low": "tab:blue", "mid": "tab:red", "single": "tab:green"}


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def _group(rows: list[dict], key: str) -> dict:
    out = defaultdict(list)
    for r in rows:
        out[r[key]].append(r)
    return out


def _median_curve(rows: list[dict], x_key: str, y_key: str) -> tuple[np.ndarray, np.ndarray]:
    by_x = defaultdict(list)
    for r in rows:
        by_x[float(r[x_key])].append(float(r[y_key]))
    xs = np.array(sorted(by_x))
    ys = np.array([np.median(by_x[x]) for x in xs])
    return xs, ys


def _save(fig, out_dir: Path, name: str) -> Path:
    path = out_dir / f"{name}.png"
    fig.savefig(path)
    plt.close(fig)
    return path


def _plot_sweep(rows, x_key, group_key, out_dir, name, xlabel, group_label):
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
        for gval, sub in sorted(_group(rows, group_key).items()):
            color = _PROTO_COLOR.get(str(gval))
            for ax, y_key, ylabel in zip(
                axes, ("rayleigh_final", "theta_loss_final"),
                ("final training loss", "final parameter loss"),
            ):
                xs, ys = _median_curve(sub, x_key, y_key)
                ax.plot(xs, ys, "o-", label=f"{group_label}={gval}", color=color)
                ax.set_xlabel(xlabel)
                ax.set_ylabel(ylabel)
                ax.set_yscale("log")
        axes[0].legend()
        fig.suptitle(name.replace("_", " "))
        return _save(fig, out_dir, name)


def plot_sweep_spectrum(out_dir: Path) -> Path:
    rows = _read_csv(out_dir / "sweep_spectrum.csv")
    return _plot_sweep(rows, "m_index", "w_h", out_dir, "sweep_spectrum",
                       "eigenstate index", "w_h")


def plot_sweep_m(out_dir: Path) -> Path:
    rows = _read_csv(out_dir / "sweep_m.csv")
    return _plot_sweep(rows, "m_states", "protocol", out_dir, "sweep_m",
                       "number of input eigenstates M", "protocol")


def plot_sweep_hidden(out_dir: Path) -> Path:
    rows = _read_csv(out_dir / "sweep_hidden.csv")
    return _plot_sweep(rows, "w_h", "protocol", out_dir, "sweep_hidden",
                       "hidden width w_h", "protocol")


def plot_generalize(out_dir: Path) -> Path:
    rows = _read_csv(out_dir / "generalize.csv")
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
        for domain, sub in sorted(_group(rows, "domain").items()):
            for ax, y_key, ylabel in zip(axes, ("delta_E", "theta_loss"),
                                         ("relative eigenvalue error", "parameter loss")):
                xs, ys = _median_curve(sub, "J1", y_key)
                ax.plot(xs, ys, "o-", label=domain)
                ax.set_xlabel("J1")
                ax.set_ylabel(ylabel)
                ax.set_yscale("log")
        axes[1].axvspan(-1.0, 0.5, alpha=0.15, color="gray", label="excluded region")
        axes[0].legend()
        axes[1].legend()
        fig.suptitle("generalization across the coupling domain")
        return _save(fig, out_dir, "generalize")


def plot_gap(out_dir: Path) -> Path:
    rows = _read_csv(out_dir / "gap.csv")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.4))
        labels = [r["position"] for r in rows]
        means = [float(r["delta_mean"]) for r in rows]
        stds = [float(r["delta_std"]) for r in rows]
        ax.bar(labels, means, yerr=stds, capsize=4, color=["tab:blue", "tab:red"])
        ax.set_ylabel("capacity loss gap")
        ax.set_title("learnability gap by spectral position")
        return _save(fig, out_dir, "gap")


def plot_history(out_dir: Path, pattern: str = "history*.csv") -> Path:
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
        for path in sorted(Path(out_dir).glob(pattern)):
            rows = _read_csv(path)
            epochs = np.array([int(r["epoch"]) for r in rows])
            for ax, key, ylabel in zip(axes, ("train_rayleigh", "val_theta"),
                                       ("training loss", "validation parameter loss")):
                ys = np.array([float(r[key]) for r in rows])
                ok = np.isfinite(ys)
                ax.plot(epochs[ok], ys[ok], label=path.stem.replace("history_", ""))
                ax.set_xlabel("epoch")
                ax.set_ylabel(ylabel)
                ax.set_yscale("log")
        axes[0].legend()
        fig.suptitle("training history")
        return _save(fig, out_dir, "history")


def plot_diagnostics(out_dir: Path) -> Path:
    paths = sorted(Path(out_dir).glob("diagnostics_*.csv"))
    paths = [p for p in paths if not p.name.endswith("manifest.json")]
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 3, figsize=(11.5, 3.4))
        for path in paths:
            label = path.stem.replace("diagnostics_", "")
            rows = _read_csv(path)
            idx = np.array([float(r["index_norm"]) for r in rows])
            svn = np.array([float(r["svn_norm"]) for r in rows])
            spart = np.array([float(r["spart_norm"]) for r in rows])
            axes[1].plot(idx, svn, ".", alpha=0.5, label=label)
            axes[2].plot(idx, spart, ".", alpha=0.5, label=label)
            dos_path = path.with_name(path.name.replace("diagnostics_", "dos_"))
            if dos_path.exists():
                dos = _read_csv(dos_path)
                centers = np.array([float(r["bin_center"]) for r in dos])
                counts = np.array([float(r["count"]) for r in dos])
                axes[0].step(centers, counts, where="mid", label=label)
        axes[0].set_xlabel("rescaled energy")
        axes[0].set_ylabel("density of states")
        axes[1].set_xlabel("eigenstate index / D")
        axes[1].set_ylabel("half-chain entropy (normalized)")
        axes[2].set_xlabel("eigenstate index / D")
        axes[2].set_ylabel("participation entropy (normalized)")
        for ax in axes:
            ax.legend()
        return _save(fig, out_dir, "diagnostics")


def plot_two_param(out_dir: Path) -> Path:
    plot_history(out_dir, "history_dim*.csv")
    rows = _read_csv(out_dir / "two_param.csv")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.6, 3.4))
        for dim, sub in sorted(_group(rows, "theta_dim").items()):
            xs, ys = _median_curve(sub, "m_states", "theta_loss_final")
            ax.plot(xs, ys, "o-", label=f"latent dim {dim}")
        ax.set_xlabel("number of input eigenstates M")
        ax.set_ylabel("final parameter loss")
        ax.set_yscale("log")
        ax.legend()
        return _save(fig, out_dir, "two_param")


_RENDERERS = {
    "sweep-spectrum": plot_sweep_spectrum,
    "sweep-m": plot_sweep_m,
    "sweep-hidden": plot_sweep_hidden,
    "generalize": plot_generalize,
    "gap": plot_gap,
    "two-param": plot_two_param,
    "supervised": lambda d: plot_history(d, "history_supervised*.csv"),
    "train": plot_history,
    "diagnostics": plot_diagnostics,
}


def render_experiment(kind: str, out_dir: str | Path) -> Path:
    """Render the figure for one experiment kind from its output directory."""
    try:
        renderer = _RENDERERS[kind]
    except KeyError:
        raise ValueError(f"no renderer for kind {kind!r}; known: {sorted(_RENDERERS)}") from None
    return renderer(Path(out_dir))


def render_out_dir(out_dir: str | Path) -> list[Path]:
    """Render every figure the manifests in a directory describe."""
    out_dir = Path(out_dir)
    made = []
    for man_path in sorted(out_dir.glob("*manifest.json")):
        kind = json.loads(man_path.read_text()).get("kind")
        if kind in _RENDERERS:
            made.append(render_experiment(kind, out_dir))
    if not made:
        raise ValueError(f"no renderable manifests found in {out_dir}")
    return made
