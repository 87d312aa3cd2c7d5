"""Command-line interface.

Configuration precedence: built-in defaults, then --preset, then --config
file (flat key=value lines mirroring the long flags), then explicit flags.
Worker arithmetic always runs on one BLAS thread; --threads only controls
how many independent runs of a sweep execute in parallel processes, so
results are byte-identical for any thread count. Every command writes a
manifest containing the canonical argv that reproduces its outputs.

numpy-heavy modules are imported lazily, after the BLAS environment is
pinned.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _pin_blas_threads() -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, "1")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _ranges(text: str):
    """Interval union: "lo:hi" or "lo:hi,lo:hi"."""
    out = []
    for part in text.split(","):
        lo, _, hi = part.partition(":")
        out.append((float(lo), float(hi)))
    return tuple(out)


_PARSERS = {
    "l": int, "samples": int, "epochs": int, "lr": float, "batch_size": int,
    "gamma": float, "epsilon": float, "split": float, "seed": int, "seeds": int,
    "threads": int, "val_every": int, "hidden": _ints, "m": int,
    "m_list": _ints, "m_index": int, "m_indices": _ints,
    "protocol": str, "protocols": lambda s: tuple(s.split(",")),
    "loss": str, "mode": str, "range": _ranges, "range_j2": _ranges,
    "grid": int, "bins": int, "j1_values": _floats, "delta": float,
    "out": str, "preset": str, "backend": str, "dataset": str,
}

# ExperimentSpec field behind each CLI key (None: handled specially).
_SPEC_FIELD = {
    "l": "L", "samples": "n_samples", "epochs": "n_epochs", "lr": "learning_rate",
    "batch_size": "batch_size", "gamma": "gamma", "epsilon": "epsilon",
    "split": "split_fraction", "seed": "seed", "seeds": "n_seeds",
    "threads": "threads", "val_every": "val_every", "hidden": "w_hidden",
    "m_indices": "m_indices", "m_list": "m_states", "protocols": "protocols",
    "mode": "sample_mode", "range": "range_j1", "range_j2": "range_j2",
    "grid": "eval_grid", "bins": "bins", "j1_values": "j1_values",
    "delta": "delta", "backend": "backend", "m_index": "m_index",
}

_COMMON_KEYS = frozenset({
    "l", "samples", "epochs", "lr", "batch_size", "gamma", "epsilon", "split",
    "seed", "seeds", "threads", "val_every", "hidden", "mode", "range",
    "range_j2", "backend", "out",
})

# extra keys each subcommand accepts on top of the common set
_COMMAND_KEYS = {
    "generate": {"protocol", "m", "m_index"},
    "diagnostics": {"j1_values", "delta", "bins"},
    "train": {"protocol", "m", "m_index", "loss", "dataset"},
    "sweep-spectrum": {"m_indices"},
    "sweep-m": {"m_list", "protocols"},
    "sweep-hidden": {"protocols", "m"},
    "generalize": {"m", "grid"},
    "gap": set(),
    "two-param": {"m_list"},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigenlearn",
        description="Infer spin-chain couplings from subsets of many-body eigenstates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--l", type=int, help="chain length")
        p.add_argument("--samples", type=int, help="parameter realizations")
        p.add_argument("--epochs", type=int, help="training epochs")
        p.add_argument("--lr", type=float, help="Adam learning rate")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--gamma", type=float, help="diagonal-mismatch weight (default 0.1)")
        p.add_argument("--epsilon", type=float, help="loss normalization guard")
        p.add_argument("--split", type=float, help="training fraction of the dataset")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--seeds", type=int, help="independent repetitions per configuration")
        p.add_argument("--threads", type=int, help="parallel worker processes for sweeps")
        p.add_argument("--val-every", type=int, dest="val_every", help="validation cadence in epochs")
        p.add_argument("--hidden", type=_ints, help="hidden widths, comma separated")
        p.add_argument("--mode", choices=("grid", "uniform"), help="parameter sampling mode")
        p.add_argument("--range", type=_ranges, help="J1 range, lo:hi[,lo:hi]")
        p.add_argument("--range-j2", type=_ranges, dest="range_j2", help="J2 range for two-parameter runs")
        p.add_argument("--backend", choices=("numba", "numpy"), help="compute backend")
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--preset", choices=("desk", "paper"), help="configuration preset")
        p.add_argument("--config", type=str, help="key=value config file; flags override it")
        p.add_argument("--plot", action="store_true", help="render figures next to the CSV output")

    p = sub.add_parser("generate", help="write an eigenstate dataset file")
    add_common(p)
    _add_protocol_args(p)

    p = sub.add_parser("diagnostics", help="per-state entropies and density of states")
    add_common(p)
    p.add_argument("--j1-values", type=_floats, dest="j1_values", help="couplings to diagnose")
    p.add_argument("--delta", type=float, help="anisotropy for the diagnostics Hamiltonians")
    p.add_argument("--bins", type=int, help="density-of-states bins")

    p = sub.add_parser("train", help="one training run")
    add_common(p)
    _add_protocol_args(p)
    p.add_argument("--loss", choices=("rayleigh", "supervised"), help="training objective")
    p.add_argument("--dataset", type=str, help="train on an existing dataset file")

    for name, hlp in (
        ("sweep-spectrum", "single-state sweep across spectral positions"),
        ("sweep-m", "state-count sweep for low/mid protocols"),
        ("sweep-hidden", "hidden-width sweep for low/mid protocols"),
        ("generalize", "full vs holed training domain"),
        ("gap", "capacity loss gap at spectral edge and bulk"),
        ("two-param", "joint inference of both couplings"),
    ):
        p = sub.add_parser(name, help=hlp)
        add_common(p)
        if name == "sweep-spectrum":
            p.add_argument("--m-indices", type=_ints, dest="m_indices", help="eigenstate indices to sweep")
        if name in ("sweep-m", "two-param"):
            p.add_argument("--m-list", type=_ints, dest="m_list", help="state counts to sweep")
        if name in ("sweep-hidden", "sweep-m"):
            p.add_argument("--protocols", type=_PARSERS["protocols"], help="protocols, e.g. low,mid")
        if name in ("sweep-hidden", "generalize"):
            p.add_argument("--m", type=int, help="number of input eigenstates")
        if name == "generalize":
            p.add_argument("--grid", type=int, help="evaluation grid points")

    p = sub.add_parser("plot", help="render figures from an output directory")
    p.add_argument("out_dir", type=str)
    p.add_argument("--kind", type=str, help="experiment kind override")
    return parser


def _add_protocol_args(p) -> None:
    p.add_argument("--protocol", choices=("low", "mid", "single"), help="state selection protocol")
    p.add_argument("--m", type=int, help="number of input eigenstates (low/mid)")
    p.add_argument("--m-index", type=int, dest="m_index", help="selected eigenstate (single)")


def _load_config_file(path: str) -> dict:
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _PARSERS:
            raise SystemExit(f"config file {path}: unknown key {key!r}")
        values[key] = _PARSERS[key](value.strip())
    return values


def _resolve(args: argparse.Namespace) -> dict:
    """defaults < preset < config file < flags."""
    from .experiments import PRESETS

    resolved: dict = {}
    preset = getattr(args, "preset", None) or "desk"
    spec_presets = PRESETS[preset]
    inverse = {v: k for k, v in _SPEC_FIELD.items()}
    for field_name, value in spec_presets.items():
        if field_name in inverse:
            resolved[inverse[field_name]] = value
    if getattr(args, "config", None):
        resolved.update(_load_config_file(args.config))
    for key in _PARSERS:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    resolved.setdefault("threads", os.cpu_count() or 1)
    resolved["preset"] = preset
    resolved["plot"] = bool(getattr(args, "plot", False))
    return resolved


def _make_spec(kind: str, resolved: dict, out_default: str):
    from .experiments import ExperimentSpec

    kwargs = {}
    for cli_key, field_name in _SPEC_FIELD.items():
        if cli_key in resolved:
            kwargs[field_name] = resolved[cli_key]
    if "m" in resolved:
        kwargs["m_states"] = (resolved["m"],)
    if "loss" in resolved:
        kwargs["loss_mode"] = "supervised_theta" if resolved["loss"] == "supervised" else "rayleigh"
    out_dir = Path(resolved.get("out") or out_default)
    return ExperimentSpec(kind=kind, out_dir=out_dir, **kwargs)


def _canonical_argv(command: str, resolved: dict) -> list[str]:
    """Flags that reproduce this invocation (single-thread mode)."""
    argv = [command]
    allowed = _COMMON_KEYS | _COMMAND_KEYS[command]
    for key in sorted(resolved):
        if key not in allowed:
            continue
        value = resolved[key]
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
            continue
        if isinstance(value, tuple):
            if value and isinstance(value[0], tuple):  # interval union
                text = ",".join(f"{lo:g}:{hi:g}" for lo, hi in value)
            else:
                text = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
        else:
            text = str(value)
        argv.extend([flag, text])
    argv.extend(["--threads", "1"])
    return argv


def _protocol_from(resolved: dict):
    from .protocols import ProtocolKind, SpectralProtocol

    kind = ProtocolKind(resolved.get("protocol", "low"))
    if kind is ProtocolKind.SINGLE:
        return SpectralProtocol(kind=kind, m_index=resolved.get("m_index", 1))
    return SpectralProtocol(kind=kind, M=resolved.get("m", 5))


def _amend_manifests(out_dir: Path, argv: list[str]) -> None:
    for man_path in out_dir.glob("*manifest.json"):
        man = json.loads(man_path.read_text())
        man["argv"] = argv
        man_path.write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")


def main(argv: list[str] | None = None) -> int:
    _pin_blas_threads()
    args = build_parser().parse_args(argv)
    command = args.command

    if command == "plot":
        from .plotting import render_experiment, render_out_dir

        if args.kind:
            made = [render_experiment(args.kind, args.out_dir)]
        else:
            made = render_out_dir(args.out_dir)
        for path in made:
            print(path)
        return 0

    resolved = _resolve(args)
    if command in ("generate", "train"):
        resolved.setdefault("protocol", "low")
    spec = _make_spec(command, resolved, out_default=f"runs/{command}")
    canon = _canonical_argv(command, resolved)

    from . import experiments as ex

    if command == "generate":
        path = ex.generate_only(spec, _protocol_from(resolved))
        print(path)
    elif command == "diagnostics":
        for path in ex.diagnostics_run(spec):
            print(path)
    elif command == "train":
        dataset = None
        if resolved.get("dataset"):
            from .training import load_dataset

            dataset = load_dataset(resolved["dataset"])
        res = ex.train_single(spec, _protocol_from(resolved), dataset=dataset)
        print(json.dumps({k: v for k, v in res.items() if isinstance(v, (int, float, str))},
                         indent=2, sort_keys=True))
    elif command == "sweep-spectrum":
        ex.sweep_spectrum(spec)
    elif command == "sweep-m":
        ex.sweep_num_states(spec)
    elif command == "sweep-hidden":
        ex.sweep_hidden(spec)
    elif command == "generalize":
        ex.generalization_hole(spec)
    elif command == "gap":
        ex.learnability_gap(spec)
    elif command == "two-param":
        ex.two_parameter_run(spec)
    else:  # pragma: no cover
        raise SystemExit(f"unhandled command {command}")

    _amend_manifests(spec.out_dir, canon)
    if resolved.get("plot"):
        from .plotting import render_experiment

        print(render_experiment(command, spec.out_dir))
    print(spec.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
