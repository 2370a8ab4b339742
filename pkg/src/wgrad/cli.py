"""Batch command-line front end.

Subcommands: synth, explain, sweep, evaluate, particles, barycenter,
report. Every command is referentially transparent in (args, seed): the
data outputs (rasters, CSV, JSON) are byte-identical across identical
invocations; the run manifest additionally records wall-clock timestamps.

Config precedence: CLI flags > config file (key=value lines, keys named
like the flags) > built-in defaults. All randomness flows from one root
seed through named streams.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import AttributionRequest, run_method
from .diagnostics import SweepConfig, displacement_sweep, dipole_maps
from .errors import (
    NonConvergenceError,
    NumericalUnderflowError,
    WgradError,
    ZeroMassError,
)
from .fields import Field2D, GridSpec, RoiBox, StateTensor, read_raster, write_raster
from .metrics import LleConfig, RoadConfig, gini, lle_cos, lle_l2, road
from .meanfield import ParticleSystem, BasinReport, basin_experiment, interaction_energy, simulate
from .toymodel import SynthConfig, ToyForecaster, synth_sequence
from .transport import BarycenterConfig, conv_barycenter
from .fields import SpatialMeasure, normalize_to_measure

_NUMERIC_ERRORS = (NonConvergenceError, NumericalUnderflowError, ZeroMassError)

METHOD_CHOICES = ("base", "ig", "smooth", "var", "wg-bary", "wg-baryxgrad")


# --------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int, started: float, files: list[Path], extra=None):
    config = {k: v for k, v in config.items() if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "started": started,
        "ended": time.time(),
        "digests": {f.name: _sha256(f) for f in files},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.jsonl"
    with open(path, "a", newline="\n") as fh:
        fh.write(json.dumps(manifest, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.10g}"
        return str(v)

    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _field_to_raster(field_values: np.ndarray, spec: GridSpec) -> StateTensor:
    return StateTensor(spec, np.asarray(field_values, dtype=np.float32)[:, :, None])


def _parse_roi(text: str) -> RoiBox:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ValueError("roi must be row_min,row_max,col_min,col_max")
    return RoiBox(*parts)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(","))


def _event_config(args, event: int) -> SynthConfig:
    return SynthConfig(
        height=args.height,
        width=args.width,
        blobs=args.blobs,
        velocity=(args.velocity[0], args.velocity[1]),
        texture=args.texture,
        seed=args.seed * 100_000 + event,
    )


def _event_state(args, event: int) -> StateTensor:
    return synth_sequence(_event_config(args, event), 0)


def _event_truth(args, event: int, steps: int) -> StateTensor:
    return synth_sequence(_event_config(args, event), steps)


def _request_from(args) -> AttributionRequest:
    return AttributionRequest(
        c_in=args.c_in,
        c_out=args.c_out,
        roi=_parse_roi(args.roi),
        steps=args.steps,
        n_samples=args.n_samples,
        sigma_frac=args.sigma,
        seed=args.seed,
        lam=args.lam,
        ig_steps=args.ig_steps,
    )


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    cfg = SynthConfig(
        height=args.height,
        width=args.width,
        blobs=args.blobs,
        velocity=(args.velocity[0], args.velocity[1]),
        texture=args.texture,
        seed=args.seed,
    )
    files = []
    for t in range(args.frames):
        state = synth_sequence(cfg, t)
        path = out_dir / f"state_{t:04d}.wgrd"
        write_raster(state, path)
        files.append(path)
    _write_manifest(out_dir, "synth", vars(args) | {"out": str(out_dir)}, args.seed, started, files)
    return 0


def cmd_explain(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    if args.input:
        x = read_raster(args.input)
    else:
        x = _event_state(args, args.event)
    model = ToyForecaster(x.channels, seed=args.model_seed, gain=args.gain)
    req = _request_from(args)
    result = run_method(args.method, req, x, model)
    files = []
    map_path = out_dir / f"map_{args.method}.wgrd"
    write_raster(_field_to_raster(result.map.values, x.spec), map_path)
    files.append(map_path)
    if result.measure is not None:
        measure_path = out_dir / f"measure_{args.method}.wgrd"
        write_raster(_field_to_raster(result.measure.density, x.spec), measure_path)
        files.append(measure_path)
    _write_manifest(
        out_dir,
        "explain",
        vars(args) | {"out": str(out_dir)},
        args.seed,
        started,
        files,
        extra={"target_value": result.target_value},
    )
    return 0


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    if list(args.sigmas) != sorted(args.sigmas):
        raise ValueError("sigma list must be ascending")
    cfg = SweepConfig(
        sigma_fracs=tuple(args.sigmas),
        reps=args.reps,
        horizons=tuple(args.horizons),
        seed=args.seed,
    )
    req = _request_from(args)
    model = ToyForecaster(3, seed=args.model_seed, gain=args.gain)
    events = []
    for e in range(args.events):
        x = _event_state(args, e)
        truths = {steps: _event_truth(args, e, steps) for steps in cfg.horizons}
        events.append((e, x, truths))
    rows = []
    for steps in cfg.horizons:
        sub_cfg = SweepConfig(cfg.sigma_fracs, cfg.reps, (steps,), cfg.seed)
        sweep_events = [(e, x, truths[steps]) for e, x, truths in events]
        rows.extend(displacement_sweep(sub_cfg, model, req, sweep_events))
    rows.sort(key=lambda r: (r.event_id, r.steps, r.sigma_frac, r.rep))
    csv_path = out_dir / "sweep.csv"
    _write_csv(
        csv_path,
        ["event_id", "T", "sigma", "rep", "d_centroid", "d_peak", "E_rel"],
        [[r.event_id, r.steps, r.sigma_frac, r.rep, r.d_centroid, r.d_peak, r.e_rel] for r in rows],
    )
    _write_manifest(out_dir, "sweep", vars(args) | {"out": str(out_dir)}, args.seed, started, [csv_path])
    return 0


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    if not args.methods:
        raise ValueError("methods list must be non-empty")
    model = ToyForecaster(3, seed=args.model_seed, gain=args.gain)
    req = _request_from(args)
    road_cfg = RoadConfig(p_max=args.p_max, k_rand=args.k_rand, seed=args.seed)
    lle_cfg = LleConfig(k_draws=args.k_lle, seed=args.seed)

    rows = []
    values: dict[tuple[str, str], list[float]] = {}
    for e in range(args.events):
        x = _event_state(args, e)
        for method in args.methods:
            def attr_fn(state, _method=method):
                return run_method(_method, req, state, model).map

            result = run_method(method, req, x, model)
            scores = {
                "gini": gini(result.map),
                "road": road(result.map, x, model, req, road_cfg),
                "lle_l2": lle_l2(attr_fn, x, req.c_in, lle_cfg),
                "lle_cos": lle_cos(attr_fn, x, req.c_in, lle_cfg),
            }
            for metric, value in scores.items():
                rows.append([e, method, metric, value, args.seed])
                values.setdefault((method, metric), []).append(value)

    single_event = args.events == 1
    for (method, metric), vals in sorted(values.items()):
        mean = float(np.mean(vals))
        # SEM of a single event is 0 by convention (flagged in the manifest)
        sem = 0.0 if single_event else float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
        rows.append(["summary_mean", method, metric, mean, args.seed])
        rows.append(["summary_sem", method, metric, sem, args.seed])

    csv_path = out_dir / "evaluate.csv"
    _write_csv(csv_path, ["event_id", "method", "metric", "value", "seed"], rows)
    _write_manifest(
        out_dir,
        "evaluate",
        vars(args) | {"out": str(out_dir)},
        args.seed,
        started,
        [csv_path],
        extra={"shared_perturbation_streams": True, "single_event_sem_zero": single_event},
    )
    return 0


def cmd_particles(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    rng = np.random.Generator(np.random.Philox(key=[args.seed, 0]))
    p = rng.normal(size=(args.n, args.dim))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    sys_ = ParticleSystem(p, beta=args.beta, variant=args.variant, kappa=args.kappa)

    noise_rng = np.random.Generator(np.random.Philox(key=[args.seed, 1])) if args.kappa > 0 else None
    energies = []
    cur = sys_
    traj_rows = []
    for step_i in range(args.sim_steps + 1):
        if step_i % max(1, args.record_every) == 0 or step_i == args.sim_steps:
            for pi, pos in enumerate(cur.positions):
                traj_rows.append([step_i, pi] + [float(c) for c in pos])
        energies.append(interaction_energy(cur))
        if step_i < args.sim_steps:
            from .meanfield import step as mf_step

            cur = mf_step(cur, args.dt, noise_rng)

    if args.assert_energy:
        if args.variant != "usa" or args.kappa > 0:
            raise ValueError("--assert-energy applies to deterministic USA runs only")
        diffs = np.diff(energies)
        if np.any(diffs < -1e-8):
            raise NonConvergenceError(f"energy decreased by {float(-diffs.min()):.3e} in one step")

    files = []
    csv_path = out_dir / "trajectory.csv"
    coord_cols = [f"x{i}" for i in range(args.dim)]
    _write_csv(csv_path, ["step", "particle"] + coord_cols, traj_rows)
    files.append(csv_path)
    energy_path = out_dir / "energy.csv"
    _write_csv(energy_path, ["step", "energy"], [[i, e] for i, e in enumerate(energies)])
    files.append(energy_path)

    extra = {}
    if args.trials > 1:
        report = basin_experiment(sys_, args.sigma_init, args.trials, args.sim_steps, dt=args.dt, seed=args.seed)
        report_path = out_dir / "basin.json"
        with open(report_path, "w", newline="\n") as fh:
            json.dump(asdict(report), fh, sort_keys=True, indent=2)
            fh.write("\n")
        files.append(report_path)
        extra["divergent_pairs"] = report.divergent_pairs
    _write_manifest(out_dir, "particles", vars(args) | {"out": str(out_dir)}, args.seed, started, files, extra=extra)
    return 0


def cmd_barycenter(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    measures = []
    for path in args.inputs:
        t = read_raster(path)
        if t.channels != 1:
            raise ValueError(f"{path}: expected a single-channel raster")
        measures.append(normalize_to_measure(t.channel(0)))
    weights = None
    if args.weights:
        weights = np.asarray(args.weights, dtype=np.float64)
        weights = weights / weights.sum()
    cfg = BarycenterConfig(lam=args.lam, weights=weights, max_iter=args.max_iter)
    bary, trace = conv_barycenter(measures, cfg, return_trace=True)
    files = []
    bary_path = out_dir / "barycenter.wgrd"
    write_raster(_field_to_raster(bary.density, bary.spec), bary_path)
    files.append(bary_path)
    trace_path = out_dir / "convergence.csv"
    _write_csv(trace_path, ["iteration", "violation"], [[i, v] for i, v in trace])
    files.append(trace_path)
    _write_manifest(out_dir, "barycenter", vars(args) | {"out": str(out_dir)}, args.seed, started, files)
    return 0


def cmd_report(args) -> int:
    from .report import render_report

    files = render_report(args.kind, Path(args.input), Path(args.out))
    started = time.time()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, "report", vars(args) | {"out": str(out_dir)}, args.seed, started, files)
    return 0


# --------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=42, help="root seed for all named streams")
    p.add_argument("--config", default=None, help="key=value config file (flags override it)")


def _add_grid(p: argparse.ArgumentParser):
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--velocity", type=_parse_floats, default=(0.0, 1.0), help="rows,cols advection per step")
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--texture", type=float, default=0.0, help="stationary per-cell detail amplitude")


def _add_request(p: argparse.ArgumentParser):
    p.add_argument("--c-in", type=int, default=0)
    p.add_argument("--c-out", type=int, default=2)
    p.add_argument("--roi", default="6,9,6,9", help="row_min,row_max,col_min,col_max")
    p.add_argument("--steps", "--T", type=int, default=1, dest="steps")
    p.add_argument("--n-samples", "--N", type=int, default=20, dest="n_samples")
    p.add_argument("--sigma", type=float, default=0.2, help="noise std as fraction of channel range")
    p.add_argument("--lam", type=float, default=0.001)
    p.add_argument("--ig-steps", type=int, default=128)
    p.add_argument("--model-seed", type=int, default=42)
    p.add_argument("--gain", type=float, default=1.0, help="forecaster weight scale; > 1 makes rollouts expansive")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgrad", description="Transport-based gradient attribution toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="emit synthetic field sequences as rasters")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--frames", type=int, default=4)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("explain", help="run one attribution method")
    _add_common(p)
    _add_grid(p)
    _add_request(p)
    p.add_argument("--method", choices=METHOD_CHOICES, required=True)
    p.add_argument("--input", default=None, help="input raster; default synthesizes an event")
    p.add_argument("--event", type=int, default=0)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("sweep", help="displacement sweep over noise levels and horizons")
    _add_common(p)
    _add_grid(p)
    _add_request(p)
    p.add_argument("--events", type=int, default=5)
    p.add_argument("--sigmas", type=_parse_floats, default=(0.1, 0.2, 0.4))
    p.add_argument("--horizons", type=_parse_ints, default=(1,))
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="metric suite per event and method")
    _add_common(p)
    _add_grid(p)
    _add_request(p)
    p.add_argument("--events", type=int, default=5)
    p.add_argument("--methods", nargs="+", choices=METHOD_CHOICES, default=["base", "smooth"])
    p.add_argument("--p-max", type=int, default=15)
    p.add_argument("--k-rand", type=int, default=5)
    p.add_argument("--k-lle", type=int, default=7)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("particles", help="sphere particle dynamics and basin experiment")
    _add_common(p)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--beta", type=float, default=4.0)
    p.add_argument("--variant", choices=("sa", "usa"), default="usa")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--sim-steps", type=int, default=500)
    p.add_argument("--record-every", type=int, default=50)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--sigma-init", type=float, default=0.0)
    p.add_argument("--assert-energy", action="store_true")
    p.set_defaults(func=cmd_particles)

    p = sub.add_parser("barycenter", help="aggregate pre-computed map rasters")
    _add_common(p)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--lam", type=float, default=0.001)
    p.add_argument("--weights", type=float, nargs="+", default=None)
    p.add_argument("--max-iter", type=int, default=1000)
    p.set_defaults(func=cmd_barycenter)

    p = sub.add_parser("report", help="render figures from emitted CSV/raster outputs")
    _add_common(p)
    p.add_argument("--kind", choices=("sweep", "evaluate", "explain", "particles"), required=True)
    p.add_argument("--input", required=True, help="CSV or raster produced by another subcommand")
    p.set_defaults(func=cmd_report)

    return parser


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file flags in right after the subcommand so explicit
    CLI flags (which come later and win in argparse) take precedence."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    path = Path(argv[idx + 1])
    flags = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        flags.extend([f"--{key.strip().replace('_', '-')}", value.strip()])
    rest = argv[1:idx] + argv[idx + 2 :]
    return argv[:1] + flags + rest + ["--config", str(path)]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_expand_config(argv))
        return args.func(args)
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    except (WgradError, ValueError, OSError) as exc:
        print(f"configuration error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
