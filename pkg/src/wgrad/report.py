"""Figure rendering for emitted CSV and raster outputs.

The compute subcommands write delimited data only; this module turns
those files into quick-look matplotlib figures saved next to them.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .fields import read_raster


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader)


def render_sweep(csv_path: Path, out_dir: Path) -> list[Path]:
    """Mean displacement vs noise level, one curve per horizon, with the
    relative prediction error on a secondary axis."""
    rows = [r for r in _read_csv(csv_path) if not r["event_id"].startswith("summary")]
    by_key = defaultdict(list)
    for r in rows:
        by_key[(int(r["T"]), float(r["sigma"]))].append(
            (float(r["d_centroid"]), float(r["d_peak"]), float(r["E_rel"]))
        )
    horizons = sorted({k[0] for k in by_key})
    fig, ax = plt.subplots(figsize=(6, 4))
    ax2 = ax.twinx()
    for t in horizons:
        sigmas = sorted(s for (tt, s) in by_key if tt == t)
        d_cent = [np.mean([v[0] for v in by_key[(t, s)]]) for s in sigmas]
        e_rel = [np.nanmean([v[2] for v in by_key[(t, s)]]) for s in sigmas]
        ax.plot(sigmas, d_cent, marker="o", label=f"T={t} centroid")
        ax2.plot(sigmas, e_rel, marker="x", linestyle="--", alpha=0.6, label=f"T={t} E_rel")
    ax.set_xlabel("noise fraction of range")
    ax.set_ylabel("mean centroid displacement (cells)")
    ax2.set_ylabel("relative prediction error")
    ax.legend(loc="upper left", fontsize=8)
    ax2.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    out = out_dir / "sweep_displacement.png"
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


def render_evaluate(csv_path: Path, out_dir: Path) -> list[Path]:
    """Bar chart per metric of the summary means across methods."""
    rows = [r for r in _read_csv(csv_path) if r["event_id"] == "summary_mean"]
    sems = {
        (r["method"], r["metric"]): float(r["value"])
        for r in _read_csv(csv_path)
        if r["event_id"] == "summary_sem"
    }
    metrics = sorted({r["metric"] for r in rows})
    files = []
    for metric in metrics:
        sub = [r for r in rows if r["metric"] == metric]
        methods = [r["method"] for r in sub]
        means = [float(r["value"]) for r in sub]
        errs = [sems.get((m, metric), 0.0) for m in methods]
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(methods, means, yerr=errs, capsize=3)
        ax.set_ylabel(metric)
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        out = out_dir / f"evaluate_{metric}.png"
        fig.savefig(out, dpi=150)
        plt.close(fig)
        files.append(out)
    return files


def render_raster(path: Path, out_dir: Path) -> list[Path]:
    """Heatmap per channel of a WGRD raster."""
    t = read_raster(path)
    files = []
    for c in range(t.channels):
        fig, ax = plt.subplots(figsize=(4, 4))
        vmax = float(np.abs(t.values[:, :, c]).max()) or 1.0
        im = ax.imshow(t.values[:, :, c], cmap="RdBu_r", vmin=-vmax, vmax=vmax)
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(f"{path.stem} [ch {c}]", fontsize=9)
        fig.tight_layout()
        out = out_dir / f"{path.stem}_ch{c}.png"
        fig.savefig(out, dpi=150)
        plt.close(fig)
        files.append(out)
    return files


def render_particles(csv_path: Path, out_dir: Path) -> list[Path]:
    """First-two-coordinate trajectories of every particle."""
    rows = _read_csv(csv_path)
    by_particle = defaultdict(list)
    for r in rows:
        by_particle[int(r["particle"])].append((int(r["step"]), float(r["x0"]), float(r["x1"])))
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for pi, pts in sorted(by_particle.items()):
        pts.sort()
        ax.plot([p[1] for p in pts], [p[2] for p in pts], alpha=0.7)
        ax.plot(pts[-1][1], pts[-1][2], "ko", markersize=3)
    circle = plt.Circle((0, 0), 1.0, fill=False, linestyle=":", color="gray")
    ax.add_patch(circle)
    ax.set_aspect("equal")
    ax.set_xlabel("x0")
    ax.set_ylabel("x1")
    fig.tight_layout()
    out = out_dir / "particle_trajectories.png"
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return [out]


def render_report(kind: str, input_path: Path, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "sweep":
        return render_sweep(input_path, out_dir)
    if kind == "evaluate":
        return render_evaluate(input_path, out_dir)
    if kind == "explain":
        return render_raster(input_path, out_dir)
    if kind == "particles":
        return render_particles(input_path, out_dir)
    raise ValueError(f"unknown report kind {kind!r}")
