"""End-to-end CLI checks: artifacts, reproducibility, exit codes, config
precedence, and report figure rendering."""

import json
from pathlib import Path

import numpy as np
import pytest

from wgrad.attribution import AttributionRequest, base_grad
from wgrad.cli import main
from wgrad.fields import RoiBox, read_raster
from wgrad.toymodel import SynthConfig, ToyForecaster, synth_sequence


def _run(*argv):
    return main(list(argv))


def _data_files(out_dir: Path):
    """All emitted files except the manifest (which records timestamps)."""
    return sorted(p for p in out_dir.iterdir() if p.name != "manifest.jsonl")


def _manifest(out_dir: Path) -> dict:
    lines = (out_dir / "manifest.jsonl").read_text().splitlines()
    return json.loads(lines[-1])


# -------------------------------------------------------------- synth


def test_synth_emits_frames_and_manifest(tmp_path):
    out = tmp_path / "s"
    assert _run("synth", "--out", str(out), "--frames", "3", "--seed", "5") == 0
    frames = sorted(out.glob("state_*.wgrd"))
    assert len(frames) == 3
    x = read_raster(frames[0])
    assert x.values.shape == (16, 16, 3)
    m = _manifest(out)
    assert m["command"] == "synth"
    assert set(m["digests"]) == {f.name for f in frames}


def test_synth_matches_library(tmp_path):
    out = tmp_path / "s"
    _run("synth", "--out", str(out), "--frames", "1", "--seed", "9", "--texture", "0.5")
    x = read_raster(out / "state_0000.wgrd")
    ref = synth_sequence(SynthConfig(texture=0.5, seed=9), 0)
    assert np.array_equal(x.values, ref.values)


# -------------------------------------------------------------- explain


def test_explain_base_map_matches_library(tmp_path):
    out = tmp_path / "e"
    assert (
        _run(
            "explain", "--method", "base", "--out", str(out),
            "--seed", "4", "--model-seed", "6", "--gain", "1.3", "--texture", "1.0",
        )
        == 0
    )
    emitted = read_raster(out / "map_base.wgrd")
    x = synth_sequence(SynthConfig(texture=1.0, seed=4 * 100_000), 0)
    model = ToyForecaster(3, seed=6, gain=1.3)
    req = AttributionRequest(c_in=0, c_out=2, roi=RoiBox(6, 9, 6, 9), steps=1, seed=4)
    ref = base_grad(req, x, model)
    assert np.array_equal(emitted.values[:, :, 0], ref.map.values.astype(np.float32))
    assert _manifest(out)["target_value"] == pytest.approx(ref.target_value)


def test_explain_wg_bary_emits_measure_close_to_base_at_sigma_zero(tmp_path):
    """With sigma = 0 every perturbed sample equals the clean gradient, so
    the barycenter is TV-close to the normalized base map (entropic blur
    accounts for the residual)."""
    out = tmp_path / "w"
    common = ["--seed", "3", "--model-seed", "6", "--texture", "1.0", "--sigma", "0.0", "--n-samples", "3"]
    assert _run("explain", "--method", "wg-bary", "--out", str(out), *common) == 0
    bary = read_raster(out / "measure_wg-bary.wgrd").values[:, :, 0].astype(np.float64)
    out_b = tmp_path / "b"
    assert _run("explain", "--method", "base", "--out", str(out_b), *common) == 0
    base = np.abs(read_raster(out_b / "map_base.wgrd").values[:, :, 0].astype(np.float64))
    base /= base.sum()
    assert 0.5 * np.abs(bary - base).sum() < 0.1


def test_explain_reads_raster_input(tmp_path):
    src = tmp_path / "src"
    _run("synth", "--out", str(src), "--frames", "1", "--seed", "2", "--texture", "1.0")
    out = tmp_path / "e"
    code = _run(
        "explain", "--method", "base", "--out", str(out),
        "--input", str(src / "state_0000.wgrd"), "--seed", "2",
    )
    assert code == 0
    assert (out / "map_base.wgrd").exists()


def test_explain_unknown_method_exits_two(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        _run("explain", "--method", "gradcam", "--out", str(tmp_path))
    assert exc.value.code == 2


def test_explain_missing_input_exits_two(tmp_path):
    code = _run(
        "explain", "--method", "base", "--out", str(tmp_path / "o"),
        "--input", str(tmp_path / "nope.wgrd"),
    )
    assert code == 2


# -------------------------------------------------------------- sweep


def test_sweep_single_level_sigma_zero(tmp_path):
    out = tmp_path / "sw"
    code = _run(
        "sweep", "--out", str(out), "--events", "2", "--sigmas", "0.0",
        "--reps", "2", "--texture", "1.0",
    )
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "event_id,T,sigma,rep,d_centroid,d_peak,E_rel"
    assert len(lines) == 1 + 2 * 2
    for line in lines[1:]:
        _, _, sigma, _, d_c, d_p, e_rel = line.split(",")
        assert float(sigma) == 0.0
        assert float(d_c) == 0.0
        assert float(d_p) == 0.0
        assert float(e_rel) == 1.0


def test_sweep_descending_sigmas_exits_two(tmp_path):
    code = _run("sweep", "--out", str(tmp_path / "o"), "--sigmas", "0.4,0.1", "--events", "1")
    assert code == 2


def test_sweep_reproducible_bytes(tmp_path):
    args = ["sweep", "--events", "2", "--sigmas", "0.1,0.2", "--reps", "2", "--texture", "1.0", "--seed", "7"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert _run(*args, "--out", str(out_a)) == 0
    assert _run(*args, "--out", str(out_b)) == 0
    assert (out_a / "sweep.csv").read_bytes() == (out_b / "sweep.csv").read_bytes()


# -------------------------------------------------------------- evaluate


def test_evaluate_single_event_rows_and_sem_flag(tmp_path):
    out = tmp_path / "ev"
    code = _run(
        "evaluate", "--out", str(out), "--events", "1", "--methods", "base",
        "--texture", "1.0", "--p-max", "3", "--k-rand", "2", "--k-lle", "2",
    )
    assert code == 0
    lines = (out / "evaluate.csv").read_text().splitlines()
    body = [l.split(",") for l in lines[1:]]
    event_rows = [r for r in body if r[0] == "0"]
    assert {r[2] for r in event_rows} == {"gini", "road", "lle_l2", "lle_cos"}
    sems = [float(r[3]) for r in body if r[0] == "summary_sem"]
    assert sems and all(s == 0.0 for s in sems)
    means = {r[2]: float(r[3]) for r in body if r[0] == "summary_mean"}
    event_gini = next(float(r[3]) for r in event_rows if r[2] == "gini")
    assert means["gini"] == pytest.approx(event_gini, rel=1e-9)
    assert _manifest(out)["single_event_sem_zero"] is True


def test_evaluate_reproducible_bytes(tmp_path):
    args = [
        "evaluate", "--events", "1", "--methods", "base", "smooth",
        "--texture", "1.0", "--p-max", "2", "--k-rand", "2", "--k-lle", "2",
        "--n-samples", "3", "--seed", "11",
    ]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert _run(*args, "--out", str(out_a)) == 0
    assert _run(*args, "--out", str(out_b)) == 0
    assert (out_a / "evaluate.csv").read_bytes() == (out_b / "evaluate.csv").read_bytes()


# -------------------------------------------------------------- particles


def test_particles_zero_sigma_trials_do_not_diverge(tmp_path):
    out = tmp_path / "p"
    code = _run(
        "particles", "--out", str(out), "--trials", "3", "--sigma-init", "0",
        "--sim-steps", "20", "--variant", "sa", "--beta", "2.0",
    )
    assert code == 0
    report = json.loads((out / "basin.json").read_text())
    assert report["divergent_pairs"] == 0
    assert report["pairwise_max"] == 0.0


def test_particles_deterministic_without_noise(tmp_path):
    args = ["particles", "--sim-steps", "30", "--variant", "usa", "--beta", "2.0", "--seed", "3"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert _run(*args, "--out", str(out_a)) == 0
    assert _run(*args, "--out", str(out_b)) == 0
    for name in ("trajectory.csv", "energy.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_particles_assert_energy_usa(tmp_path):
    code = _run(
        "particles", "--out", str(tmp_path / "p"), "--variant", "usa",
        "--beta", "2.0", "--dt", "0.001", "--sim-steps", "100", "--assert-energy",
    )
    assert code == 0


def test_particles_stiff_usa_exits_three(tmp_path):
    code = _run(
        "particles", "--out", str(tmp_path / "p"), "--variant", "usa",
        "--beta", "9.0", "--dt", "1.0", "--sim-steps", "50",
    )
    assert code == 3


# -------------------------------------------------------------- barycenter


def test_barycenter_command_aggregates_rasters(tmp_path):
    src = tmp_path / "src"
    out_e = tmp_path / "e"
    _run("synth", "--out", str(src), "--frames", "1", "--seed", "2", "--texture", "1.0")
    _run(
        "explain", "--method", "base", "--out", str(out_e),
        "--input", str(src / "state_0000.wgrd"), "--seed", "2",
    )
    out = tmp_path / "bary"
    code = _run(
        "barycenter", "--out", str(out),
        "--inputs", str(out_e / "map_base.wgrd"), str(out_e / "map_base.wgrd"),
    )
    assert code == 0
    bary = read_raster(out / "barycenter.wgrd")
    assert bary.values[:, :, 0].sum() == pytest.approx(1.0, abs=1e-6)
    assert (out / "convergence.csv").exists()


def test_barycenter_multichannel_input_exits_two(tmp_path):
    src = tmp_path / "src"
    _run("synth", "--out", str(src), "--frames", "1", "--seed", "2")
    code = _run(
        "barycenter", "--out", str(tmp_path / "o"),
        "--inputs", str(src / "state_0000.wgrd"),
    )
    assert code == 2


# -------------------------------------------------------------- config file


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("frames=2\nseed=9\ntexture=0.5\n")
    out = tmp_path / "c"
    # CLI --frames overrides the config file; seed/texture come from it
    assert _run("synth", "--out", str(out), "--config", str(cfg), "--frames", "1") == 0
    frames = sorted(out.glob("state_*.wgrd"))
    assert len(frames) == 1
    ref = synth_sequence(SynthConfig(texture=0.5, seed=9), 0)
    assert np.array_equal(read_raster(frames[0]).values, ref.values)


# -------------------------------------------------------------- report


def test_report_renders_figures(tmp_path):
    out_s = tmp_path / "sw"
    _run(
        "sweep", "--out", str(out_s), "--events", "1", "--sigmas", "0.1,0.2",
        "--reps", "2", "--texture", "1.0",
    )
    out_r = tmp_path / "fig"
    assert _run("report", "--kind", "sweep", "--input", str(out_s / "sweep.csv"), "--out", str(out_r)) == 0
    assert (out_r / "sweep_displacement.png").stat().st_size > 0


def test_report_raster_kind(tmp_path):
    src = tmp_path / "src"
    _run("synth", "--out", str(src), "--frames", "1", "--seed", "2")
    out_r = tmp_path / "fig"
    code = _run("report", "--kind", "explain", "--input", str(src / "state_0000.wgrd"), "--out", str(out_r))
    assert code == 0
    assert list(out_r.glob("state_0000_ch*.png"))
