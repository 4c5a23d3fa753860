import json

import numpy as np
import pytest
import yaml
from conftest import cached_run, dataset, rig_config, run_dataset

from sodlio import io
from sodlio.cli import EXIT_DEGRADED, EXIT_INPUT, EXIT_OK, main
from sodlio.pipeline import (DegradationAbort, GroundTruth, PipelineError, associate, evaluate, run_arrays,
                             select_update_points, sod_sweep, write_results)

ROOM = "smooth_room"


def short_room():
    return dataset(ROOM, 0, 4.0)


# ---------------------------------------------------------------- evaluation

def test_evaluate_identical_is_zero():
    t = np.arange(50) * 0.1
    p = np.random.default_rng(0).normal(size=(50, 3))
    ev = evaluate(t, p, t, p)
    assert ev == {"end_to_end_error": 0.0, "ate_rms": 0.0, "pairs": 50}


def test_evaluate_constant_offset():
    t = np.arange(50) * 0.1
    p = np.zeros((50, 3))
    ev = evaluate(t, p + [0, 0.1, 0], t, p)
    assert ev["end_to_end_error"] == pytest.approx(0.1) and ev["ate_rms"] == pytest.approx(0.1)


def test_evaluate_matches_direct_rms(rng):
    gt_t = np.arange(0, 10, 0.005)
    gt_p = rng.normal(size=(len(gt_t), 3))
    est_t = np.arange(0.1, 9.9, 0.037)
    idx = np.rint(est_t / 0.005).astype(int)
    est_p = gt_p[idx] + rng.normal(size=(len(est_t), 3)) * 0.05
    ev = evaluate(est_t, est_p, gt_t, gt_p)
    err = [np.sqrt(sum((a - b) ** 2 for a, b in zip(est_p[i], gt_p[idx[i]]))) for i in range(len(est_t))]
    assert ev["pairs"] == len(est_t)
    assert ev["ate_rms"] == pytest.approx(float(np.sqrt(np.mean(np.square(err)))), rel=1e-12)
    assert ev["end_to_end_error"] == pytest.approx(err[-1], rel=1e-12)


def test_association_tolerance():
    ie, ig = associate([0.0, 0.5, 1.003, 2.0], [0.0, 1.0, 1.5])
    assert ie.tolist() == [0, 2] and ig.tolist() == [0, 1]
    with pytest.raises(ValueError):
        evaluate([5.0], [[0, 0, 0]], [0.0, 1.0], [[0, 0, 0], [1, 1, 1]])


def test_select_update_points_prefers_latest():
    latest = np.array([[0.01, 0.01, 0.01]])
    hist = np.array([[0.02, 0.02, 0.02], [1.0, 1.0, 1.0]])
    pts, w = select_update_points(latest, hist, np.array([0.5, 0.4]), 0.25, 10)
    assert np.array_equal(pts, np.array([[0.01, 0.01, 0.01], [1.0, 1.0, 1.0]]))
    assert w.tolist() == [1.0, 0.4]
    pts, _ = select_update_points(np.random.default_rng(1).uniform(0, 50, (5000, 3)), np.zeros((0, 3)),
                                  np.zeros(0), 0.25, 600)
    assert len(pts) == 600


# ---------------------------------------------------------------- run loop

def test_hook_event_order():
    events = []
    run_dataset(short_room(), hook=lambda e, t, d: events.append((e, t)))
    names = [e for e, _ in events]
    assert len(names) % 4 == 0 and len(names) > 0
    for k in range(0, len(names), 4):
        assert names[k:k + 4] == ["propagate", "update", "overlap", "merge"]
        assert len({t for _, t in events[k:k + 4]}) == 1


def test_timestamps_advance_by_shift():
    res = cached_run(ROOM, 0, "adaptive", 4.0).result
    t = res.times()
    shifts = np.array([r.shift_time for r in res.records])
    assert np.allclose(np.diff(t), shifts[1:], atol=1e-9)
    assert res.metrics.updates == len(res.records) and res.metrics.degraded_updates == 0


def test_smooth_motion_keeps_full_shift():
    res = cached_run(ROOM, 0, "adaptive", 4.0).result
    assert all(r.shift_time == 0.1 and r.seg_time <= 2 for r in res.records)
    assert min(r.overlap for r in res.records) > 0.9


def test_fixed_mode_constant_step():
    res = cached_run(ROOM, 0, "fixed", 4.0).result
    assert {r.shift_time for r in res.records} == {0.1}
    o = np.array([r.overlap for r in res.records])
    assert np.all((o >= 0) & (o <= 1))
    assert res.metrics.end_to_end_error < 0.1


def test_short_run_accuracy():
    res = cached_run(ROOM, 0, "adaptive", 4.0).result
    assert res.metrics.end_to_end_error < 0.05 and res.metrics.ate_rms < 0.05


def test_moving_start_uses_ground_truth():
    ds = short_room()
    cfg = rig_config(ds, init__moving=True)
    res = run_arrays(cfg, ds.point_t, ds.points, ds.imu, ds.ground_truth())
    assert res.metrics.end_to_end_error < 0.05
    with pytest.raises(PipelineError):
        run_arrays(cfg, ds.point_t, ds.points, ds.imu, None)


def test_degradation_abort_keeps_partial_result():
    ds = short_room()
    with pytest.raises(DegradationAbort) as info:
        run_dataset(ds, eskf__min_valid_points=10 ** 6, run__max_degraded=3)
    res = info.value.result
    assert res.aborted and len(res.records) == 4 and all(r.degraded for r in res.records)


def test_empty_or_short_streams():
    ds = short_room()
    cfg = rig_config(ds)
    with pytest.raises(PipelineError):
        run_arrays(cfg, [], np.zeros((0, 3)), ds.imu)
    with pytest.raises(PipelineError):
        run_arrays(cfg, ds.point_t, ds.points, [])
    keep = ds.point_t < ds.point_t[0] + 0.05
    with pytest.raises(PipelineError):
        run_arrays(cfg, ds.point_t[keep], ds.points[keep], ds.imu)


def test_imu_gap_is_reported():
    ds = short_room()
    imu = [s for s in ds.imu if not 2.0 < s.t < 2.5]
    with pytest.raises(PipelineError) as info:
        run_arrays(rig_config(ds), ds.point_t, ds.points, imu)
    assert info.value.t is not None and 2.0 <= info.value.t <= 2.7


def test_results_are_deterministic(tmp_path):
    ds = dataset(ROOM, 0, 2.0)
    outs = []
    for k in range(2):
        res = run_dataset(ds)
        outs.append(write_results(res, tmp_path / str(k), rig_config(ds)))
    for name in ("trajectory.txt", "updates.csv", "metrics.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = (outs[0] / "updates.csv").read_text().splitlines()
    assert rows[0] == "t,O,seg_time,shift_time,echo_time,iterations,valid_points,wall_us"
    assert all(r.endswith(",0") for r in rows[1:])


def test_corridor_shift_shrinks_in_turns_and_recovers():
    res = cached_run("corridor_sharp_turns", 0).result
    sc = dataset("corridor_sharp_turns", 0).scenario
    t = res.times()
    shift = np.array([r.shift_time for r in res.records])
    for lo, hi in sc.turns:
        inside = (t >= lo) & (t <= hi + 0.3)
        assert shift[inside].min() < 0.1
    # away from turns the step returns to the full frame
    far = np.ones(len(t), bool)
    for lo, hi in sc.turns:
        far &= (t < lo - 0.5) | (t > hi + 1.5)
    assert np.mean(shift[far] == 0.1) > 0.9


# ---------------------------------------------------------------- sweep

def test_sweep_smooth_room_is_flat():
    ds = short_room()
    times, series = sod_sweep(rig_config(ds), ds.point_t, ds.points, ds.ground_truth(), [0.1, 0.2, 0.4])
    assert set(series) == {0.1, 0.2, 0.4}
    for vals in series.values():
        assert len(vals) == len(times) and np.all(np.isfinite(vals))
        # the first slices meet a map built from a single frame
        settled = vals[times > times[0] + 1.0]
        assert settled.min() > 0.9 and settled.std() < 0.05
    assert np.allclose(np.diff(times), 0.1)


def test_sweep_needs_two_sizes():
    ds = short_room()
    with pytest.raises(ValueError):
        sod_sweep(rig_config(ds), ds.point_t, ds.points, ds.ground_truth(), [0.2])


# ---------------------------------------------------------------- command line

@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["sim", "--scenario", ROOM, "--duration", "3", "--out-dir", str(out)]) == EXIT_OK
    return out


def test_cli_sim_outputs(sim_dir):
    info = json.loads((sim_dir / "scenario.json").read_text())
    assert info["scenario"] == ROOM and info["points"] > 0
    t, p = io.read_points(sim_dir / "points.csv")
    assert len(t) == info["points"]
    assert set(yaml.safe_load((sim_dir / "rig.yaml").read_text())) >= {"extrinsic.translation", "imu.gyro"}


def test_cli_run_and_eval(sim_dir, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["run", "--config", str(sim_dir / "rig.yaml"), "--points", str(sim_dir / "points.csv"),
               "--imu", str(sim_dir / "imu.csv"), "--gt", str(sim_dir / "groundtruth.txt"),
               "--out-dir", str(out), "--export-map", "--timing"])
    assert rc == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["aborted"] is False and metrics["end_to_end_error"] < 0.05
    assert (out / "map.xyz").stat().st_size > 0
    walls = [int(r.split(",")[-1]) for r in (out / "updates.csv").read_text().splitlines()[1:]]
    assert all(w > 0 for w in walls)
    capsys.readouterr()
    rc = main(["eval", "--trajectory", str(out / "trajectory.txt"), "--gt", str(sim_dir / "groundtruth.txt"),
               "--out-dir", str(tmp_path / "ev")])
    assert rc == EXIT_OK
    ev = json.loads(capsys.readouterr().out)
    assert ev["end_to_end_error"] == pytest.approx(metrics["end_to_end_error"], abs=2e-6)


def test_cli_fixed_and_moving(sim_dir, tmp_path):
    rc = main(["run", "--config", str(sim_dir / "rig.yaml"), "--points", str(sim_dir / "points.csv"),
               "--imu", str(sim_dir / "imu.csv"), "--gt", str(sim_dir / "groundtruth.txt"),
               "--out-dir", str(tmp_path), "--mode", "fixed", "--init-moving"])
    assert rc == EXIT_OK
    shifts = {r.split(",")[3] for r in (tmp_path / "updates.csv").read_text().splitlines()[1:]}
    assert shifts == {"0.100000"}


def test_cli_sweep(sim_dir, tmp_path):
    rc = main(["sweep", "--config", str(sim_dir / "rig.yaml"), "--points", str(sim_dir / "points.csv"),
               "--gt", str(sim_dir / "groundtruth.txt"), "--voxel-sizes", "0.1,0.3", "--out-dir", str(tmp_path)])
    assert rc == EXIT_OK
    a = (tmp_path / "sweep_0.1.csv").read_text().splitlines()
    b = (tmp_path / "sweep_0.3.csv").read_text().splitlines()
    assert a[0] == "t,O" and [r.split(",")[0] for r in a] == [r.split(",")[0] for r in b]


def test_cli_degraded_exit(sim_dir, tmp_path):
    cfg = yaml.safe_load((sim_dir / "rig.yaml").read_text())
    cfg.update({"eskf.min_valid_points": 10 ** 6, "run.max_degraded": 2})
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    rc = main(["run", "--config", str(tmp_path / "c.yaml"), "--points", str(sim_dir / "points.csv"),
               "--imu", str(sim_dir / "imu.csv"), "--out-dir", str(tmp_path / "out")])
    assert rc == EXIT_DEGRADED
    assert json.loads((tmp_path / "out" / "metrics.json").read_text())["aborted"] is True
    assert len((tmp_path / "out" / "trajectory.txt").read_text().splitlines()) == 3


def test_cli_bad_input(sim_dir, tmp_path):
    (tmp_path / "bad.csv").write_text("time,x,y,z\n0,0,0,0\n")
    (tmp_path / "bad.yaml").write_text("window.nope: 1\n")
    common = ["--imu", str(sim_dir / "imu.csv"), "--out-dir", str(tmp_path / "o")]
    assert main(["run", "--points", str(tmp_path / "missing.csv")] + common) == EXIT_INPUT
    assert main(["run", "--points", str(tmp_path / "bad.csv")] + common) == EXIT_INPUT
    assert main(["run", "--config", str(tmp_path / "bad.yaml"), "--points", str(sim_dir / "points.csv")]
                + common) == EXIT_INPUT
    assert main(["sim", "--scenario", "parking_garage", "--out-dir", str(tmp_path)]) == EXIT_INPUT
    with pytest.raises(SystemExit):
        main(["sweep", "--points", "p", "--gt", "g", "--voxel-sizes", "0.2", "--out-dir", "o"])
