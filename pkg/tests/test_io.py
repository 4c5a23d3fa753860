import numpy as np
import pytest

from sodlio import io
from sodlio.imu import ImuSample


def test_points_round_trip(tmp_path, rng):
    t = np.sort(rng.uniform(0, 10, 500))
    p = rng.normal(size=(500, 3)) * 20
    io.write_points(tmp_path / "p.csv", t, p)
    t2, p2 = io.read_points(tmp_path / "p.csv")
    assert np.allclose(t2, t, rtol=1e-8, atol=0) and np.allclose(p2, p, rtol=1e-8, atol=1e-12)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "t,x,y,z"


def test_imu_round_trip(tmp_path, rng):
    s = [ImuSample(k * 0.005, rng.normal(size=3), rng.normal(size=3)) for k in range(100)]
    io.write_imu(tmp_path / "i.csv", s)
    r = io.read_imu(tmp_path / "i.csv")
    assert len(r) == 100
    for a, b in zip(s, r):
        assert b.t == pytest.approx(a.t, rel=1e-8, abs=1e-12)
        assert np.allclose(b.gyro, a.gyro, rtol=1e-8) and np.allclose(b.acc, a.acc, rtol=1e-8)


def test_tum_round_trip_reorders_quaternion(tmp_path, rng):
    q = rng.normal(size=(20, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    t, p = np.arange(20) * 0.1, rng.normal(size=(20, 3))
    io.write_tum(tmp_path / "t.txt", t, p, q)
    first = (tmp_path / "t.txt").read_text().split("\n")[0].split()
    assert float(first[7]) == pytest.approx(q[0, 0], abs=1e-9)
    t2, p2, q2 = io.read_tum(tmp_path / "t.txt")
    assert np.allclose(t2, t) and np.allclose(p2, p, atol=1e-6) and np.allclose(q2, q, atol=1e-9)


def test_tum_comments_and_errors(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("# header\n0.0 1 2 3 0 0 0 1\n")
    t, pos, q = io.read_tum(p)
    assert t.tolist() == [0.0] and q.tolist() == [[1, 0, 0, 0]]
    p.write_text("")
    with pytest.raises(io.DatasetError):
        io.read_tum(p)
    p.write_text("0 1 2 3\n")
    with pytest.raises(io.DatasetError):
        io.read_tum(p)
    with pytest.raises(io.DatasetError):
        io.read_tum(tmp_path / "missing.txt")


def test_wrong_header(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("time,x,y,z\n0,1,2,3\n")
    with pytest.raises(io.DatasetError, match="expected header"):
        io.read_points(p)


def test_non_finite_reports_timestamp(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("t,x,y,z\n0.1,1,2,3\n0.2,nan,2,3\n")
    with pytest.raises(io.DatasetError) as info:
        io.read_points(p)
    assert info.value.t == pytest.approx(0.2)


def test_backwards_time_reports_timestamp(tmp_path):
    p = tmp_path / "i.csv"
    p.write_text("t,wx,wy,wz,ax,ay,az\n0.1,0,0,0,0,0,9.8\n0.05,0,0,0,0,0,9.8\n")
    with pytest.raises(io.DatasetError) as info:
        io.read_imu(p)
    assert info.value.t == pytest.approx(0.05)


def test_non_numeric_and_empty(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("t,x,y,z\n0.1,a,2,3\n")
    with pytest.raises(io.DatasetError):
        io.read_points(p)
    p.write_text("")
    with pytest.raises(io.DatasetError):
        io.read_points(p)
