import numpy as np
import pytest
from oracles import fd_residual_row

from sodlio.eskf import (EskfConfig, iterated_update, kalman_gain, kalman_gain_information, measurement_row,
                         posterior_covariance, residual_jacobian, stacked_measurements)
from sodlio.geometry import ERR_DIM, POS, ROT, NavState, Pose, boxminus, boxplus, so3_exp
from sodlio.regmap import RegistrationMap

G = np.array([0.0, 0.0, -9.81])
ROOM = (np.array([-5.0, -4.0, -1.0]), np.array([5.0, 4.0, 2.0]))


def random_state(rng):
    return NavState(so3_exp(rng.normal(size=3)), rng.normal(size=3) * 5, rng.normal(size=3),
                    rng.normal(size=3) * 0.01, rng.normal(size=3) * 0.1, G)


def room_surface(rng, n):
    """Random points on the six faces of the room box."""
    lo, hi = ROOM
    face = rng.integers(0, 6, n)
    pts = rng.uniform(lo, hi, size=(n, 3))
    axis, side = face // 2, face % 2
    pts[np.arange(n), axis] = np.where(side, hi[axis], lo[axis])
    return pts


@pytest.fixture(scope="module")
def room_map():
    rng = np.random.default_rng(7)
    m = RegistrationMap(0.5, 20)
    m.merge_frame(room_surface(rng, 40_000))
    return m


def frame_at(truth: NavState, rng, n=600):
    world = room_surface(rng, n)
    # keep points away from edges where kNN straddles two faces
    lo, hi = ROOM
    inner = np.sum((world > lo + 0.6) & (world < hi - 0.6), axis=1) == 2
    world = world[inner]
    return truth.rot.inverse().apply(world - truth.pos)


def prior_cov():
    return np.diag(np.repeat([1e-4, 1e-4, 1e-4, 1e-6, 1e-3, 1e-4], 3))


def test_residual_examples():
    x = NavState()
    n, a = np.array([0, 0, 1.0]), np.zeros(3)
    z, _ = measurement_row(np.array([0.3, -0.2, 0.0]), x, n, a)
    assert z == 0.0
    z, _ = measurement_row(np.array([0.3, -0.2, 0.05]), x, n, a)
    assert z == pytest.approx(0.05, abs=1e-15)


def test_jacobian_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(300):
        x = random_state(rng)
        p = rng.normal(size=3) * 10
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        a = rng.normal(size=3) * 10
        _, H = measurement_row(p, x, n, a)
        num = fd_residual_row(p, x, n, a)
        worst = max(worst, np.linalg.norm(num - H) / np.linalg.norm(H))
        assert np.all(H[6:] == 0.0)
    assert worst < 1e-5


def test_stacked_rows_match_single(rng):
    x = random_state(rng)
    p = rng.normal(size=(20, 3))
    n = rng.normal(size=(20, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    a = rng.normal(size=(20, 3))
    z, H = stacked_measurements(p, x, n, a)
    for i in range(20):
        zi, Hi = measurement_row(p[i], x, n[i], a[i])
        assert z[i] == pytest.approx(zi, abs=1e-12)
        assert np.allclose(H[i], Hi, atol=1e-12)
    assert np.all(H[:, 6:] == 0.0)


def test_single_point_measurement(room_map):
    ext = Pose(trans=np.array([0.1, 0.0, 0.0]))
    m = residual_jacobian([4.8, 0.3, 0.2], NavState(), ext, room_map)
    # 4.8 m plus the 0.1 m lever arm leaves the point 0.1 m short of the x = 5 wall
    assert m is not None and m.z == pytest.approx(-0.1, abs=1e-9)
    assert m.r == pytest.approx(0.02 ** 2)
    assert residual_jacobian([40.0, 0, 0], NavState(), ext, room_map) is None


def test_gain_forms_agree(rng):
    for _ in range(50):
        A = rng.normal(size=(ERR_DIM, ERR_DIM))
        P = A @ A.T + np.eye(ERR_DIM) * 1e-3
        m = rng.integers(1, 200)
        H = rng.normal(size=(m, ERR_DIM))
        r = rng.uniform(1e-4, 1e-1, m)
        K1, K2 = kalman_gain(P, H, r), kalman_gain_information(P, H, r)
        assert np.abs(K1 - K2).max() <= 1e-9 * max(1.0, np.abs(K1).max())


def test_zero_gain_keeps_prior(rng):
    A = rng.normal(size=(ERR_DIM, ERR_DIM))
    P = A @ A.T
    P = 0.5 * (P + P.T)
    assert np.allclose(posterior_covariance(P, np.zeros((ERR_DIM, 3)), rng.normal(size=(3, ERR_DIM))), P)


def test_perfect_scalar_measurement():
    P = np.eye(ERR_DIM) * 0.1
    H = np.zeros((1, ERR_DIM))
    H[0, 4] = 1.0
    K = kalman_gain(P, H, np.array([1e-14]))
    Pp = posterior_covariance(P, K, H)
    assert Pp[4, 4] < 1e-12 and Pp[0, 0] == pytest.approx(0.1)


def test_posterior_is_psd(rng):
    for _ in range(50):
        A = rng.normal(size=(ERR_DIM, ERR_DIM))
        P = A @ A.T + 1e-6 * np.eye(ERR_DIM)
        H = rng.normal(size=(30, ERR_DIM))
        r = rng.uniform(1e-3, 1, 30)
        Pp = posterior_covariance(P, kalman_gain(P, H, r), H)
        assert np.linalg.eigvalsh(Pp).min() > -1e-8 * np.abs(P).max()
        assert np.trace(Pp) <= np.trace(P)


def test_update_at_truth_is_still(room_map, rng):
    truth = NavState(so3_exp([0.02, -0.01, 0.4]), np.array([0.5, -0.3, 0.4]), grav=G)
    pts = frame_at(truth, rng)
    x, P, rep = iterated_update(truth, prior_cov(), pts, np.ones(len(pts)), room_map)
    assert rep.iterations == 1 and rep.converged
    assert rep.final_dx_norm < EskfConfig().convergence_eps


def test_update_converges_from_perturbation(room_map, rng):
    truth = NavState(so3_exp([0.02, -0.01, 0.4]), np.array([0.5, -0.3, 0.4]), grav=G)
    pts = frame_at(truth, rng)
    d = np.zeros(ERR_DIM)
    d[ROT] = np.radians(0.5) * np.array([0.6, 0.0, 0.8])
    d[POS] = 0.01 * np.array([0.0, 0.6, 0.8])
    prior = boxplus(truth, d)
    P = prior_cov()
    x, Pp, rep = iterated_update(prior, P, pts, np.ones(len(pts)), room_map)
    e = boxminus(x, truth)
    assert np.linalg.norm(e[POS]) < 2e-3
    assert np.degrees(np.linalg.norm(e[ROT])) < 0.05
    assert rep.iterations <= 5 and rep.converged
    assert np.all(np.diff(rep.residual_rms) < 0)
    assert np.trace(Pp) <= np.trace(P)
    assert np.abs(Pp - Pp.T).max() < 1e-12


def test_without_rematch_still_converges(room_map, rng):
    truth = NavState(so3_exp([0.0, 0.0, -0.3]), np.array([-1.0, 0.5, 0.0]), grav=G)
    pts = frame_at(truth, rng)
    d = np.zeros(ERR_DIM)
    d[POS] = [0.01, -0.005, 0.0]
    x, _, rep = iterated_update(boxplus(truth, d), prior_cov(), pts, np.ones(len(pts)), room_map,
                                EskfConfig(rematch=False))
    assert np.linalg.norm(x.pos - truth.pos) < 2e-3


def test_empty_map_degrades_to_prior(rng):
    x = random_state(rng)
    P = prior_cov()
    y, Q, rep = iterated_update(x, P, rng.normal(size=(100, 3)), np.ones(100), RegistrationMap())
    assert rep.degraded and y is x and Q is P and rep.valid_points == 0


def test_too_few_points_degrades(room_map, rng):
    truth = NavState(grav=G)
    pts = frame_at(truth, rng, 60)[:30]
    y, _, rep = iterated_update(truth, prior_cov(), pts, np.ones(len(pts)), room_map)
    assert rep.degraded and y is truth


def test_down_weighted_points_pull_less(room_map, rng):
    truth = NavState(so3_exp([0.0, 0.0, 0.2]), np.array([0.2, 0.1, 0.3]), grav=G)
    pts = frame_at(truth, rng, 300)
    d = np.zeros(ERR_DIM)
    d[POS] = [0.02, 0.0, 0.0]
    prior = boxplus(truth, d)
    P = prior_cov() * 100
    cfg = EskfConfig(max_iterations=1)
    full, *_ = iterated_update(prior, P, pts, np.ones(len(pts)), room_map, cfg)
    weak, *_ = iterated_update(prior, P, pts, np.full(len(pts), 0.05), room_map, cfg)
    assert np.linalg.norm(weak.pos - prior.pos) < np.linalg.norm(full.pos - prior.pos)


def test_first_iterate_matches_literal_gain(room_map, rng):
    from sodlio.eskf import match_planes
    truth = NavState(so3_exp([0.0, 0.01, 0.3]), np.array([0.4, 0.2, 0.1]), grav=G)
    pts = frame_at(truth, rng, 400)
    d = np.zeros(ERR_DIM)
    d[POS] = [0.01, 0.01, -0.01]
    prior = boxplus(truth, d)
    P = prior_cov()
    cfg = EskfConfig(max_iterations=1)
    x, Pp, _ = iterated_update(prior, P, pts, np.ones(len(pts)), room_map, cfg)
    nr, an, ok = match_planes(room_map, prior.rot.apply(pts) + prior.pos, cfg)
    z, H = stacked_measurements(pts, prior, nr, an)
    ok &= np.abs(z) <= cfg.outlier_gate
    z, H = z[ok], H[ok]
    K = kalman_gain(P, H, np.full(len(z), cfg.meas_std ** 2))
    ref = boxplus(prior, -K @ z)
    assert np.allclose(x.pos, ref.pos, atol=1e-9) and x.rot.angle_to(ref.rot) < 1e-9
    assert np.allclose(Pp, posterior_covariance(P, K, H), atol=1e-9)
