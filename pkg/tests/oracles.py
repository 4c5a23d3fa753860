"""Central-difference Jacobians used as independent references."""
import numpy as np

from sodlio.geometry import ERR_DIM, boxminus, boxplus
from sodlio.imu import NOISE_DIM, step_nominal

H_STEP = 1e-6


def fd_transition(x, gyro, acc, dt, h=H_STEP):
    """Numerical d(error after one step)/d(error before) and d/d(noise)."""
    ref = step_nominal(x, gyro, acc, dt)
    Fa = np.zeros((ERR_DIM, ERR_DIM))
    for i in range(ERR_DIM):
        e = np.zeros(ERR_DIM)
        e[i] = h
        plus = boxminus(step_nominal(boxplus(x, e), gyro, acc, dt), ref)
        minus = boxminus(step_nominal(boxplus(x, -e), gyro, acc, dt), ref)
        Fa[:, i] = (plus - minus) / (2 * h)
    Fn = np.zeros((ERR_DIM, NOISE_DIM))
    for i in range(NOISE_DIM):
        n = np.zeros(NOISE_DIM)
        n[i] = h
        plus = boxminus(step_nominal(x, gyro, acc, dt, n), ref)
        minus = boxminus(step_nominal(x, gyro, acc, dt, -n), ref)
        Fn[:, i] = (plus - minus) / (2 * h)
    return Fa, Fn


def fd_residual_row(p_body, x, normal, anchor, h=H_STEP):
    """Numerical gradient of the point-to-plane distance with the plane held fixed."""
    def z(dx):
        y = boxplus(x, dx)
        return normal @ (y.rot.apply(p_body) + y.pos - anchor)

    H = np.zeros(ERR_DIM)
    for i in range(ERR_DIM):
        e = np.zeros(ERR_DIM)
        e[i] = h
        H[i] = (z(e) - z(-e)) / (2 * h)
    return H


def column_rel_error(num, ana):
    """Largest column-wise relative difference (absolute for all-zero columns)."""
    diff = np.linalg.norm(num - ana, axis=0)
    scale = np.linalg.norm(ana, axis=0)
    return float(np.max(np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), diff)))
