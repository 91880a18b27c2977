"""
Kalman smoothing of labelled trajectories.

Constant-velocity state [x, y, vx, vy] with white-noise acceleration, forward
Kalman filter followed by a Rauch-Tung-Striebel backward pass. The filter is
initialised from the first two measurements so an exact constant-velocity track
has zero innovation everywhere and passes through unchanged.
"""

import numpy as np

from lanecast.config import KalmanConfig
from lanecast.core.types import Trajectory


def _model(dt: float, cfg: KalmanConfig):
    transition = np.eye(4)
    transition[0, 2] = transition[1, 3] = dt

    q = cfg.process_noise_sigma ** 2
    q_axis = q * np.array([[dt ** 4 / 4.0, dt ** 3 / 2.0], [dt ** 3 / 2.0, dt ** 2]])
    process = np.zeros((4, 4))
    process[np.ix_([0, 2], [0, 2])] = q_axis
    process[np.ix_([1, 3], [1, 3])] = q_axis

    observation = np.zeros((2, 4))
    observation[0, 0] = observation[1, 1] = 1.0
    measurement = np.eye(2) * cfg.measurement_noise_sigma ** 2
    return transition, process, observation, measurement


def smooth_positions(positions: np.ndarray, dt: float, cfg: KalmanConfig) -> np.ndarray:
    """RTS-smoothed (n, 2) positions for (n, 2) measurements, n >= 2."""
    z = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    n = len(z)
    if n < 2:
        return z.copy()

    F, Q, H, R = _model(dt, cfg)
    r2 = cfg.measurement_noise_sigma ** 2

    x0 = np.concatenate([z[0], (z[1] - z[0]) / dt])
    P0 = cfg.initial_covariance_scale * np.diag([r2, r2, 2.0 * r2 / dt ** 2, 2.0 * r2 / dt ** 2])

    filtered_x = np.zeros((n, 4))
    filtered_P = np.zeros((n, 4, 4))
    predicted_x = np.zeros((n, 4))
    predicted_P = np.zeros((n, 4, 4))

    x, P = x0, P0
    for k in range(n):
        if k > 0:
            x = F @ x
            P = F @ P @ F.T + Q
        predicted_x[k], predicted_P[k] = x, P
        innovation = z[k] - H @ x
        S = H @ P @ H.T + R
        gain = np.linalg.solve(S, H @ P).T
        x = x + gain @ innovation
        P = (np.eye(4) - gain @ H) @ P
        P = 0.5 * (P + P.T)
        filtered_x[k], filtered_P[k] = x, P

    smoothed = filtered_x.copy()
    for k in range(n - 2, -1, -1):
        gain = np.linalg.solve(predicted_P[k + 1], F @ filtered_P[k]).T
        smoothed[k] = filtered_x[k] + gain @ (smoothed[k + 1] - predicted_x[k + 1])

    return smoothed[:, :2]


def smooth(traj: Trajectory, cfg: KalmanConfig) -> Trajectory:
    """Same frame indices, positions replaced by smoothed estimates."""
    dt = 1.0 / traj.frame_rate_hz
    return traj.with_positions(smooth_positions(traj.as_array(), dt, cfg))
