"""Ground-truth systems and data generation.

Two benchmark families: randomly generated stable discrete-time linear
systems (skew-symmetric construction, all eigenvalue moduli forced to
exp(-dt^2)) and a planar two-joint robot arm with gravity, Coriolis
coupling and viscous friction, integrated with RK4 under zero-order-hold
inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import DimensionError, mat_exp

__all__ = [
    "DivergenceError",
    "LinearSystem",
    "RobotParams",
    "Trajectory",
    "JacobianMatrix",
    "random_linear_system",
    "robot_continuous_dynamics",
    "step",
    "lowpass_random_input",
    "rollout",
    "true_jacobian",
    "default_initial_state",
    "save_trajectory",
    "load_trajectory",
    "exploration_input",
    "system_to_dict",
    "system_from_dict",
]

ROLLOUT_DIVERGENCE_NORM = 1e6


class DivergenceError(RuntimeError):
    """A simulated state left the admissible region."""

    def __init__(self, message, step_index):
        super().__init__(message)
        self.step_index = step_index


@dataclass
class LinearSystem:
    """Discrete-time LTI system x+ = A x + B u."""

    A: np.ndarray
    B: np.ndarray
    dt: float

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass
class RobotParams:
    """Two-link planar arm parameters.

    Joint angles are measured from the horizontal; q = (-pi/2, 0) is the
    hanging rest configuration.  Defaults are a unit textbook arm: point
    of mass at the link midpoint, rod inertia m*l^2/12.
    """

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5
    i1: float = 1.0 / 12.0
    i2: float = 1.0 / 12.0
    g: float = 9.81
    b1: float = 0.1
    b2: float = 0.1
    dt: float = 0.01

    def __post_init__(self):
        if min(self.m1, self.m2, self.l1, self.l2, self.dt) <= 0:
            raise ValueError("masses, lengths and dt must be positive")
        if min(self.b1, self.b2) < 0:
            raise ValueError("friction coefficients must be non-negative")

    @property
    def n(self):
        return 4

    @property
    def m(self):
        return 2


@dataclass
class Trajectory:
    """Time-indexed states and inputs sampled at a fixed rate.

    ``states[t + 1]`` is the successor of ``(states[t], inputs[t])``; the
    final input is recorded but has no successor.
    """

    states: np.ndarray
    inputs: np.ndarray
    dt: float

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.states.ndim != 2 or self.inputs.ndim != 2:
            raise DimensionError("states and inputs must be 2-D arrays")
        if len(self.states) != len(self.inputs):
            raise DimensionError(
                f"states ({len(self.states)}) and inputs ({len(self.inputs)}) "
                "must have equal length"
            )
        if len(self.states) < 2:
            raise DimensionError("a trajectory needs at least two samples")

    @property
    def T(self):
        return len(self.states)

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.inputs.shape[1]

    def transitions(self):
        """(x, u, x_next) arrays over the T-1 recorded transitions."""
        return self.states[:-1], self.inputs[:-1], self.states[1:]


@dataclass
class JacobianMatrix:
    """One-step input-output Jacobian, partitioned [state block | input block]."""

    entries: np.ndarray
    n: int = field(default=0)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.n == 0:
            self.n = self.entries.shape[0]
        if self.entries.shape[0] != self.n or self.entries.shape[1] <= self.n:
            raise DimensionError(
                f"Jacobian must be n x (n+m) with n={self.n}, got {self.entries.shape}"
            )

    @property
    def m(self):
        return self.entries.shape[1] - self.n

    @property
    def state_block(self):
        return self.entries[:, : self.n]

    @property
    def input_block(self):
        return self.entries[:, self.n :]


def random_linear_system(n: int, m: int, dt: float, seed: int) -> LinearSystem:
    """Draw a random stable linear system.

    A skew-symmetric draw is damped by dt and passed through the matrix
    exponential, which puts every eigenvalue of the discrete A exactly on
    the circle of radius exp(-dt^2).  B is i.i.d. standard normal.
    """
    if n < 1 or m < 1:
        raise DimensionError(f"state and input dimensions must be >= 1, got n={n}, m={m}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    A0 = rng.standard_normal((n, n))
    A = A0 - A0.T
    A = A - dt * np.eye(n)
    A = mat_exp(dt * A)
    B = rng.standard_normal((n, m))
    return LinearSystem(A=A, B=B, dt=dt)


def _robot_matrices(x, p: RobotParams):
    q2 = x[1]
    c2 = np.cos(q2)
    m11 = p.m1 * p.lc1**2 + p.i1 + p.m2 * (p.l1**2 + p.lc2**2 + 2 * p.l1 * p.lc2 * c2) + p.i2
    m12 = p.m2 * (p.lc2**2 + p.l1 * p.lc2 * c2) + p.i2
    m22 = p.m2 * p.lc2**2 + p.i2
    return np.array([[m11, m12], [m12, m22]])


def robot_continuous_dynamics(x, u, p: RobotParams):
    """State derivative [dq, ddq] of the two-link arm.

    ddq solves M(q) ddq = u - C(q,dq) dq - G(q) - F(dq) with viscous
    friction F = diag(b1, b2) dq.
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.shape != (4,) or u.shape != (2,):
        raise DimensionError(f"robot expects x in R^4 and u in R^2, got {x.shape}, {u.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or input")

    q1, q2, dq1, dq2 = x
    M = _robot_matrices(x, p)
    h = p.m2 * p.l1 * p.lc2 * np.sin(q2)
    coriolis = np.array([-h * dq2 * (2.0 * dq1 + dq2), h * dq1 * dq1])
    grav = p.g * np.array(
        [
            (p.m1 * p.lc1 + p.m2 * p.l1) * np.cos(q1) + p.m2 * p.lc2 * np.cos(q1 + q2),
            p.m2 * p.lc2 * np.cos(q1 + q2),
        ]
    )
    fric = np.array([p.b1 * dq1, p.b2 * dq2])
    ddq = np.linalg.solve(M, u - coriolis - grav - fric)
    return np.concatenate(([dq1, dq2], ddq))


def _rk4_step(x, u, p: RobotParams, dt=None):
    dt = p.dt if dt is None else dt
    k1 = robot_continuous_dynamics(x, u, p)
    k2 = robot_continuous_dynamics(x + 0.5 * dt * k1, u, p)
    k3 = robot_continuous_dynamics(x + 0.5 * dt * k2, u, p)
    k4 = robot_continuous_dynamics(x + dt * k3, u, p)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(system, x, u, dt=None):
    """One discrete transition: exact matrix update (linear) or RK4 (robot)."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if isinstance(system, LinearSystem):
        if x.shape != (system.n,) or u.shape != (system.m,):
            raise DimensionError(
                f"expected x in R^{system.n}, u in R^{system.m}, got {x.shape}, {u.shape}"
            )
        return system.A @ x + system.B @ u
    if isinstance(system, RobotParams):
        return _rk4_step(x, u, system, dt=dt)
    raise TypeError(f"unknown system type {type(system).__name__}")


def lowpass_random_input(T: int, m: int, pole: float, sigma: float, seed: int):
    """First-order low-pass filtered Gaussian noise, u_t = a u_{t-1} + (1-a) w_t."""
    if T < 1:
        raise DimensionError("T must be >= 1")
    if not 0.0 <= pole < 1.0:
        raise ValueError(f"pole must lie in [0, 1), got {pole}")
    rng = np.random.default_rng(seed)
    w = sigma * rng.standard_normal((T, m))
    u = np.empty((T, m))
    u[0] = (1.0 - pole) * w[0]
    for t in range(1, T):
        u[t] = pole * u[t - 1] + (1.0 - pole) * w[t]
    return u


def exploration_input(T, m, pole=0.9, target_std=1.0, seed=0):
    """Low-pass exploration input with the white-noise scale set so the
    stationary per-channel standard deviation equals ``target_std``."""
    if not 0.0 <= pole < 1.0:
        raise ValueError(f"pole must lie in [0, 1), got {pole}")
    sigma = target_std * np.sqrt((1.0 + pole) / (1.0 - pole))
    return lowpass_random_input(T, m, pole, sigma, seed)


def default_initial_state(system):
    """Rest state: origin for linear systems, hanging configuration for the arm."""
    if isinstance(system, LinearSystem):
        return np.zeros(system.n)
    if isinstance(system, RobotParams):
        return np.array([-np.pi / 2.0, 0.0, 0.0, 0.0])
    raise TypeError(f"unknown system type {type(system).__name__}")


def rollout(system, x0, inputs, measurement_noise: float = 0.0, seed: int = 0) -> Trajectory:
    """Simulate the system along an input sequence.

    Dynamics evolve on clean states; Gaussian noise of scale
    ``measurement_noise`` corrupts the recorded states only.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2:
        raise DimensionError("inputs must be a (T, m) array")
    if measurement_noise < 0:
        raise ValueError("measurement noise scale must be >= 0")
    T = len(inputs)
    x = np.asarray(x0, dtype=np.float64)
    clean = np.empty((T, x.size))
    clean[0] = x
    for t in range(T - 1):
        x = step(system, x, inputs[t])
        norm = np.linalg.norm(x)
        if not np.isfinite(norm) or norm > ROLLOUT_DIVERGENCE_NORM:
            raise DivergenceError(
                f"state norm {norm:.3e} exceeded {ROLLOUT_DIVERGENCE_NORM:.0e} "
                f"at step {t + 1}",
                step_index=t + 1,
            )
        clean[t + 1] = x
    recorded = clean
    if measurement_noise > 0.0:
        rng = np.random.default_rng(seed)
        recorded = clean + measurement_noise * rng.standard_normal(clean.shape)
    dt = system.dt
    return Trajectory(states=recorded, inputs=inputs, dt=dt)


def true_jacobian(system, x, u) -> JacobianMatrix:
    """Ground-truth one-step Jacobian [A B] at (x, u).

    Exact for linear systems; central finite differences of the discrete
    step for the robot, with per-coordinate step 1e-6 * max(1, |coord|).
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if isinstance(system, LinearSystem):
        return JacobianMatrix(np.hstack([system.A, system.B]), n=system.n)
    if isinstance(system, RobotParams):
        n, m = x.size, u.size
        J = np.empty((n, n + m))
        z = np.concatenate([x, u])
        for i in range(n + m):
            h = 1e-6 * max(1.0, abs(z[i]))
            zp = z.copy()
            zm = z.copy()
            zp[i] += h
            zm[i] -= h
            fp = step(system, zp[:n], zp[n:])
            fm = step(system, zm[:n], zm[n:])
            J[:, i] = (fp - fm) / (2.0 * h)
        return JacobianMatrix(J, n=n)
    raise TypeError(f"unknown system type {type(system).__name__}")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(value):
    return repr(float(value))


def system_to_dict(system):
    if isinstance(system, LinearSystem):
        return {
            "kind": "linear",
            "A": system.A.tolist(),
            "B": system.B.tolist(),
            "dt": system.dt,
        }
    if isinstance(system, RobotParams):
        return {
            "kind": "robot",
            "m1": system.m1,
            "m2": system.m2,
            "l1": system.l1,
            "l2": system.l2,
            "lc1": system.lc1,
            "lc2": system.lc2,
            "i1": system.i1,
            "i2": system.i2,
            "g": system.g,
            "b1": system.b1,
            "b2": system.b2,
            "dt": system.dt,
        }
    raise TypeError(f"unknown system type {type(system).__name__}")


def system_from_dict(d):
    kind = d.get("kind")
    if kind == "linear":
        return LinearSystem(
            A=np.asarray(d["A"], dtype=np.float64),
            B=np.asarray(d["B"], dtype=np.float64),
            dt=float(d["dt"]),
        )
    if kind == "robot":
        fields = {k: float(v) for k, v in d.items() if k != "kind"}
        return RobotParams(**fields)
    raise ValueError(f"unknown system kind {kind!r}")


def save_trajectory(traj: Trajectory, path, system=None, seed=None, noise=0.0):
    """Write `t,x1..xn,u1..um` CSV plus a JSON sidecar with the metadata."""
    path = Path(path)
    header = (
        ["t"]
        + [f"x{i + 1}" for i in range(traj.n)]
        + [f"u{i + 1}" for i in range(traj.m)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(traj.T):
            row = [t] + [_fmt(v) for v in traj.states[t]] + [_fmt(v) for v in traj.inputs[t]]
            writer.writerow(row)
    sidecar = {
        "dt": traj.dt,
        "n": traj.n,
        "m": traj.m,
        "T": traj.T,
        "seed": seed,
        "measurement_noise": noise,
        "system": system_to_dict(system) if system is not None else None,
    }
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def load_trajectory(path):
    """Read a trajectory CSV and its sidecar; returns (Trajectory, metadata)."""
    path = Path(path)
    with open(path.with_suffix(".json")) as fh:
        meta = json.load(fh)
    n, m = meta["n"], meta["m"]
    states, inputs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            vals = [float(v) for v in row[1:]]
            states.append(vals[:n])
            inputs.append(vals[n : n + m])
    traj = Trajectory(states=np.array(states), inputs=np.array(inputs), dt=float(meta["dt"]))
    return traj, meta
