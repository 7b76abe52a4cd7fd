"""Linear time-varying teacher models fit along a single trajectory.

The fit minimizes

    sum_t ||x_{t+1} - A_t x_t - B_t u_t||^2
      + lambda^2 sum_t ||k_{t+1} - k_t||^2 + eps^2 sum_t ||k_t||^2

over all per-step coefficient vectors k_t (the flattened [A_t B_t]).
Because both penalties act identically on every output dimension, the
normal equations decouple into one block-tridiagonal SPD system per state
dimension, all sharing the same coefficient matrix; a single banded
Cholesky factorization solves them jointly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .benchmarks import Trajectory
from .linalg import DimensionError, NotSPDError, solve_banded_spd

__all__ = [
    "LTVModel",
    "LTVFitConfig",
    "RankDeficiencyError",
    "fit_ltv",
    "ltv_predict",
    "save_ltv",
    "load_ltv",
]


class RankDeficiencyError(RuntimeError):
    """The unregularized fit is singular (insufficient excitation)."""


@dataclass
class LTVFitConfig:
    """Smoothness weight and ridge floor for the LTV fit."""

    lam: float = 10.0
    prior_scale: float = 1e-3

    def __post_init__(self):
        if self.lam < 0 or self.prior_scale < 0:
            raise ValueError("lam and prior_scale must be >= 0")


@dataclass
class LTVModel:
    """Per-step (A_t, B_t) pairs; the Jacobian teacher along one trajectory."""

    A_seq: np.ndarray
    B_seq: np.ndarray
    dt: float

    def __post_init__(self):
        self.A_seq = np.asarray(self.A_seq, dtype=np.float64)
        self.B_seq = np.asarray(self.B_seq, dtype=np.float64)
        if len(self.A_seq) != len(self.B_seq):
            raise DimensionError("A_seq and B_seq must have equal length")

    def __len__(self):
        return len(self.A_seq)

    @property
    def n(self):
        return self.A_seq.shape[1]

    @property
    def m(self):
        return self.B_seq.shape[2]

    def coefficients(self, t):
        """Flattened (row-major) [A_t B_t], the paper-form parameter vector."""
        return np.hstack([self.A_seq[t], self.B_seq[t]]).reshape(-1)


def fit_ltv(traj: Trajectory, cfg: LTVFitConfig | None = None) -> LTVModel:
    """Fit the time-varying linear teacher to one trajectory.

    Exact solution of the convex quadratic via a banded block Cholesky
    solve.  Raises RankDeficiencyError when the problem is singular, which
    happens for lam = prior_scale = 0 under insufficient excitation.
    """
    cfg = cfg or LTVFitConfig()
    if traj.T < 3:
        raise DimensionError("fit_ltv needs at least 3 samples (2 transitions)")
    x, u, xn = traj.transitions()
    N = len(x)
    n, m = traj.n, traj.m
    p = n + m
    z = np.hstack([x, u])

    lam2 = cfg.lam**2
    eps2 = cfg.prior_scale**2

    # Beyond the float64 crossover the smoothness term drowns the data blocks
    # (lam^2 * eps_mach exceeds their magnitude) and the exact minimizer is the
    # constant ridge solution to working precision; solve that single block.
    data_scale = max(float(np.mean(z * z) * p), eps2, np.finfo(np.float64).tiny)
    if lam2 > 1e10 * data_scale:
        gram = (z.T @ z + N * eps2 * np.eye(p))[None, :, :]
        rhs = (z.T @ xn)[None, :, :]
        try:
            sol = solve_banded_spd(gram, np.zeros((0, p, p)), rhs)
        except NotSPDError as err:
            raise RankDeficiencyError(
                "LTV normal equations are rank deficient (insufficient excitation); "
                "set lam > 0 or prior_scale > 0 to regularize"
            ) from err
        K = np.tile(sol[0].T, (N, 1, 1))
        return LTVModel(A_seq=K[:, :, :n].copy(), B_seq=K[:, :, n:].copy(), dt=traj.dt)

    diag = np.einsum("ti,tj->tij", z, z)
    smooth = np.full(N, 2.0 * lam2)
    smooth[0] = lam2
    smooth[-1] = lam2
    if N == 1:
        smooth[:] = 0.0
    diag += (smooth + eps2)[:, None, None] * np.eye(p)[None, :, :]
    sub = np.tile(-lam2 * np.eye(p), (N - 1, 1, 1))

    # One RHS column per state dimension; shared factorization.
    rhs = z[:, :, None] * xn[:, None, :]
    try:
        sol = solve_banded_spd(diag, sub, rhs)
    except NotSPDError as err:
        raise RankDeficiencyError(
            "LTV normal equations are rank deficient (insufficient excitation); "
            "set lam > 0 or prior_scale > 0 to regularize"
        ) from err

    K = np.transpose(sol, (0, 2, 1))  # (N, n, p): row i holds [A_t[i,:] B_t[i,:]]
    return LTVModel(A_seq=K[:, :, :n].copy(), B_seq=K[:, :, n:].copy(), dt=traj.dt)


def ltv_predict(model: LTVModel, x, u, t: int):
    """One-step prediction A_t x + B_t u at step index t."""
    if not 0 <= t < len(model):
        raise IndexError(f"step index {t} outside [0, {len(model) - 1}]")
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    return model.A_seq[t] @ x + model.B_seq[t] @ u


def save_ltv(model: LTVModel, path):
    """JSON serialization: dims, dt, one flattened coefficient row per step."""
    payload = {
        "n": model.n,
        "m": model.m,
        "dt": model.dt,
        "k": [model.coefficients(t).tolist() for t in range(len(model))],
    }
    with open(Path(path), "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_ltv(path) -> LTVModel:
    with open(Path(path)) as fh:
        payload = json.load(fh)
    n, m = payload["n"], payload["m"]
    k = np.asarray(payload["k"], dtype=np.float64)
    K = k.reshape(len(k), n, n + m)
    return LTVModel(A_seq=K[:, :, :n], B_seq=K[:, :, n:], dt=float(payload["dt"]))
