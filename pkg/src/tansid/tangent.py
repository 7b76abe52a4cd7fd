"""Sampled Jacobian propagation and the episodic training loop.

Tangent-space regularization is applied by data augmentation: inputs are
perturbed by small Gaussian noise scaled to the per-dimension spread of
the trajectory, and a fitted time-varying linear teacher generates the
targets for the perturbed points.  The teacher's local linearization is
thereby propagated into the network's training set without any
higher-order derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .benchmarks import (
    DivergenceError,
    Trajectory,
    default_initial_state,
    exploration_input,
    rollout,
)
from .linalg import DimensionError
from .ltv import LTVFitConfig, LTVModel, fit_ltv
from .neural import Ensemble, TrainConfig, train_ensemble

__all__ = ["PerturbationConfig", "perturb_trajectory", "episode_loop"]


@dataclass
class PerturbationConfig:
    """Noise scale and count for the augmented trajectories.

    Perturbations are drawn per dimension from N(0, scale^2 * var), where
    var is the sample variance of that state/input dimension over the
    trajectory being augmented.
    """

    scale: float = 0.1
    num_perturbed: int = 1
    resample_each_epoch: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        if self.num_perturbed < 0:
            raise ValueError("num_perturbed must be >= 0")


def perturb_trajectory(
    traj: Trajectory,
    teacher: LTVModel,
    cfg: PerturbationConfig,
    zero_noise: bool = False,
):
    """Augmented (x, u, x+) triples generated through the teacher model.

    Returns stacked arrays of ``num_perturbed * (T-1)`` triples.  The
    ``zero_noise`` hook suppresses the perturbations (targets then equal
    the teacher's predictions on the raw data), used for exactness tests.
    """
    x, u, _ = traj.transitions()
    N = len(x)
    if len(teacher) != N:
        raise DimensionError(
            f"teacher length {len(teacher)} does not match trajectory ({N} transitions)"
        )
    k = cfg.num_perturbed
    if k == 0:
        n, m = traj.n, traj.m
        return np.zeros((0, n)), np.zeros((0, m)), np.zeros((0, n))

    rng = np.random.default_rng(cfg.seed)
    std_x = cfg.scale * traj.states.std(axis=0)
    std_u = cfg.scale * traj.inputs.std(axis=0)
    eps_x = rng.standard_normal((k, N, traj.n)) * std_x
    eps_u = rng.standard_normal((k, N, traj.m)) * std_u
    if zero_noise:
        eps_x = np.zeros_like(eps_x)
        eps_u = np.zeros_like(eps_u)

    xt = x[None, :, :] + eps_x
    ut = u[None, :, :] + eps_u
    # Teacher targets: x+ = A_t x~ + B_t u~ per copy and time step.
    yt = np.einsum("tij,ktj->kti", teacher.A_seq, xt) + np.einsum(
        "tij,ktj->kti", teacher.B_seq, ut
    )
    return (
        xt.reshape(k * N, traj.n),
        ut.reshape(k * N, traj.m),
        yt.reshape(k * N, traj.n),
    )


def _derived_seed(*keys):
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def episode_loop(
    system,
    ensemble: Ensemble,
    episodes: int,
    train_cfg: TrainConfig,
    traj_len: int = 200,
    input_pole: float = 0.9,
    input_std: float = 1.0,
    measurement_noise: float = 0.0,
    x0=None,
    ltv_cfg: LTVFitConfig | None = None,
    pert_cfg: PerturbationConfig | None = None,
    tangent_reg: bool = True,
    keep_augmented: bool = True,
    seed: int = 0,
    controller_hook=None,
):
    """Episodic model learning with optional tangent-space regularization.

    Each episode: roll out a fresh exploration trajectory, fit the
    time-varying linear teacher, generate perturbed trajectories through
    it, append everything to the cumulative training set and retrain the
    ensemble members (warm start) on it.  With regularization active, the
    per-episode epoch budget is half of ``train_cfg.epochs``; the
    controller-update stage of the loop is a no-op hook.

    Returns the trained ensemble and a list of per-episode metric dicts.
    """
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    ltv_cfg = ltv_cfg or LTVFitConfig()
    pert_cfg = pert_cfg or PerturbationConfig()
    if x0 is None:
        x0 = default_initial_state(system)

    real, augmented = [], []
    metrics = []
    epochs = train_cfg.epochs // 2 if tangent_reg else train_cfg.epochs
    for i in range(episodes):
        inputs = exploration_input(
            traj_len, system.m, pole=input_pole, target_std=input_std,
            seed=_derived_seed(seed, i, 0x1A9),
        )
        try:
            traj = rollout(
                system, x0, inputs,
                measurement_noise=measurement_noise,
                seed=_derived_seed(seed, i, 0xB0B),
            )
        except DivergenceError as err:
            metrics.append({"episode": i, "failed": str(err), "dataset_size": _size(real, augmented)})
            continue

        real.append(traj.transitions())
        aug_seed = _derived_seed(seed, i, pert_cfg.seed, 0xAE6)
        if tangent_reg:
            teacher = fit_ltv(traj, ltv_cfg)
            ep_pert = PerturbationConfig(
                scale=pert_cfg.scale,
                num_perturbed=pert_cfg.num_perturbed,
                resample_each_epoch=pert_cfg.resample_each_epoch,
                seed=aug_seed,
            )
            if not keep_augmented:
                augmented.clear()
            augmented.append(perturb_trajectory(traj, teacher, ep_pert))

        dataset = _stack(real + augmented)
        epoch_data = None
        if tangent_reg and pert_cfg.resample_each_epoch:
            fixed_real = list(real)
            prior_aug = augmented[:-1]

            def epoch_data(epoch, _teacher=teacher, _traj=traj, _base=aug_seed):
                fresh = perturb_trajectory(
                    _traj,
                    _teacher,
                    PerturbationConfig(
                        scale=pert_cfg.scale,
                        num_perturbed=pert_cfg.num_perturbed,
                        seed=_derived_seed(_base, epoch),
                    ),
                )
                return _stack(fixed_real + prior_aug + [fresh])

        ep_cfg_seed = _derived_seed(seed, i, train_cfg.seed, 0x7A1)
        ep_cfg = TrainConfig(
            epochs=epochs,
            step_size=train_cfg.step_size,
            beta1=train_cfg.beta1,
            beta2=train_cfg.beta2,
            eps=train_cfg.eps,
            weight_decay=train_cfg.weight_decay,
            batch_size=train_cfg.batch_size,
            seed=ep_cfg_seed,
            standardize=train_cfg.standardize,
        )
        _, curves = train_ensemble(ensemble, dataset, ep_cfg, epoch_data=epoch_data)
        metrics.append(
            {
                "episode": i,
                "dataset_size": len(dataset[0]),
                "epochs_run": epochs,
                "final_losses": [c[-1] if c else None for c in curves],
            }
        )
        if controller_hook is not None:
            controller_hook(ensemble, i, traj)
    return ensemble, metrics


def _stack(parts):
    X = np.concatenate([p[0] for p in parts], axis=0)
    U = np.concatenate([p[1] for p in parts], axis=0)
    Y = np.concatenate([p[2] for p in parts], axis=0)
    return X, U, Y


def _size(real, augmented):
    return sum(len(p[0]) for p in real) + sum(len(p[0]) for p in augmented)
