"""Tests for sampled Jacobian propagation and the episode loop."""

import numpy as np
import pytest

from tansid.benchmarks import (
    exploration_input,
    random_linear_system,
    rollout,
    true_jacobian,
)
from tansid.linalg import DimensionError
from tansid.ltv import LTVFitConfig, fit_ltv, ltv_predict
from tansid.neural import ObjectiveForm, TrainConfig, init_ensemble
from tansid.tangent import PerturbationConfig, episode_loop, perturb_trajectory


@pytest.fixture(scope="module")
def linear_setup():
    sys = random_linear_system(4, 1, 0.1, seed=201)
    u = exploration_input(100, 1, seed=202)
    traj = rollout(sys, np.zeros(4), u)
    teacher = fit_ltv(traj, LTVFitConfig(lam=1e4, prior_scale=0.0))
    return sys, traj, teacher


class TestPerturbTrajectory:
    def test_zero_noise_targets_equal_teacher_predictions(self, linear_setup):
        _, traj, teacher = linear_setup
        cfg = PerturbationConfig(scale=0.1, num_perturbed=1, seed=1)
        X, U, Y = perturb_trajectory(traj, teacher, cfg, zero_noise=True)
        x, u, _ = traj.transitions()
        assert np.array_equal(X, x)
        assert np.array_equal(U, u)
        for t in range(len(x)):
            assert np.allclose(Y[t], ltv_predict(teacher, x[t], u[t], t), atol=1e-14)

    def test_exact_linear_teacher_matches_true_system(self, linear_setup):
        sys, traj, teacher = linear_setup
        cfg = PerturbationConfig(scale=0.1, num_perturbed=2, seed=2)
        X, U, Y = perturb_trajectory(traj, teacher, cfg)
        truth = X @ sys.A.T + U @ sys.B.T
        assert np.max(np.abs(Y - truth)) < 1e-9

    def test_triple_count(self, linear_setup):
        _, traj, teacher = linear_setup
        for k in (0, 1, 3):
            cfg = PerturbationConfig(scale=0.1, num_perturbed=k, seed=3)
            X, U, Y = perturb_trajectory(traj, teacher, cfg)
            assert len(X) == len(U) == len(Y) == k * (traj.T - 1)

    def test_affine_in_perturbation(self, linear_setup):
        _, traj, teacher = linear_setup
        cfg = PerturbationConfig(scale=0.2, num_perturbed=1, seed=4)
        X, U, Y = perturb_trajectory(traj, teacher, cfg)
        x, u, _ = traj.transitions()
        eps_x = X - x
        eps_u = U - u
        for t in range(0, len(x), 17):
            lhs = Y[t] - ltv_predict(teacher, x[t], u[t], t)
            rhs = teacher.A_seq[t] @ eps_x[t] + teacher.B_seq[t] @ eps_u[t]
            assert np.max(np.abs(lhs - rhs)) < 1e-10
            # The generation path itself is reproducible bit for bit.
            assert np.array_equal(
                Y[t], teacher.A_seq[t] @ X[t] + teacher.B_seq[t] @ U[t]
            )

    def test_determinism(self, linear_setup):
        _, traj, teacher = linear_setup
        cfg = PerturbationConfig(scale=0.1, num_perturbed=2, seed=5)
        a = perturb_trajectory(traj, teacher, cfg)
        b = perturb_trajectory(traj, teacher, cfg)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_length_mismatch_rejected(self, linear_setup):
        sys, traj, teacher = linear_setup
        short_u = exploration_input(50, 1, seed=206)
        short = rollout(sys, np.zeros(4), short_u)
        with pytest.raises(DimensionError):
            perturb_trajectory(short, teacher, PerturbationConfig())

    def test_scale_validation(self):
        with pytest.raises(ValueError):
            PerturbationConfig(scale=0.0)


class TestEpisodeLoop:
    def test_zero_episodes_leaves_model_unchanged(self):
        sys = random_linear_system(3, 1, 0.1, seed=210)
        ens = init_ensemble(3, 1, objective=ObjectiveForm("g"), size=2, seed=211)
        before = [[W.copy() for W in mdl.weights] for mdl in ens.members]
        _, metrics = episode_loop(sys, ens, 0, TrainConfig(epochs=10), seed=212)
        assert metrics == []
        for mdl, ws in zip(ens.members, before):
            for W, W0 in zip(mdl.weights, ws):
                assert np.array_equal(W, W0)

    def test_dataset_accumulation_counts(self):
        sys = random_linear_system(3, 1, 0.1, seed=213)
        ens = init_ensemble(3, 1, objective=ObjectiveForm("g"), size=2, seed=214)
        T = 50
        _, metrics = episode_loop(
            sys, ens, 3, TrainConfig(epochs=4, seed=0), traj_len=T,
            pert_cfg=PerturbationConfig(num_perturbed=1), tangent_reg=True, seed=215,
        )
        sizes = [m["dataset_size"] for m in metrics]
        assert sizes == [2 * (T - 1), 4 * (T - 1), 6 * (T - 1)]
        assert all(m["epochs_run"] == 2 for m in metrics)

    def test_baseline_has_no_augmentation_and_full_epochs(self):
        sys = random_linear_system(3, 1, 0.1, seed=216)
        ens = init_ensemble(3, 1, objective=ObjectiveForm("g"), size=2, seed=217)
        T = 40
        _, metrics = episode_loop(
            sys, ens, 2, TrainConfig(epochs=4, seed=0), traj_len=T,
            tangent_reg=False, seed=218,
        )
        assert [m["dataset_size"] for m in metrics] == [T - 1, 2 * (T - 1)]
        assert all(m["epochs_run"] == 4 for m in metrics)

    def test_bitwise_reproducible(self):
        sys = random_linear_system(3, 1, 0.1, seed=219)

        def run():
            ens = init_ensemble(3, 1, objective=ObjectiveForm("g"), size=2, seed=220)
            episode_loop(
                sys, ens, 2, TrainConfig(epochs=3, seed=1), traj_len=30, seed=221,
            )
            return ens

        e1, e2 = run(), run()
        for m1, m2 in zip(e1.members, e2.members):
            for W1, W2 in zip(m1.weights, m2.weights):
                assert np.array_equal(W1, W2)

    def test_controller_hook_called_per_episode(self):
        sys = random_linear_system(2, 1, 0.1, seed=222)
        ens = init_ensemble(2, 1, objective=ObjectiveForm("g"), size=1, seed=223)
        calls = []
        episode_loop(
            sys, ens, 3, TrainConfig(epochs=1, seed=0), traj_len=20, seed=224,
            controller_hook=lambda e, i, t: calls.append(i),
        )
        assert calls == [0, 1, 2]

    def test_resample_each_epoch_changes_training_but_stays_deterministic(self):
        sys = random_linear_system(2, 1, 0.1, seed=225)

        def run(resample):
            ens = init_ensemble(2, 1, objective=ObjectiveForm("g"), size=1, seed=226)
            episode_loop(
                sys, ens, 1, TrainConfig(epochs=4, seed=2), traj_len=30,
                pert_cfg=PerturbationConfig(resample_each_epoch=resample),
                seed=227,
            )
            return ens.members[0].weights[0].copy()

        w_fixed = run(False)
        w_resampled = run(True)
        assert not np.array_equal(w_fixed, w_resampled)
        assert np.array_equal(run(True), w_resampled)

    def test_tangent_improves_jacobians_small_scale(self):
        # Directional: paired-seed runs on the linear benchmark; augmented
        # training should track the constant true Jacobian better.  Full
        # spec-scale reproduction lives in the acceptance suite.
        wins = 0
        seeds = range(4)
        for s in seeds:
            sys = random_linear_system(4, 1, 0.1, seed=300 + s)
            truth = true_jacobian(sys, np.zeros(4), np.zeros(1)).entries
            errs = {}
            for arm, tangent in (("tangent", True), ("baseline", False)):
                ens = init_ensemble(
                    4, 1, objective=ObjectiveForm("g"), size=2, seed=400 + s
                )
                episode_loop(
                    sys, ens, 2, TrainConfig(epochs=300, seed=3), traj_len=80,
                    tangent_reg=tangent, seed=500 + s,
                )
                val_u = exploration_input(40, 1, seed=600 + s)
                val = rollout(sys, np.zeros(4), val_u)
                x, u, _ = val.transitions()
                from tansid.neural import ensemble_jacobian

                e = [
                    np.linalg.norm(ensemble_jacobian(ens, x[t], u[t]).entries - truth)
                    for t in range(len(x))
                ]
                errs[arm] = np.mean(e)
            if errs["tangent"] < errs["baseline"]:
                wins += 1
        assert wins >= 3
