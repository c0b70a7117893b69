import numpy as np
import pytest
from pydantic import ValidationError

from sampling.samplers import DatasetSampler, DatasetSpec
from transport.embedding import Embedding
from transport.nets import Mlp, MlpSpec, QuadraticHead
from transport.optim import OptimizerError
from transport.trainer import OTMTrainer, TrainConfig, TrainingDivergedError, train

IDENTITY_Q = Embedding(kind="identity", input_dim=2, output_dim=2)


def small_setup(regularizer="gradient_penalty", seed=0, **overrides):
    config = TrainConfig(batch_size=16, total_iters=3, k_g=2, k_psi=1, regularizer=regularizer, seed=seed,
                         **overrides)
    mu = DatasetSampler(DatasetSpec(kind="gaussian", seed=1))
    nu = DatasetSampler(DatasetSpec(kind="gaussian_mixture_ring", seed=2))
    G = Mlp(MlpSpec(input_dim=2, hidden_dims=[8, 8], output_dim=2, seed=3))
    psi = Mlp(MlpSpec(input_dim=2, hidden_dims=[8, 8], output_dim=1, seed=4))
    return OTMTrainer(config, mu, nu, IDENTITY_Q, G, psi)


class TrainConfigTester:
    def test_toy_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.k_psi, cfg.k_g, cfg.lambda_) == (400, 1, 16, 0.1)
        assert (cfg.beta1, cfg.beta2, cfg.lr_g, cfg.lr_psi) == (0.5, 0.99, 1e-3, 1e-3)
        assert cfg.iterations == 2500

    def test_total_iters_override(self):
        assert TrainConfig(total_iters=7).iterations == 7

    def test_inner_steps_must_be_positive(self):
        with pytest.raises(ValidationError):
            TrainConfig(k_psi=0)
        with pytest.raises(ValidationError):
            TrainConfig(k_g=0)

    def test_lambda_forced_to_zero_without_regularizer(self):
        assert TrainConfig(regularizer="none", **{"lambda": 5.0}).lambda_ == 0.0

    def test_lambda_alias(self):
        assert TrainConfig(**{"lambda": 0.25}).lambda_ == 0.25


class OTMTrainerTester:
    def test_psi_step_leaves_map_untouched(self):
        trainer = small_setup()
        before = trainer.G.snapshot()
        psi_before = trainer.psi.snapshot()
        trainer.psi_step()
        for a, b in zip(before, trainer.G.parameters()):
            np.testing.assert_array_equal(a, b)
        assert any(np.any(a != b) for a, b in zip(psi_before, trainer.psi.parameters()))

    def test_g_step_leaves_potential_untouched(self):
        trainer = small_setup()
        before = trainer.psi.snapshot()
        g_before = trainer.G.snapshot()
        trainer.g_step()
        for a, b in zip(before, trainer.psi.parameters()):
            np.testing.assert_array_equal(a, b)
        assert any(np.any(a != b) for a, b in zip(g_before, trainer.G.parameters()))

    def test_fresh_batches_per_step(self):
        trainer = small_setup()
        trainer.train()
        # per outer iteration: k_psi draws of X and Y, k_g draws of X
        assert trainer.mu_sampler.position == 3 * (1 + 2) * 16
        assert trainer.nu_sampler.position == 3 * 1 * 16

    def test_history_has_one_record_per_iteration(self):
        trainer = small_setup()
        history = trainer.train()
        assert [r.iter for r in history.records] == [1, 2, 3]
        assert list(history.losses_frame().columns) == ["iter", "L_psi", "L_G", "reg_value"]

    @pytest.mark.parametrize("regularizer", ["none", "gradient_penalty", "gradient_optimality"])
    def test_deterministic(self, regularizer):
        first = small_setup(regularizer).train().losses_frame()
        second = small_setup(regularizer).train().losses_frame()
        assert first.equals(second)

    def test_regularizer_value_recorded(self):
        history = small_setup("none").train()
        assert all(r.reg_value == 0.0 for r in history.records)
        history = small_setup("gradient_penalty").train()
        assert all(r.reg_value > 0.0 for r in history.records)

    def test_dimension_check(self):
        config = TrainConfig(total_iters=1)
        mu = DatasetSampler(DatasetSpec(kind="gaussian", mean=[0, 0, 0]))
        nu = DatasetSampler(DatasetSpec(kind="circles"))
        G = Mlp(MlpSpec(input_dim=2, output_dim=2))
        psi = Mlp(MlpSpec(input_dim=2, output_dim=1))
        with pytest.raises(ValueError):
            OTMTrainer(config, mu, nu, IDENTITY_Q, G, psi)

    def test_divergence_rolls_back(self):
        trainer = small_setup()
        calls = {"n": 0}
        real_g_step = trainer.g_step

        def failing_g_step():
            calls["n"] += 1
            if calls["n"] == 5:
                raise OptimizerError("gradient 0 contains non-finite values")
            return real_g_step()

        trainer.g_step = failing_g_step
        trainer.train(iterations=1)
        with pytest.raises(TrainingDivergedError) as info:
            trainer.train(iterations=5)
        assert len(info.value.history) == 2
        for a, b in zip(info.value.snapshot[0], trainer.G.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_divergence_restores_optimizer_state(self):
        trainer = small_setup()
        trainer.train(iterations=1)
        psi_m = [m.copy() for m in trainer.psi_state.m]
        g_v = [v.copy() for v in trainer.g_state.v]
        real_g_step = trainer.g_step
        calls = {"n": 0}

        def failing_g_step():
            calls["n"] += 1
            if calls["n"] == 2:
                raise OptimizerError("gradient 0 contains non-finite values")
            return real_g_step()

        # the psi step and one g step succeed before the failure
        trainer.g_step = failing_g_step
        with pytest.raises(TrainingDivergedError):
            trainer.train(iterations=1)
        assert (trainer.psi_state.t, trainer.g_state.t) == (1, 2)
        for a, b in zip(psi_m, trainer.psi_state.m):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(g_v, trainer.g_state.v):
            np.testing.assert_array_equal(a, b)

    def test_g_only_fit_recovers_translation(self):
        # with psi fixed at the optimal potential 1/2||y - b||^2, the map steps alone find x + b
        b = np.array([2.0, -1.0])
        config = TrainConfig(batch_size=64, lr_g=1e-2, regularizer="none", total_iters=1)
        mu = DatasetSampler(DatasetSpec(kind="gaussian", seed=5))
        nu = DatasetSampler(DatasetSpec(kind="gaussian", mean=b.tolist(), seed=6))
        G = Mlp(MlpSpec(input_dim=2, hidden_dims=[], output_dim=2, seed=7))
        trainer = OTMTrainer(config, mu, nu, IDENTITY_Q, G, QuadraticHead(np.eye(2), center=b))
        for _ in range(1500):
            trainer.g_step()
        x = DatasetSampler(DatasetSpec(kind="gaussian", seed=99)).draw(10_000)
        error = np.mean(np.sum((G.apply(x).points - (x.points + b)) ** 2, axis=1))
        assert 100 * error / 2.0 < 2.0


@pytest.mark.slow
class OTMTrainerConvergenceTester:
    def test_identity_pair(self):
        spec = DatasetSpec(kind="gaussian", seed=1)
        G = Mlp(MlpSpec(input_dim=2, output_dim=2, seed=2))
        psi = Mlp(MlpSpec(input_dim=2, output_dim=1, seed=3))
        G, psi, _ = train(TrainConfig(), DatasetSampler(spec), DatasetSampler(spec.model_copy(update={"seed": 4})),
                          IDENTITY_Q, G, psi)
        x = DatasetSampler(DatasetSpec(kind="gaussian", seed=77)).draw(10_000)
        moved = G.apply(x).points - x.points
        assert 0.5 * np.mean(np.sum(moved ** 2, axis=1)) < 0.05
        assert 100 * np.mean(np.sum(moved ** 2, axis=1)) / 2.0 < 2.0
