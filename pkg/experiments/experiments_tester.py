from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml
from pydantic import ValidationError

from evaluation.metrics import EVAL_COLUMNS, empirical_w2, l2_uvp
from experiments import experiment_runner
from experiments.artifacts import ModelFormatError, load_model, save_model, write_scatter
from experiments.experiment_runner import ExperimentRunner, main
from experiments.run_config import (
    RunConfig,
    dump_resolved,
    load_run_config,
    reference_map,
    resolve_output_dir,
)
from sampling.samplers import PointCloud, sample
from transport.autodiff import GraphError
from transport.nets import Mlp, MlpSpec
from transport.trainer import OTMTrainer

CONFIG_DIR = Path(__file__).parent / "configs"


def tiny_config(out_dir, **train):
    settings = {"batch_size": 32, "total_iters": 3, "k_g": 2, "k_psi": 1, "seed": 7}
    settings.update(train)
    return {
        "name": "tiny",
        "output_dir": str(out_dir),
        "mu": {"kind": "gaussian", "seed": 1},
        "nu": {"kind": "gaussian", "mean": [2.0, 0.0], "seed": 2},
        "generator": {"input_dim": 2, "hidden_dims": [8], "output_dim": 2, "seed": 3},
        "potential": {"input_dim": 2, "hidden_dims": [8], "output_dim": 1, "seed": 4},
        "train": settings,
        "eval": {"sample_count": 200, "w2_points": 50, "plot_points": 50, "eval_period": 2},
    }


def write_config(path, raw):
    path.write_text(yaml.safe_dump(raw), encoding="utf-8")
    return str(path)


@pytest.fixture(autouse=True)
def no_output_root(monkeypatch):
    monkeypatch.delenv("OTM_OUTPUT_ROOT", raising=False)


class RunConfigTester:
    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
    def test_shipped_configs_parse(self, path):
        config = load_run_config(str(path))
        assert config.embedding.input_dim == config.mu.dim
        assert config.embedding.output_dim == config.nu.dim

    def test_zero_psi_steps_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_run_config(write_config(tmp_path / "c.yaml", tiny_config(tmp_path, k_psi=0)))

    def test_unknown_key_rejected(self, tmp_path):
        raw = tiny_config(tmp_path)
        raw["train"]["learning_rate"] = 0.1
        with pytest.raises(ValidationError):
            RunConfig.model_validate(raw)

    def test_generator_dimension_mismatch(self, tmp_path):
        raw = tiny_config(tmp_path)
        raw["generator"]["output_dim"] = 3
        with pytest.raises(ValidationError):
            RunConfig.model_validate(raw)

    def test_unequal_dimensions_need_embedding(self, tmp_path):
        raw = tiny_config(tmp_path)
        raw["nu"] = {"kind": "gaussian", "mean": [0.0, 0.0, 0.0]}
        with pytest.raises(ValidationError):
            RunConfig.model_validate(raw)

    def test_resolved_dump_round_trip(self, tmp_path):
        config = RunConfig.model_validate(tiny_config(tmp_path))
        reloaded = RunConfig.model_validate(yaml.safe_load(dump_resolved(config)))
        assert reloaded.model_dump() == config.model_dump()

    def test_resolved_dump_fills_defaults(self, tmp_path):
        resolved = yaml.safe_load(dump_resolved(RunConfig.model_validate(tiny_config(tmp_path))))
        assert resolved["train"]["lambda"] == 0.1
        assert resolved["train"]["beta1"] == 0.5
        assert resolved["embedding"]["kind"] == "identity"

    def test_with_seed(self, tmp_path):
        config = RunConfig.model_validate(tiny_config(tmp_path))
        a, b = config.with_seed(1), config.with_seed(2)
        assert a.mu.seed != b.mu.seed and a.generator.seed != b.generator.seed
        assert a.train.seed == 1
        assert Path(a.output_dir) == tmp_path / "seed_1"
        assert config.with_seed(1).model_dump() == a.model_dump()

    def test_output_root_override(self, tmp_path, monkeypatch):
        raw = tiny_config("runs/tiny")
        monkeypatch.setenv("OTM_OUTPUT_ROOT", str(tmp_path))
        assert resolve_output_dir(RunConfig.model_validate(raw)) == tmp_path / "runs" / "tiny"

    def test_reference_maps(self):
        t_star, variance = reference_map(load_run_config(str(CONFIG_DIR / "gaussian_scaling.yaml")))
        np.testing.assert_allclose(t_star.matrix, np.diag([2.0, 1.0]), atol=1e-10)
        assert variance == 5.0

        t_star, variance = reference_map(load_run_config(str(CONFIG_DIR / "unequal_dims.yaml")))
        assert t_star.matrix.shape == (4, 2)
        np.testing.assert_allclose(t_star.offset, [1.0, 0.0, -1.0, 0.5], atol=1e-10)
        assert variance == pytest.approx(2.5)

        t_star, _ = reference_map(load_run_config(str(CONFIG_DIR / "ring.yaml")))
        assert t_star is None

    def test_restoration_threshold_reachable(self):
        # a perfect map still leaves the sampling error between two clean clouds
        config = load_run_config(str(CONFIG_DIR / "restoration.yaml"))
        k = config.eval.w2_points
        noisy = sample(config.mu, k, 0)
        clean = sample(config.nu, k, 0)
        other_clean = sample(config.nu, k, 10 * k)
        floor = empirical_w2(other_clean, clean) / empirical_w2(noisy, clean)
        assert floor < config.eval.w2_threshold


class ModelFileTester:
    def test_round_trip_is_bit_exact(self, tmp_path):
        net = Mlp(MlpSpec(input_dim=2, hidden_dims=[16, 16], output_dim=2, seed=5))
        batch = PointCloud.of(np.random.default_rng(0).normal(size=(64, 2)))
        save_model(net, tmp_path / "G.model")
        loaded = load_model(tmp_path / "G.model", expected=net.spec)
        np.testing.assert_array_equal(loaded.apply(batch).points, net.apply(batch).points)
        assert loaded.spec == net.spec

    def test_tanh_header_survives(self, tmp_path):
        net = Mlp(MlpSpec(input_dim=3, hidden_dims=[4], output_dim=1, activation="tanh", seed=2))
        save_model(net, tmp_path / "psi.model")
        assert load_model(tmp_path / "psi.model").spec.activation == "tanh"

    def test_dimension_mismatch(self, tmp_path):
        save_model(Mlp(MlpSpec(input_dim=2, hidden_dims=[4], output_dim=2)), tmp_path / "G.model")
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "G.model", expected=MlpSpec(input_dim=2, hidden_dims=[8], output_dim=2))

    def test_truncated_file(self, tmp_path):
        save_model(Mlp(MlpSpec(input_dim=2, hidden_dims=[4], output_dim=2)), tmp_path / "G.model")
        lines = (tmp_path / "G.model").read_text().splitlines()
        (tmp_path / "G.model").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "G.model")


class ScatterTester:
    def test_three_colors_and_stable_bytes(self, tmp_path):
        rng = np.random.default_rng(0)
        clouds = [PointCloud.of(rng.normal(size=(30, 2)) + shift) for shift in (0.0, 1.0, 2.0)]
        write_scatter(*clouds, tmp_path / "a.svg", title="t")
        write_scatter(*clouds, tmp_path / "b.svg", title="t")
        text = (tmp_path / "a.svg").read_text()
        assert text.startswith("<?xml")
        for color in ("#008000", "#0000ff", "#cd853f"):
            assert color in text
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


class CommandLineTester:
    def test_train_writes_every_artifact(self, tmp_path):
        out = tmp_path / "run"
        assert main(["train", write_config(tmp_path / "c.yaml", tiny_config(out))]) == 0
        for name in ("history.csv", "timing.csv", "eval.csv", "G.model", "psi.model",
                     "scatter.svg", "config.resolved", "otm.log"):
            assert (out / name).exists(), name
        history = pd.read_csv(out / "history.csv")
        assert list(history.columns) == ["iter", "L_psi", "L_G", "reg_value"]
        assert history["iter"].tolist() == [1, 2, 3]
        evals = pd.read_csv(out / "eval.csv")
        assert list(evals.columns) == EVAL_COLUMNS
        assert evals["iteration"].tolist() == [2, 3]
        assert not (out / "FAILED").exists()

    def test_history_is_reproducible(self, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        assert main(["train", write_config(tmp_path / "a.yaml", tiny_config(first))]) == 0
        assert main(["train", write_config(tmp_path / "b.yaml", tiny_config(second))]) == 0
        assert (first / "history.csv").read_bytes() == (second / "history.csv").read_bytes()

    def test_resolved_config_reproduces_history(self, tmp_path):
        first = tmp_path / "first"
        assert main(["train", write_config(tmp_path / "a.yaml", tiny_config(first))]) == 0
        resolved = yaml.safe_load((first / "config.resolved").read_text())
        resolved["output_dir"] = str(tmp_path / "again")
        assert main(["train", write_config(tmp_path / "b.yaml", resolved)]) == 0
        assert (first / "history.csv").read_bytes() == (tmp_path / "again" / "history.csv").read_bytes()

    def test_seed_sweep(self, tmp_path):
        out = tmp_path / "sweep"
        path = write_config(tmp_path / "c.yaml", tiny_config(out))
        assert main(["train", path, "--seeds", "1", "2"]) == 0
        a, b = out / "seed_1" / "history.csv", out / "seed_2" / "history.csv"
        assert a.exists() and b.exists()
        assert a.read_bytes() != b.read_bytes()

    def test_invalid_config_exits_1(self, tmp_path):
        assert main(["train", write_config(tmp_path / "c.yaml", tiny_config(tmp_path, k_psi=0))]) == 1

    def test_missing_config_exits_1(self, tmp_path):
        assert main(["train", str(tmp_path / "absent.yaml")]) == 1

    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as e:
            main(["fly"])
        assert e.value.code == 1

    def test_divergence_leaves_flagged_partial_artifacts(self, tmp_path, monkeypatch):
        calls = {"n": 0}
        original = OTMTrainer.g_step

        def failing_g_step(self):
            calls["n"] += 1
            if calls["n"] > 3:
                raise GraphError("node 1 (matmul) produced non-finite values")
            return original(self)

        monkeypatch.setattr(OTMTrainer, "g_step", failing_g_step)
        out = tmp_path / "run"
        assert main(["train", write_config(tmp_path / "c.yaml", tiny_config(out))]) == 2
        assert (out / "FAILED").exists()
        assert len(pd.read_csv(out / "history.csv")) == 1
        assert (out / "G.model").exists()

    def test_eval_on_saved_models(self, tmp_path):
        out = tmp_path / "run"
        path = write_config(tmp_path / "c.yaml", tiny_config(out))
        assert main(["train", path]) == 0
        assert main(["eval", path, "--models", str(out), "--eval-seed", "3"]) == 0
        row = pd.read_csv(out / "eval_seed_3.csv").iloc[0]
        assert row["seed"] == 3 and row["sample_count"] == 200 and row["iteration"] == 3
        assert row["l2_uvp_percent"] > 0

    def test_eval_rejects_mismatched_models(self, tmp_path):
        out = tmp_path / "run"
        assert main(["train", write_config(tmp_path / "a.yaml", tiny_config(out))]) == 0
        raw = tiny_config(out)
        raw["generator"]["hidden_dims"] = [16]
        assert main(["eval", write_config(tmp_path / "b.yaml", raw), "--models", str(out)]) == 1

    def test_sample_to_csv(self, tmp_path):
        path = write_config(tmp_path / "c.yaml", tiny_config(tmp_path))
        assert main(["sample", path, "--n", "25", "--which", "nu", "--out", str(tmp_path / "nu.csv")]) == 0
        frame = pd.read_csv(tmp_path / "nu.csv")
        assert list(frame.columns) == ["x0", "x1"] and len(frame) == 25
        assert frame["x0"].mean() > 1.0

    def test_sample_to_stdout(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.yaml", tiny_config(tmp_path))
        assert main(["sample", path, "--n", "3"]) == 0
        assert capsys.readouterr().out.splitlines()[0] == "x0,x1"

    @pytest.mark.slow
    def test_verify_fault_injection_fails(self):
        assert main(["verify", "--fault-injection"]) == 2


def run_shipped(name, tmp_path):
    config = load_run_config(str(CONFIG_DIR / f"{name}.yaml"))
    config = config.model_copy(update={"output_dir": str(tmp_path / name)})
    runner = ExperimentRunner(config)
    assert runner.train() == experiment_runner.EXIT_OK
    final = pd.read_csv(tmp_path / name / "eval.csv").iloc[-1]
    return runner, final


def w2_ratio(runner, final):
    mu_eval, nu_eval = runner.eval_samples()
    k = runner.config.eval.w2_points
    baseline = empirical_w2(runner.config.embedding.apply(mu_eval.split(k)[0]), nu_eval.split(k)[0])
    return final["empirical_w2_pushforward_vs_target"] / baseline


@pytest.mark.slow
class AcceptanceTester:
    def test_translation_recovered(self, tmp_path):
        runner, final = run_shipped("gaussian_translation", tmp_path)
        assert final["l2_uvp_percent"] < 2.0

        out = tmp_path / "gaussian_translation"
        trained = runner.evaluate(out, eval_seed=1).l2_uvp_percent
        other = runner.evaluate(out, eval_seed=2).l2_uvp_percent
        assert abs(trained - other) < 0.5

        t_star, variance = reference_map(runner.config)
        mu_eval, _ = runner.eval_samples()
        untrained = l2_uvp(Mlp(runner.config.generator), t_star, mu_eval, variance)
        assert untrained > 10 * trained

    def test_scaling_recovered(self, tmp_path):
        _, final = run_shipped("gaussian_scaling", tmp_path)
        assert final["l2_uvp_percent"] < 2.0

    @pytest.mark.parametrize("name", ["ring", "moons", "circles"])
    def test_toy_fit(self, name, tmp_path):
        runner, final = run_shipped(name, tmp_path)
        assert w2_ratio(runner, final) < 0.15

    def test_unequal_dimensions(self, tmp_path):
        _, final = run_shipped("unequal_dims", tmp_path)
        assert final["l2_uvp_percent"] < 3.0

    def test_restoration(self, tmp_path):
        runner, final = run_shipped("restoration", tmp_path)
        assert w2_ratio(runner, final) < 0.25
        sigma = runner.config.mu.degradation.sigma
        assert final["empirical_transport_cost"] < 2 * sigma ** 2 * 2 / 2
