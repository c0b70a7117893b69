"""
Command-line runner: train, eval, verify and sample subcommands.

Exit codes: 0 success, 1 usage or configuration error, 2 training divergence
or verification failure.
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
import yaml

from evaluation.metrics import EvalReport, empirical_w2, evaluate_map
from evaluation.run_verification import run_verification
from experiments.artifacts import (
    load_model,
    save_model,
    write_eval,
    write_failed_marker,
    write_history,
    write_samples,
    write_scatter,
)
from experiments.run_config import RunConfig, dump_resolved, load_run_config, reference_map, resolve_output_dir
from sampling.samplers import DatasetSampler, PointCloud, sample
from transport.nets import Mlp
from transport.trainer import OTMTrainer, TrainingDivergedError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def _setup_logging(log_file: Optional[Path] = None, stream=None) -> None:
    handlers = [logging.StreamHandler(stream or sys.stdout)]
    if log_file is not None:
        handlers.insert(0, logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, handlers=handlers, force=True)


class ExperimentRunner:
    """One configured run: training, evaluation and the files it leaves behind."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = resolve_output_dir(config)
        self._reference = reference_map(config)
        self.logger = logging.getLogger(__name__)

    def eval_samples(self, eval_seed: Optional[int] = None):
        """Fixed evaluation clouds for mu and nu, drawn past every training batch."""
        settings = self.config.eval
        seed = settings.seed if eval_seed is None else eval_seed
        position = settings.stream_offset + seed * settings.sample_count
        return (sample(self.config.mu, settings.sample_count, position),
                sample(self.config.nu, settings.sample_count, position))

    def _report(self, G, mu_eval: PointCloud, nu_eval: PointCloud, seed: int, iteration: int) -> EvalReport:
        t_star, nu_variance = self._reference
        return evaluate_map(G, self.config.embedding, mu_eval, nu_eval, seed=seed, T_star=t_star,
                            nu_variance=nu_variance if t_star is not None else None,
                            w2_points=self.config.eval.w2_points, iteration=iteration)

    def _log_report(self, report: EvalReport) -> None:
        uvp = "n/a" if report.l2_uvp_percent is None else f"{report.l2_uvp_percent:.4f}%"
        self.logger.info(f"eval @ {report.iteration}: L2-UVP={uvp} "
                         f"cost={report.empirical_transport_cost:.6f} "
                         f"W2={report.empirical_w2_pushforward_vs_target:.6f} "
                         f"FD={report.frechet_gaussian:.6f}")

    def _write_models(self, G: Mlp, psi: Mlp) -> None:
        save_model(G, self.out_dir / "G.model")
        save_model(psi, self.out_dir / "psi.model")

    def _check_threshold(self, final: EvalReport, mu_eval: PointCloud, nu_eval: PointCloud) -> None:
        settings = self.config.eval
        if settings.w2_threshold is None:
            return
        k = min(settings.w2_points, len(mu_eval))
        embedded = self.config.embedding.apply(mu_eval.split(k)[0])
        baseline = empirical_w2(embedded, nu_eval.split(k)[0])
        ratio = final.empirical_w2_pushforward_vs_target / baseline if baseline > 0 else float("inf")
        if ratio < settings.w2_threshold:
            self.logger.info(f"W2 ratio {ratio:.4f} is below the threshold {settings.w2_threshold}")
        else:
            self.logger.warning(f"W2 ratio {ratio:.4f} misses the threshold {settings.w2_threshold}")

    def train(self) -> int:
        """
        Train G and psi, then write history.csv, timing.csv, eval.csv, the two
        model files, scatter.svg and config.resolved into the output directory.
        """
        config = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        _setup_logging(self.out_dir / "otm.log")
        (self.out_dir / "config.resolved").write_text(dump_resolved(config), encoding="utf-8")
        self.logger.info(f"Run '{config.name}' writing to {self.out_dir}")

        G, psi = Mlp(config.generator), Mlp(config.potential)
        mu_eval, nu_eval = self.eval_samples()
        reports: List[EvalReport] = []

        def periodic_eval(it: int, trainer: OTMTrainer) -> None:
            period = config.eval.eval_period
            if period and it % period == 0:
                reports.append(self._report(trainer.G, mu_eval, nu_eval, config.eval.seed, it))
                self._log_report(reports[-1])

        trainer = OTMTrainer(config.train, DatasetSampler(config.mu), DatasetSampler(config.nu),
                             config.embedding, G, psi, log_period=config.eval.log_period)
        try:
            history = trainer.train(on_iteration=periodic_eval)
        except TrainingDivergedError as e:
            write_history(e.history, self.out_dir)
            write_eval(reports, self.out_dir / "eval.csv")
            self._write_models(G, psi)
            write_failed_marker(self.out_dir, str(e))
            self.logger.error(f"Partial artifacts written to {self.out_dir}")
            return EXIT_FAILURE

        if not reports or reports[-1].iteration != len(history):
            reports.append(self._report(G, mu_eval, nu_eval, config.eval.seed, len(history)))
            self._log_report(reports[-1])
        write_history(history, self.out_dir)
        write_eval(reports, self.out_dir / "eval.csv")
        self._write_models(G, psi)

        k = min(config.eval.plot_points, len(mu_eval))
        inputs = mu_eval.split(k)[0]
        write_scatter(config.embedding.apply(inputs), G.apply(inputs), nu_eval.split(k)[0],
                      self.out_dir / "scatter.svg", title=config.name)
        self._check_threshold(reports[-1], mu_eval, nu_eval)
        self.logger.info(f"Run '{config.name}' finished after {len(history)} iterations")
        return EXIT_OK

    def evaluate(self, models_dir: Path, eval_seed: Optional[int] = None,
                 out_path: Optional[Path] = None) -> EvalReport:
        """
        Recompute the full report for saved models on fresh seeded samples.

        Raises:
            ModelFormatError: a model file does not match the configured dimensions
        """
        models_dir = Path(models_dir)
        G = load_model(models_dir / "G.model", expected=self.config.generator)
        load_model(models_dir / "psi.model", expected=self.config.potential)
        seed = self.config.eval.seed if eval_seed is None else eval_seed
        mu_eval, nu_eval = self.eval_samples(seed)

        iteration = 0
        history_file = models_dir / "history.csv"
        if history_file.exists():
            iteration = len(pd.read_csv(history_file))
        report = self._report(G, mu_eval, nu_eval, seed, iteration)
        self._log_report(report)
        write_eval([report], out_path or models_dir / f"eval_seed_{seed}.csv")
        return report


def _train_one(config: RunConfig) -> int:
    try:
        return ExperimentRunner(config).train()
    except OSError as e:
        logger.error(f"Cannot write artifacts for '{config.name}': {e}")
        return EXIT_USAGE


def run_train(config_path: str, seeds: Optional[Sequence[int]] = None, jobs: int = 1) -> int:
    config = load_run_config(config_path)
    configs = [config.with_seed(s) for s in seeds] if seeds else [config]
    if jobs > 1 and len(configs) > 1:
        logger.info(f"Seed sweep over {len(configs)} runs with {jobs} workers")
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_train_one, configs))
    else:
        codes = [_train_one(c) for c in configs]
    return max(codes)


def run_eval(config_path: str, models_dir: str, eval_seed: Optional[int] = None,
             out_path: Optional[str] = None) -> int:
    config = load_run_config(config_path)
    report = ExperimentRunner(config).evaluate(Path(models_dir), eval_seed, Path(out_path) if out_path else None)
    print(pd.DataFrame([report.to_row()]).to_string(index=False))
    return EXIT_OK


def run_verify(fault_injection: bool = False) -> int:
    passed, table = run_verification(fault_injection=fault_injection)
    print(table.to_string(index=False))
    print("ALL CHECKS PASSED" if passed else "VERIFICATION FAILED")
    return EXIT_OK if passed else EXIT_FAILURE


def run_sample(config_path: str, n: int, which: str = "mu", out_path: Optional[str] = None) -> int:
    config = load_run_config(config_path)
    cloud = sample(config.mu if which == "mu" else config.nu, n)
    text = write_samples(cloud, out_path)
    if out_path is None:
        sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="otm", description='Learn optimal transport maps by min-max training')
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help='Train a map from a YAML run configuration')
    train.add_argument('config', help='Run configuration file')
    train.add_argument('--seeds', nargs='*', type=int, help='Run one training per seed (seed sweep)')
    train.add_argument('--jobs', type=int, default=1, help='Parallel workers for a seed sweep')

    evaluate = sub.add_parser("eval", help='Evaluate saved models on fresh samples')
    evaluate.add_argument('config', help='Run configuration file')
    evaluate.add_argument('--models', required=True, help='Directory holding G.model and psi.model')
    evaluate.add_argument('--eval-seed', type=int, default=None, help='Seed of the evaluation samples')
    evaluate.add_argument('--out', default=None, help='CSV file for the report row')

    verify = sub.add_parser("verify", help='Run the self-verification suite')
    verify.add_argument('--fault-injection', action='store_true',
                        help='Disable Adam bias correction; some checks must then fail')

    dump = sub.add_parser("sample", help='Dump dataset samples to CSV')
    dump.add_argument('config', help='Run configuration file')
    dump.add_argument('--n', type=int, required=True, help='Number of samples')
    dump.add_argument('--which', choices=["mu", "nu"], default="mu", help='Which distribution to sample')
    dump.add_argument('--out', default=None, help='CSV file (default: stdout)')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function with command-line argument parsing"""
    args = build_parser().parse_args(argv)
    # sample may write CSV to stdout, so its log lines go to stderr
    _setup_logging(stream=sys.stderr if args.command == "sample" else None)

    if getattr(args, "jobs", 1) < 1 or getattr(args, "n", 1) < 1:
        logger.error("--jobs and --n must be positive")
        return EXIT_USAGE
    try:
        if args.command == "train":
            return run_train(args.config, args.seeds, args.jobs)
        if args.command == "eval":
            return run_eval(args.config, args.models, args.eval_seed, args.out)
        if args.command == "verify":
            return run_verify(args.fault_injection)
        return run_sample(args.config, args.n, args.which, args.out)
    except (OSError, ValueError, yaml.YAMLError) as e:
        # pydantic ValidationError and ModelFormatError are ValueErrors
        logger.error(f"{args.command} failed: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
