"""
Self-verification suite: closed-form bound scenarios, gradient checks and
oracle identities, reported as a pass/fail table.
"""

import logging
import time
from typing import Callable, List, Tuple

import numpy as np
import pandas as pd

from evaluation.metrics import frechet_gaussian, l2_uvp
from oracle.bound_verifier import verify_bound
from oracle.discrete_oracle import discrete_ot
from oracle.gaussian_oracle import AffineMap, Gaussian, QuadraticPotential, gaussian_ot_map, gaussian_w2
from sampling.samplers import DatasetSampler, DatasetSpec, PointCloud
from transport.autodiff import Graph
from transport.embedding import Embedding
from transport.losses import gradient_optimality, gradient_penalty
from transport.nets import Mlp, MlpSpec, QuadraticHead
from transport.optim import AdamState, adam_step
from transport.trainer import OTMTrainer, TrainConfig

CheckResult = Tuple[bool, str]


def _central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (fn(up) - fn(down)) / (2 * step)
    return grad


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def _translation_case(delta, offset_gap):
    b = np.array([1.0, -0.5])
    b_hat = b + np.asarray(delta, dtype=np.float64)
    return (Gaussian(np.zeros(2), np.eye(2)), Gaussian(b, np.eye(2)),
            QuadraticPotential(np.eye(2), b_hat), AffineMap(np.eye(2), b_hat + np.asarray(offset_gap)))


class VerificationSuite:
    """
    Runs every check and collects a table.

    With fault_injection, Adam runs without bias correction, which the
    optimizer-dependent checks must detect.
    """

    def __init__(self, fault_injection: bool = False, seed: int = 0):
        self.fault_injection = fault_injection
        self.seed = seed
        self.logger = logging.getLogger(__name__)

    def _adam(self, params, **kwargs) -> AdamState:
        state = AdamState.for_parameters(params, **kwargs)
        state.bias_correction = not self.fault_injection
        return state

    def checks(self) -> List[Tuple[str, Callable[[], CheckResult]]]:
        return [
            ("bound_colinear_tight", self.check_bound_colinear_tight),
            ("bound_opposite_slack", self.check_bound_opposite_slack),
            ("bound_exact_solution", self.check_bound_exact_solution),
            ("bound_random_configurations", self.check_bound_random_configurations),
            ("primitive_gradients", self.check_primitive_gradients),
            ("nested_gradients", self.check_nested_gradients),
            ("mlp_input_gradient", self.check_mlp_input_gradient),
            ("adam_first_step", self.check_adam_first_step),
            ("map_only_fit", self.check_map_only_fit),
            ("discrete_ot_solvers_agree", self.check_discrete_ot_solvers_agree),
            ("frechet_equals_twice_w2", self.check_frechet_equals_twice_w2),
            ("pushforward_moments", self.check_pushforward_moments),
            ("regularizer_identities", self.check_regularizer_identities),
        ]

    def run_all(self) -> pd.DataFrame:
        rows = []
        for name, check in self.checks():
            began = time.perf_counter()
            try:
                passed, detail = check()
            except Exception as e:
                passed, detail = False, f"raised {type(e).__name__}: {e}"
            seconds = time.perf_counter() - began
            status = "PASS" if passed else "FAIL"
            self.logger.info(f"{name}: {status} ({detail})")
            rows.append({"check": name, "status": status, "detail": detail, "seconds": round(seconds, 3)})
        return pd.DataFrame(rows, columns=["check", "status", "detail", "seconds"])

    def check_bound_colinear_tight(self) -> CheckResult:
        r = verify_bound(*_translation_case([0.3, 0.0], [0.4, 0.0]), n_mc=100_000, seed=self.seed)
        ok = r.holds and abs(r.map_error_sq - 0.49) < 1e-6 and abs(r.bound - 0.49) < 1e-6
        return ok, f"LHS {r.map_error_sq:.6f}, bound {r.bound:.6f}"

    def check_bound_opposite_slack(self) -> CheckResult:
        r = verify_bound(*_translation_case([0.3, 0.0], [-0.4, 0.0]), n_mc=100_000, seed=self.seed)
        ok = r.holds and abs(r.map_error_sq - 0.01) < 1e-6 and abs(r.bound - 0.49) < 1e-6
        return ok, f"LHS {r.map_error_sq:.6f}, bound {r.bound:.6f}"

    def check_bound_exact_solution(self) -> CheckResult:
        r = verify_bound(*_translation_case([0.0, 0.0], [0.0, 0.0]), n_mc=100_000, seed=self.seed)
        worst = max(abs(r.epsilon_1), abs(r.epsilon_2), r.map_error_sq, r.twice_w2_sq, r.bound)
        return r.holds and worst < 1e-9, f"largest term {worst:.2e}"

    def check_bound_random_configurations(self) -> CheckResult:
        rng = np.random.default_rng([self.seed, 1])
        failures = 0
        for k in range(50):
            case = _translation_case(rng.normal(scale=0.5, size=2), rng.normal(scale=0.5, size=2))
            if not verify_bound(*case, n_mc=100_000, seed=k).holds:
                failures += 1
        return failures == 0, f"{50 - failures}/50 configurations hold"

    def check_primitive_gradients(self) -> CheckResult:
        rng = np.random.default_rng([self.seed, 2])
        cases = {
            "affine": (lambda g, x, w, b: g.sum(g.tanh(g.affine(x, w, b))), [(4, 3), (3, 2), (2,)]),
            "leaky_relu": (lambda g, a: g.sum(g.mul(g.leaky_relu(a), a)), [(5,)]),
            "mean_square": (lambda g, a: g.mean(g.square(a)), [(3, 2)]),
            "dot": (lambda g, a, b: g.dot(a, b), [(2, 3), (2, 3)]),
            "norm": (lambda g, a: g.norm(a), [(4,)]),
        }
        worst = 0.0
        for build, shapes in cases.values():
            graph = Graph()
            leaves = [graph.leaf(shape=s) for s in shapes]
            out = build(graph, *leaves)
            for _ in range(10):
                values = [np.where(np.abs(v) < 1e-3, 0.5, v) for v in (rng.normal(size=s) for s in shapes)]
                for leaf, v in zip(leaves, values):
                    graph.assign(leaf, v)
                grads = graph.gradient(out, leaves)
                for k in range(len(leaves)):
                    def f(v, k=k):
                        graph.assign(leaves[k], v)
                        return float(graph.evaluate(out))
                    fd = _central_difference(f, values[k])
                    graph.assign(leaves[k], values[k])
                    worst = max(worst, _relative_error(grads[k], fd))
        return worst < 1e-5, f"max relative error {worst:.2e}"

    def check_nested_gradients(self) -> CheckResult:
        results = []
        graph = Graph()
        x = graph.leaf(3.0)
        g = graph.gradient_node(graph.scale(graph.mul(x, x), 0.5), x)
        results.append((graph.gradient(graph.square(g), [x])[0], 6.0))

        graph = Graph()
        x, w = graph.leaf(2.0), graph.leaf(1.0)
        wx = graph.mul(w, x)
        g = graph.gradient_node(graph.scale(graph.mul(wx, wx), 0.5), x)
        results.append((graph.gradient(graph.square(g), [w])[0], 16.0))

        graph = Graph()
        x = graph.leaf(np.array([1.0, 2.0]))
        g = graph.gradient_node(graph.norm_sq(graph.constant(np.ones(2))), x)
        results.append((graph.gradient(graph.norm_sq(g), [x])[0], np.zeros(2)))

        worst = max(float(np.max(np.abs(np.asarray(got) - want)) / max(1.0, np.max(np.abs(want))))
                    for got, want in results)
        return worst < 1e-6, f"max relative error {worst:.2e}"

    def check_mlp_input_gradient(self) -> CheckResult:
        mlp = Mlp(MlpSpec(input_dim=2, output_dim=1, seed=self.seed))
        points = np.random.default_rng([self.seed, 3]).normal(size=(5, 2))
        grads = mlp.gradient_at(points)
        fd = np.stack([_central_difference(lambda p: float(mlp.apply(PointCloud.of(p)).points[0, 0]), p)
                       for p in points])
        err = _relative_error(grads, fd)
        return err < 1e-5, f"max relative error {err:.2e}"

    def check_adam_first_step(self) -> CheckResult:
        state = self._adam([np.zeros(())], learning_rate=0.1, beta1=0.5, beta2=0.99)
        (theta,), _ = adam_step(state, [np.zeros(())], [np.ones(())])
        expected = -0.1 / (1 + 1e-8)
        return abs(float(theta) - expected) < 1e-12, f"theta {float(theta):.8f}, expected {expected:.8f}"

    def check_map_only_fit(self) -> CheckResult:
        b = np.array([2.0, 0.0])
        config = TrainConfig(batch_size=64, lr_g=1e-2, regularizer="none", total_iters=1, seed=self.seed)
        mu = DatasetSampler(DatasetSpec(kind="gaussian", seed=self.seed + 1))
        nu = DatasetSampler(DatasetSpec(kind="gaussian", mean=b.tolist(), seed=self.seed + 2))
        G = Mlp(MlpSpec(input_dim=2, hidden_dims=[], output_dim=2, seed=self.seed + 3))
        q = Embedding(kind="identity", input_dim=2, output_dim=2)
        trainer = OTMTrainer(config, mu, nu, q, G, QuadraticHead(np.eye(2), center=b))
        trainer.g_state = self._adam(G.parameters(), learning_rate=1e-2)
        for _ in range(1500):
            trainer.g_step()
        x = DatasetSampler(DatasetSpec(kind="gaussian", seed=self.seed + 4)).draw(10_000)
        uvp = l2_uvp(G, AffineMap(np.eye(2), b), x, 2.0)
        return uvp < 2.0, f"L2-UVP {uvp:.3f}%"

    def check_discrete_ot_solvers_agree(self) -> CheckResult:
        rng = np.random.default_rng([self.seed, 5])
        agree = 0
        for _ in range(20):
            X, Y = PointCloud.of(rng.normal(size=(7, 2))), PointCloud.of(rng.normal(size=(7, 2)))
            agree += discrete_ot(X, Y, method="exhaustive")[1] == discrete_ot(X, Y, method="assignment")[1]
        return agree == 20, f"{agree}/20 instances agree"

    def _random_gaussian(self, rng, dim=2) -> Gaussian:
        a = rng.normal(size=(dim, dim))
        return Gaussian(rng.normal(size=dim), a @ a.T + 0.5 * np.eye(dim))

    def check_frechet_equals_twice_w2(self) -> CheckResult:
        rng = np.random.default_rng([self.seed, 6])
        worst = max(abs(frechet_gaussian(a, b) - 2 * gaussian_w2(a, b))
                    for a, b in ((self._random_gaussian(rng), self._random_gaussian(rng)) for _ in range(10)))
        return worst < 1e-9, f"max gap {worst:.2e}"

    def check_pushforward_moments(self) -> CheckResult:
        rng = np.random.default_rng([self.seed, 7])
        mu, nu = self._random_gaussian(rng), self._random_gaussian(rng)
        n = 100_000
        pushed = gaussian_ot_map(mu, nu).apply(mu.sample(n, rng)).points
        s = nu.covariance
        mean_z = np.abs(pushed.mean(axis=0) - nu.mean) / np.sqrt(np.diag(s) / n)
        cov_z = np.abs(np.cov(pushed, rowvar=False) - s) / np.sqrt((s ** 2 + np.outer(np.diag(s), np.diag(s))) / n)
        worst = float(max(mean_z.max(), cov_z.max()))
        return worst < 3.0, f"max deviation {worst:.2f} standard errors"

    def check_regularizer_identities(self) -> CheckResult:
        rng = np.random.default_rng([self.seed, 8])
        identity = Mlp(MlpSpec(input_dim=2, hidden_dims=[], output_dim=2), [(np.eye(2), np.zeros(2))])
        X = PointCloud.of(rng.normal(size=(6, 2)))
        gaps = []

        a = np.array([3.0, -4.0])
        linear = Mlp(MlpSpec(input_dim=2, hidden_dims=[], output_dim=1), [(a[:, None], np.zeros(1))])
        graph = Graph()
        gaps.append(abs(graph.evaluate(gradient_optimality(graph, linear, identity, X)) - 5.0))

        graph = Graph()
        sym = PointCloud.of([[0.5, -1.0], [-0.5, 1.0]])
        gaps.append(abs(graph.evaluate(gradient_optimality(graph, QuadraticHead(np.eye(2)), identity, sym))))

        unit = Mlp(MlpSpec(input_dim=2, hidden_dims=[], output_dim=1), [(np.array([[0.6], [0.8]]), np.zeros(1))])
        graph = Graph()
        gaps.append(abs(graph.evaluate(gradient_penalty(graph, unit, X, X, rng))))

        zero = Mlp(MlpSpec(input_dim=2, hidden_dims=[], output_dim=1), [(np.zeros((2, 1)), np.zeros(1))])
        graph = Graph()
        gaps.append(abs(graph.evaluate(gradient_penalty(graph, zero, X, X, rng)) - 1.0))
        worst = float(max(gaps))
        return worst < 1e-12, f"max deviation {worst:.2e}"


def run_verification(fault_injection: bool = False) -> Tuple[bool, pd.DataFrame]:
    table = VerificationSuite(fault_injection=fault_injection).run_all()
    return bool((table["status"] == "PASS").all()), table
