"""
Files written by a run: CSV logs, model files, scatter plot, failure marker.
"""

import logging
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from evaluation.metrics import EVAL_COLUMNS, EvalReport  # noqa: E402
from sampling.samplers import PointCloud  # noqa: E402
from transport.nets import Mlp, MlpSpec  # noqa: E402
from transport.trainer import TrainHistory  # noqa: E402

logger = logging.getLogger(__name__)

SCATTER_COLORS = {"input": "green", "pushforward": "blue", "target": "peru"}
CANVAS_PX = 800


class ModelFormatError(ValueError):
    """A model file that cannot be parsed or does not match the expected shape."""


def write_history(history: TrainHistory, out_dir: Path) -> None:
    history.losses_frame().to_csv(out_dir / "history.csv", index=False)
    history.timing_frame().to_csv(out_dir / "timing.csv", index=False)


def write_eval(reports: Sequence[EvalReport], path: Path) -> None:
    pd.DataFrame([r.to_row() for r in reports], columns=EVAL_COLUMNS).to_csv(path, index=False)


def write_failed_marker(out_dir: Path, message: str) -> None:
    (out_dir / "FAILED").write_text(message + "\n", encoding="utf-8")


def write_samples(cloud: PointCloud, path: Union[Path, str, None] = None) -> str:
    """CSV of a point cloud (columns x0, x1, ...); returns the text when no path is given."""
    frame = pd.DataFrame(cloud.points, columns=[f"x{i}" for i in range(cloud.dim)])
    return frame.to_csv(path, index=False)


def _floats(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_model(net: Mlp, path: Path) -> None:
    """
    Text model file: header lines, then one line per weight matrix (row-major)
    and one per bias vector, floats in shortest round-trip form.
    """
    spec = net.spec
    lines = [
        "dims: " + " ".join(str(d) for d in spec.dims),
        f"activation: {spec.activation}",
        f"negative_slope: {spec.negative_slope!r}",
        f"seed: {spec.seed}",
    ]
    for w, b in net.layers:
        lines.append(_floats(w))
        lines.append(_floats(b))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: Path, expected: MlpSpec = None) -> Mlp:
    """
    Parse a model file written by save_model.

    Args:
        path: model file
        expected: when given, the file's dimensions must match it
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = {}
    for line in lines[:4]:
        key, _, value = line.partition(":")
        header[key.strip()] = value.strip()
    try:
        dims = [int(d) for d in header["dims"].split()]
        spec = MlpSpec(input_dim=dims[0], hidden_dims=dims[1:-1], output_dim=dims[-1],
                       activation=header["activation"], negative_slope=float(header["negative_slope"]),
                       seed=int(header["seed"]))
    except (KeyError, IndexError, ValueError) as e:
        raise ModelFormatError(f"{path}: malformed header ({e})") from e
    if expected is not None and expected.dims != spec.dims:
        raise ModelFormatError(f"{path}: dims {spec.dims} do not match configured {expected.dims}")

    body = lines[4:]
    if len(body) != 2 * (len(dims) - 1):
        raise ModelFormatError(f"{path}: expected {2 * (len(dims) - 1)} parameter lines, got {len(body)}")
    layers = []
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        try:
            w = np.array([float(v) for v in body[2 * k].split()])
            bias = np.array([float(v) for v in body[2 * k + 1].split()])
        except ValueError as e:
            raise ModelFormatError(f"{path}: layer {k} is not numeric ({e})") from e
        if w.size != a * b or bias.size != b:
            raise ModelFormatError(f"{path}: layer {k} has {w.size}/{bias.size} values, expected {a * b}/{b}")
        layers.append((w.reshape(a, b), bias))
    return Mlp(spec, layers)


def write_scatter(inputs: PointCloud, pushforward: PointCloud, target: PointCloud, path: Path,
                  title: str = "") -> None:
    """
    Three-class scatter plot on an 800x800 canvas.

    Only the first two coordinates are drawn. Axes span the union bounding box
    of all points with a 5% margin.
    """
    clouds = {"input": inputs, "pushforward": pushforward, "target": target}
    planar = {k: c.points[:, :2] if c.dim >= 2 else np.hstack([c.points, np.zeros((len(c), 1))])
              for k, c in clouds.items()}
    everything = np.vstack([p for p in planar.values() if len(p)])
    low, high = everything.min(axis=0), everything.max(axis=0)
    margin = 0.05 * np.maximum(high - low, 1e-12)

    plt.rcParams["svg.hashsalt"] = "otm-scatter"
    fig, ax = plt.subplots(figsize=(CANVAS_PX / 72, CANVAS_PX / 72), dpi=72)
    for name, points in planar.items():
        ax.scatter(points[:, 0], points[:, 1], s=4, c=SCATTER_COLORS[name], label=name, linewidths=0)
    ax.set_xlim(low[0] - margin[0], high[0] + margin[0])
    ax.set_ylim(low[1] - margin[1], high[1] + margin[1])
    ax.legend(loc="upper right")
    if title:
        ax.set_title(title)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
