"""Source-localization experiments: architecture strings, sweeps and CSV output."""

from __future__ import annotations

import csv
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import generate_source_localization
from .graph_core import Graph, generate_connected_er, read_graph
from .model import (
    BANK,
    DENSE,
    HYBRID,
    ArchitectureError,
    LayerSpec,
    architecture_parameter_count,
    count_parameters,
    init_parameters,
)
from .seeding import child_seed
from .training import TrainConfig, evaluate, train

SWEEP_AXES = ("none", "B", "T", "sigma2")
_AXIS_ALIASES = {"num_groups": "B", "k": "B", "order": "T", "noise": "sigma2", "sigma": "sigma2"}

DEFAULT_SWEEPS = {
    "B": [float(b) for b in range(1, 16)],
    "T": [float(t) for t in range(2, 13)],
    "sigma2": [10.0 ** e for e in range(-10, -4)],
}

_TERM = re.compile(r"(GL|GC|FC)\[\s*(\d+)\s*(?:,\s*(\d+)\s*)?\]")


class ExperimentError(RuntimeError):
    pass


def parse_architecture(s: str) -> list[LayerSpec]:
    """Parse e.g. ``"GL[10,15]-GL[10,15]"`` or ``"GC[5,32]-FC[100]"``.

    ``GL[T,B]`` is a hybrid node-varying filter layer, ``GC[T,F]`` a bank of F
    node-invariant filters and ``FC[k]`` a fully-connected layer. The readout
    is added by the model builder.
    """
    specs = []
    pos = 0
    while True:
        m = _TERM.match(s, pos)
        if m is None:
            raise ArchitectureError(f"syntax error at position {pos} in {s!r}: expected GL[T,B], GC[T,F] or FC[k]")
        kind, a, b = m.group(1), int(m.group(2)), m.group(3)
        if kind == "FC":
            if b is not None:
                raise ArchitectureError(f"FC takes one argument (position {pos} in {s!r})")
            specs.append(LayerSpec(DENSE, features_out=a))
        else:
            if b is None:
                raise ArchitectureError(f"{kind} takes two arguments (position {pos} in {s!r})")
            if kind == "GL":
                specs.append(LayerSpec(HYBRID, order=a, num_groups=int(b)))
            else:
                specs.append(LayerSpec(BANK, order=a, features_out=int(b)))
        pos = m.end()
        if pos == len(s):
            break
        if s[pos] != "-":
            raise ArchitectureError(f"syntax error at position {pos} in {s!r}: expected '-'")
        pos += 1
    return specs


def format_architecture(specs) -> str:
    terms = []
    for spec in specs:
        if spec.kind == HYBRID:
            terms.append(f"GL[{spec.order},{spec.num_groups}]")
        elif spec.kind == BANK:
            terms.append(f"GC[{spec.order},{spec.features_out}]")
        else:
            terms.append(f"FC[{spec.features_out}]")
    return "-".join(terms)


def normalize_axis(axis: str) -> str:
    axis = _AXIS_ALIASES.get(axis, axis)
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    return axis


@dataclass(frozen=True)
class ExperimentConfig:
    nodes: int = 15
    edge_prob: float = 0.4
    graph_path: str | None = None
    gso: str = "scaled_adjacency"
    arch: str = "GL[10,15]-GL[10,15]"
    train: TrainConfig = field(default_factory=TrainConfig)
    train_size: int = 10_000
    test_size: int = 200
    sigma2: float = 1e-7
    normalization: str = "none"
    diffusion: str = "scaled_adjacency"
    sweep_axis: str = "none"
    sweep_values: tuple[float, ...] = ()
    realizations: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sweep_axis", normalize_axis(self.sweep_axis))
        parse_architecture(self.arch)
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ValueError(f"sweep over {self.sweep_axis} needs at least one value")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")

    def points(self) -> list[float | None]:
        return list(self.sweep_values) if self.sweep_axis != "none" else [None]

    def specs_at(self, value) -> list[LayerSpec]:
        specs = parse_architecture(self.arch)
        if self.sweep_axis == "B":
            specs = [replace(s, num_groups=int(value)) if s.kind == HYBRID else s for s in specs]
        elif self.sweep_axis == "T":
            specs = [replace(s, order=int(value)) if s.kind in (HYBRID, BANK) else s for s in specs]
        return specs

    def sigma2_at(self, value) -> float:
        return float(value) if self.sweep_axis == "sigma2" else self.sigma2


@dataclass
class SweepPoint:
    value: float | None
    accuracies: list[float]
    param_count: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def variance(self) -> float:
        """Unbiased sample variance across realizations (0 for a single one)."""
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.var(self.accuracies, ddof=1))


@dataclass
class SweepResult:
    axis: str
    arch: str
    points: list[SweepPoint] = field(default_factory=list)


def load_graph_for(cfg: ExperimentConfig, seed: int) -> Graph:
    if cfg.graph_path is not None:
        return read_graph(cfg.graph_path)
    return generate_connected_er(cfg.nodes, cfg.edge_prob, seed)


def run_realization(cfg: ExperimentConfig, point_index: int, realization: int) -> tuple[float, int]:
    """Train and evaluate one model; returns (accuracy, parameter count).

    Seeds depend on the realization only, so every sweep point of a
    realization sees the same graph, data and shuffling (a paired design),
    and a point's result does not depend on which other points are swept.
    """
    value = cfg.points()[point_index]

    def seed(tag):
        return child_seed(cfg.seed, realization, tag)

    try:
        g = load_graph_for(cfg, seed("graph"))
        data = generate_source_localization(
            g, cfg.train_size, cfg.test_size, cfg.sigma2_at(value), cfg.normalization,
            seed("data"), cfg.diffusion,
        )
        model = init_parameters(cfg.specs_at(value), g, data.num_classes, seed("init"), cfg.gso)
        model, metrics = train(model, data, replace(cfg.train, seed=seed("train")))
        metrics = evaluate(model, data, metrics)
    except Exception as exc:
        raise ExperimentError(
            f"realization {realization}, sweep point {cfg.sweep_axis}={value}: {exc}"
        ) from exc
    return metrics.test_accuracy, count_parameters(model)


def _run_task(args):
    return run_realization(*args)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> SweepResult:
    """Run every (sweep point, realization) pair and aggregate per point.

    Realizations may run in worker processes; results are joined in
    (point, realization) order so the output does not depend on ``jobs``.
    """
    points = cfg.points()
    tasks = [(cfg, p, r) for p in range(len(points)) for r in range(cfg.realizations)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    else:
        outcomes = [_run_task(t) for t in tasks]

    result = SweepResult(cfg.sweep_axis, cfg.arch)
    for p, value in enumerate(points):
        chunk = outcomes[p * cfg.realizations:(p + 1) * cfg.realizations]
        counts = {c for _, c in chunk}
        expected = architecture_parameter_count(cfg.specs_at(value), _num_nodes(cfg), _num_nodes(cfg))
        if counts != {expected}:
            raise ExperimentError(f"parameter count mismatch at {value}: {counts} vs {expected}")
        result.points.append(SweepPoint(value, [a for a, _ in chunk], expected))
    return result


def _num_nodes(cfg: ExperimentConfig) -> int:
    if cfg.graph_path is not None:
        return read_graph(cfg.graph_path).num_nodes
    return cfg.nodes


def _fmt(v) -> str:
    if v is None:
        return "none"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def sweep_csv(res: SweepResult) -> str:
    rows = [["sweep_value", "mean_accuracy", "quarter_variance", "param_count"]]
    for pt in res.points:
        rows.append([_fmt(pt.value), repr(pt.mean), repr(pt.variance / 4), str(pt.param_count)])
    return "\n".join(",".join(r) for r in rows) + "\n"


def emit_csv(res: SweepResult, path) -> None:
    """Write one row per sweep point; the variance column is quartered to
    match error bars drawn at a quarter of the estimated variance."""
    text = sweep_csv(res)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ExperimentError(f"cannot write {path}: {exc}") from exc


def read_sweep_csv(path) -> list[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
