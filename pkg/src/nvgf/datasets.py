"""Synthetic source-localization data and the labeled graph-signal file format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph_core import Graph, build_shift
from .seeding import child_seed

NORMALIZATIONS = ("none", "unit_l2")
DIFFUSIONS = ("adjacency", "scaled_adjacency")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    source: int
    time: int
    noise_id: int | None = None

    def to_comment(self) -> str:
        noise = "-" if self.noise_id is None else str(self.noise_id)
        return f"c={self.source} t={self.time} noise={noise}"

    @classmethod
    def from_comment(cls, text: str) -> "Provenance":
        try:
            fields = dict(tok.split("=", 1) for tok in text.split())
            noise = fields.get("noise", "-")
            return cls(int(fields["c"]), int(fields["t"]), None if noise == "-" else int(noise))
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"bad provenance comment {text!r}") from exc


@dataclass(frozen=True)
class LabeledSample:
    signal: np.ndarray
    label: int
    provenance: Provenance | None = None


@dataclass
class Dataset:
    """Train and test splits as stacked ``(n, N)`` arrays."""

    num_nodes: int
    num_classes: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    sigma2: float = 0.0
    normalization: str = "none"
    graph_hash: str | None = None
    train_provenance: list = field(default_factory=list)
    test_provenance: list = field(default_factory=list)
    diffusion: str | None = None

    def __post_init__(self):
        n = self.num_nodes
        self.train_x = np.asarray(self.train_x, dtype=float).reshape(-1, n)
        self.test_x = np.asarray(self.test_x, dtype=float).reshape(-1, n)
        self.train_y = np.asarray(self.train_y, dtype=np.int64).ravel()
        self.test_y = np.asarray(self.test_y, dtype=np.int64).ravel()
        for name, x, y in (("train", self.train_x, self.train_y), ("test", self.test_x, self.test_y)):
            if len(x) != len(y):
                raise ValueError(f"{name}: {len(x)} signals but {len(y)} labels")
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise ValueError(f"{name}: labels must lie in [0, {self.num_classes})")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")

    def samples(self, split: str):
        x, y, prov = {
            "train": (self.train_x, self.train_y, self.train_provenance),
            "test": (self.test_x, self.test_y, self.test_provenance),
        }[split]
        for i in range(len(y)):
            yield LabeledSample(x[i], int(y[i]), prov[i] if prov else None)


def _diffusion_matrix(g: Graph, diffusion: str) -> np.ndarray:
    if diffusion not in DIFFUSIONS:
        raise ValueError(f"unknown diffusion operator {diffusion!r}")
    return build_shift(g, diffusion).matrix


def _diffuse(w: np.ndarray, source: int, time: int, normalization: str) -> np.ndarray:
    x = np.zeros(w.shape[0])
    x[source] = 1.0
    for _ in range(time):
        x = w @ x
    if normalization == "unit_l2":
        x = x / np.linalg.norm(x)
    elif normalization != "none":
        raise ValueError(f"unknown normalization {normalization!r}")
    return x


def diffuse(
    g: Graph, source: int, time: int, normalization: str = "none", diffusion: str = "adjacency"
) -> np.ndarray:
    """W^t delta_c by ``time`` successive shifts.

    ``diffusion="scaled_adjacency"`` diffuses with W / lambda_max(W) instead.
    """
    return _diffuse(_diffusion_matrix(g, diffusion), source, time, normalization)


def generate_source_localization(
    g: Graph,
    n_train: int,
    n_test: int,
    sigma2: float = 0.0,
    normalization: str = "none",
    seed: int = 0,
    diffusion: str = "scaled_adjacency",
    max_time: int | None = None,
) -> Dataset:
    """Diffused-delta classification data; the label is the source node.

    Source and diffusion time are drawn uniformly (time from
    ``0..max_time``, default ``N-1``). Test signals get i.i.d. Gaussian noise
    of variance ``sigma2`` after normalization; training signals stay clean.

    With the default ``scaled_adjacency`` diffusion the signals stay bounded
    and keep their magnitude, which is what identifies the source once the
    diffusion has nearly converged. ``unit_l2`` normalization discards it.
    """
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    n = g.num_nodes
    max_time = n - 1 if max_time is None else max_time
    w = _diffusion_matrix(g, diffusion)
    draw_rng = np.random.default_rng(child_seed(seed, "samples"))
    noise_rng = np.random.default_rng(child_seed(seed, "noise"))

    def split(count, noisy):
        xs, ys, prov = np.empty((count, n)), np.empty(count, dtype=np.int64), []
        for k in range(count):
            c = int(draw_rng.integers(n))
            t = int(draw_rng.integers(max_time + 1))
            xs[k] = _diffuse(w, c, t, normalization)
            ys[k] = c
            prov.append(Provenance(c, t, k if noisy else None))
        if noisy and count:
            xs += np.sqrt(sigma2) * noise_rng.standard_normal((count, n))
        return xs, ys, prov

    train_x, train_y, train_prov = split(n_train, False)
    test_x, test_y, test_prov = split(n_test, True)
    return Dataset(n, n, train_x, train_y, test_x, test_y, float(sigma2), normalization,
                   g.digest, train_prov, test_prov, diffusion)


def write_dataset(d: Dataset, path) -> None:
    lines = [
        f"dataset {d.num_nodes} {d.num_classes} {len(d.train_y)} {len(d.test_y)} "
        f"{float(d.sigma2)!r} {d.normalization}"
    ]
    if d.graph_hash:
        lines.append(f"# graph {d.graph_hash}")
    if d.diffusion:
        lines.append(f"# diffusion {d.diffusion}")
    for split, x, y, prov in (("train", d.train_x, d.train_y, d.train_provenance),
                              ("test", d.test_x, d.test_y, d.test_provenance)):
        for i in range(len(y)):
            line = f"{split} {int(y[i])} " + " ".join(repr(float(v)) for v in x[i])
            if prov:
                line += " # " + prov[i].to_comment()
            lines.append(line)
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> Dataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset file")
    head = lines[0].split()
    if len(head) != 7 or head[0] != "dataset":
        raise DatasetFormatError(
            f"{path}: bad header {lines[0]!r}; expected "
            "'dataset <N> <C> <n_train> <n_test> <sigma2> <normalization>'"
        )
    try:
        n, c, n_train, n_test = (int(v) for v in head[1:5])
        sigma2 = float(head[5])
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: bad header {lines[0]!r}") from exc
    norm = head[6].replace("-", "_")
    if norm not in NORMALIZATIONS:
        raise DatasetFormatError(f"{path}: unknown normalization {head[6]!r}")

    graph_hash = diffusion = None
    rows = {"train": ([], [], []), "test": ([], [], [])}
    for lineno, raw in enumerate(lines[1:], start=2):
        body, _, comment = raw.partition("#")
        if not body.strip():
            tokens = comment.split()
            if len(tokens) == 2 and tokens[0] == "graph":
                graph_hash = tokens[1]
            elif len(tokens) == 2 and tokens[0] == "diffusion":
                diffusion = tokens[1]
            continue
        parts = body.split()
        if parts[0] not in rows:
            raise DatasetFormatError(f"{path}:{lineno}: split must be 'train' or 'test'")
        if len(parts) - 2 != n:
            raise DatasetFormatError(
                f"{path}:{lineno}: signal has {len(parts) - 2} values, expected N={n}"
            )
        try:
            label = int(parts[1])
            values = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: {exc}") from exc
        if not 0 <= label < c:
            raise DatasetFormatError(f"{path}:{lineno}: label {label} not in [0, {c})")
        xs, ys, prov = rows[parts[0]]
        xs.append(values)
        ys.append(label)
        prov.append(Provenance.from_comment(comment) if comment.strip() else None)

    for split, expected in (("train", n_train), ("test", n_test)):
        if len(rows[split][1]) != expected:
            raise DatasetFormatError(
                f"{path}: header promises {expected} {split} samples, found {len(rows[split][1])}"
            )

    def provenance(split):
        prov = rows[split][2]
        return prov if prov and all(p is not None for p in prov) else []

    return Dataset(
        n, c,
        np.array(rows["train"][0], dtype=float).reshape(-1, n), rows["train"][1],
        np.array(rows["test"][0], dtype=float).reshape(-1, n), rows["test"][1],
        sigma2, norm, graph_hash, provenance("train"), provenance("test"), diffusion,
    )
