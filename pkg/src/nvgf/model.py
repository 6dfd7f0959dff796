"""Graph-filter CNN layers, forward/backward passes and model files.

Activations of graph layers are kept as ``(batch, N, F)`` arrays; dense layers
work on ``(batch, d)``. There is no pooling anywhere: every graph layer maps a
graph signal to a graph signal of the same size.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .filters import MembershipMatrix, build_membership
from .graph_core import Graph, ShiftOperator, build_shift
from .seeding import child_seed

HYBRID = "hybrid_gf"
BANK = "node_invariant_gf_bank"
DENSE = "fully_connected"
LAYER_KINDS = (HYBRID, BANK, DENSE)

FORMAT_NAME = "nvgf-model"
FORMAT_VERSION = 1


class ArchitectureError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    """One hidden layer.

    ``features_out`` is the number of filters of a bank layer or the width of
    a fully-connected layer. ``features_in`` is filled in when the model is
    built.
    """

    kind: str
    order: int | None = None
    num_groups: int | None = None
    features_out: int | None = None
    features_in: int | None = None
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ArchitectureError(f"unknown layer kind {self.kind!r}")
        if self.nonlinearity not in ("relu", "none"):
            raise ArchitectureError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.kind in (HYBRID, BANK) and (self.order is None or self.order < 1):
            raise ArchitectureError(f"filter order T must be >= 1, got {self.order}")
        if self.kind == HYBRID and (self.num_groups is None or self.num_groups < 1):
            raise ArchitectureError(f"number of groups B must be >= 1, got {self.num_groups}")
        if self.kind in (BANK, DENSE) and (self.features_out is None or self.features_out < 1):
            raise ArchitectureError(f"output features must be >= 1, got {self.features_out}")


def _shift_stack(s: np.ndarray, x: np.ndarray, order: int) -> list[np.ndarray]:
    zs = [x]
    for _ in range(order - 1):
        zs.append(np.matmul(s, zs[-1]))
    return zs


class HybridFilterLayer:
    """y = sum_t diag(C_B h_t) S^t x + b, on single-feature signals."""

    kind = HYBRID
    param_names = ("taps", "bias")

    def __init__(self, spec: LayerSpec, taps: np.ndarray, bias: np.ndarray):
        self.spec = spec
        self.taps = taps  # (B, T)
        self.bias = bias  # (1,)

    def forward(self, x, s, membership):
        zs = _shift_stack(s, x, self.spec.order)
        h = self.taps[membership.assignment]
        y = np.full_like(x, self.bias[0])
        for t, z in enumerate(zs):
            y += h[None, :, t, None] * z
        return y, zs

    def backward(self, gy, zs, s, membership):
        b = membership.num_groups
        d_taps = np.empty_like(self.taps)
        for t, z in enumerate(zs):
            per_node = (gy * z).sum(axis=(0, 2))
            d_taps[:, t] = np.bincount(membership.assignment, per_node, minlength=b)
        d_bias = np.array([gy.sum()])
        h = self.taps[membership.assignment]
        st = s.T
        gx = h[None, :, -1, None] * gy
        for t in range(self.spec.order - 2, -1, -1):
            gx = np.matmul(st, gx) + h[None, :, t, None] * gy
        return gx, [d_taps, d_bias]


class FilterBankLayer:
    """Bank of node-invariant polynomial filters: y_g = sum_t sum_f h_{t,f,g} S^t x_f + b_g."""

    kind = BANK
    param_names = ("taps", "bias")

    def __init__(self, spec: LayerSpec, taps: np.ndarray, bias: np.ndarray):
        self.spec = spec
        self.taps = taps  # (T, F_in, F_out)
        self.bias = bias  # (F_out,)

    def forward(self, x, s, membership):
        zs = _shift_stack(s, x, self.spec.order)
        y = sum(z @ self.taps[t] for t, z in enumerate(zs)) + self.bias
        return y, zs

    def backward(self, gy, zs, s, membership):
        d_taps = np.stack([np.einsum("bnf,bng->fg", z, gy) for z in zs])
        d_bias = gy.sum(axis=(0, 1))
        st = s.T
        gx = gy @ self.taps[-1].T
        for t in range(self.spec.order - 2, -1, -1):
            gx = np.matmul(st, gx) + gy @ self.taps[t].T
        return gx, [d_taps, d_bias]


class DenseLayer:
    """Affine map on flattened inputs; also used for the readout."""

    kind = DENSE
    param_names = ("weight", "bias")

    def __init__(self, spec: LayerSpec, weight: np.ndarray, bias: np.ndarray):
        self.spec = spec
        self.weight = weight  # (d_in, d_out)
        self.bias = bias  # (d_out,)

    def forward(self, x, s, membership):
        return x @ self.weight + self.bias, x

    def backward(self, gy, x, s, membership):
        return gy @ self.weight.T, [x.T @ gy, gy.sum(axis=0)]


_LAYER_CLASSES = {cls.kind: cls for cls in (HybridFilterLayer, FilterBankLayer, DenseLayer)}


@dataclass
class ForwardTrace:
    inputs: list = field(default_factory=list)
    caches: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    readout_cache: np.ndarray | None = None
    logits: np.ndarray | None = None
    single: bool = False


@dataclass
class Model:
    graph: Graph
    shift: ShiftOperator
    num_classes: int
    layers: list
    readout: DenseLayer
    membership: MembershipMatrix | None = None
    init: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"layer{i}.{n}", getattr(layer, n)) for n in layer.param_names]
        out += [(f"readout.{n}", getattr(self.readout, n)) for n in self.readout.param_names]
        return out


def _resolve_specs(specs, n: int) -> tuple[list[LayerSpec], int]:
    """Fill in input dimensions; returns resolved specs and the flat readout width."""
    resolved = []
    graph_features = 1  # None once the signal has left the graph domain
    dense_width = None
    for i, spec in enumerate(specs):
        if spec.kind in (HYBRID, BANK) and graph_features is None:
            raise ArchitectureError(f"layer {i}: graph filter cannot follow a fully-connected layer")
        if spec.kind == HYBRID:
            if graph_features != 1:
                raise ArchitectureError(
                    f"layer {i}: hybrid filters need single-feature input, got {graph_features}"
                )
            spec = LayerSpec(HYBRID, spec.order, spec.num_groups, 1, 1, spec.nonlinearity)
        elif spec.kind == BANK:
            spec = LayerSpec(BANK, spec.order, None, spec.features_out, graph_features, spec.nonlinearity)
            graph_features = spec.features_out
        else:
            d_in = n * graph_features if graph_features is not None else dense_width
            spec = LayerSpec(DENSE, None, None, spec.features_out, d_in, spec.nonlinearity)
            graph_features, dense_width = None, spec.features_out
        resolved.append(spec)
    flat = n * graph_features if graph_features is not None else dense_width
    return resolved, flat


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    a = np.sqrt(3.0 / fan_in)
    return rng.uniform(-a, a, size=shape)


def init_parameters(
    specs,
    graph: Graph,
    num_classes: int,
    seed: int,
    shift_kind: str = "adjacency",
    membership: MembershipMatrix | None = None,
) -> Model:
    """Build a model with uniform fan-in scaled weights and zero biases.

    Taps and weights are drawn from U(-a, a) with a = sqrt(3 / fan_in), so
    their variance is 1 / fan_in.
    """
    if num_classes < 1:
        raise ArchitectureError("num_classes must be >= 1")
    n = graph.num_nodes
    resolved, flat = _resolve_specs(list(specs), n)
    groups = {s.num_groups for s in resolved if s.kind == HYBRID}
    if len(groups) > 1:
        raise ArchitectureError(f"hybrid layers must share one grouping, got B in {sorted(groups)}")
    if groups:
        (b,) = groups
        if b > n:
            raise ArchitectureError(f"B={b} exceeds the number of nodes N={n}")
        if membership is None:
            membership = build_membership(graph, b, child_seed(seed, "membership"))
        elif membership.num_groups != b or membership.num_nodes != n:
            raise ArchitectureError("membership does not match the hybrid layers")
    else:
        membership = None

    rng = np.random.default_rng(child_seed(seed, "init"))
    layers = []
    for spec in resolved:
        if spec.kind == HYBRID:
            layers.append(HybridFilterLayer(
                spec, _uniform(rng, spec.order, (spec.num_groups, spec.order)), np.zeros(1)
            ))
        elif spec.kind == BANK:
            shape = (spec.order, spec.features_in, spec.features_out)
            layers.append(FilterBankLayer(
                spec, _uniform(rng, spec.order * spec.features_in, shape), np.zeros(spec.features_out)
            ))
        else:
            shape = (spec.features_in, spec.features_out)
            layers.append(DenseLayer(spec, _uniform(rng, spec.features_in, shape), np.zeros(spec.features_out)))
    ro_spec = LayerSpec(DENSE, features_out=num_classes, features_in=flat, nonlinearity="none")
    readout = DenseLayer(ro_spec, _uniform(rng, flat, (flat, num_classes)), np.zeros(num_classes))
    return Model(
        graph, build_shift(graph, shift_kind), num_classes, layers, readout, membership,
        init={"scheme": "uniform_fan_in", "seed": int(seed)},
    )


def forward(
    model: Model,
    x,
    mode: str = "eval",
    rng=None,
    dropout_p: float = 0.0,
    dropout_kinds: tuple[str, ...] = (DENSE,),
):
    """Run the network; returns ``(logits, trace)``.

    ``x`` is one signal ``(N,)``, a batch ``(batch, N)`` or a multi-feature
    batch ``(batch, N, F)``. In train mode the activation of every hidden
    layer whose kind is in ``dropout_kinds`` is multiplied by an
    inverted-dropout mask drawn from ``rng``. By default only
    fully-connected layers are dropped out; pass ``LAYER_KINDS`` to drop out
    graph-filter outputs as well.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[1] != model.num_nodes:
        raise ValueError(f"input of shape {x.shape} does not match N={model.num_nodes}")
    use_dropout = mode == "train" and dropout_p > 0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = 1.0 - dropout_p

    s = model.shift.matrix
    trace = ForwardTrace(single=single)
    h = x
    for layer in model.layers:
        if layer.kind == DENSE:
            h = h.reshape(h.shape[0], -1)
        trace.inputs.append(h.shape)
        z, cache = layer.forward(h, s, model.membership)
        trace.caches.append(cache)
        trace.pre.append(z)
        h = np.maximum(z, 0.0) if layer.spec.nonlinearity == "relu" else z
        mask = None
        if use_dropout and layer.kind in dropout_kinds:
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        trace.masks.append(mask)
    flat = h.reshape(h.shape[0], -1)
    logits, trace.readout_cache = model.readout.forward(flat, s, None)
    trace.logits = logits
    return (logits[0] if single else logits), trace


def backward(model: Model, trace: ForwardTrace, grad_logits) -> list[np.ndarray]:
    """Gradients for every tensor of ``model.parameters()``, in the same order."""
    if trace is None or trace.logits is None:
        raise ValueError("backward needs the trace of a forward pass")
    g = np.asarray(grad_logits, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != trace.logits.shape:
        raise ValueError(f"grad_logits shape {g.shape} != logits shape {trace.logits.shape}")
    s = model.shift.matrix
    gx, ro_grads = model.readout.backward(g, trace.readout_cache, s, None)
    grads = []
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        out_shape = trace.pre[i].shape
        gx = gx.reshape(out_shape)
        if trace.masks[i] is not None:
            gx = gx * trace.masks[i]
        if layer.spec.nonlinearity == "relu":
            gx = gx * (trace.pre[i] > 0)
        gx, layer_grads = layer.backward(gx, trace.caches[i], s, model.membership)
        grads = layer_grads + grads
    return grads + ro_grads


def layer_parameter_count(spec: LayerSpec) -> int:
    if spec.kind == HYBRID:
        return spec.num_groups * spec.order + 1
    if spec.kind == BANK:
        return spec.order * spec.features_in * spec.features_out + spec.features_out
    return spec.features_in * spec.features_out + spec.features_out


def count_parameters(model: Model) -> int:
    """Closed-form count: B*T + 1 per hybrid layer, T*F_in*F_out + F_out per
    bank, d_in*d_out + d_out per dense layer and for the readout."""
    return sum(layer_parameter_count(s) for s in model.specs) + layer_parameter_count(model.readout.spec)


def architecture_parameter_count(specs, num_nodes: int, num_classes: int) -> int:
    resolved, flat = _resolve_specs(list(specs), num_nodes)
    total = sum(layer_parameter_count(s) for s in resolved)
    return total + flat * num_classes + num_classes


# -- model files ----------------------------------------------------------

def _tensor(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _untensor(d: dict) -> np.ndarray:
    shape = tuple(int(v) for v in d["shape"])
    data = np.array(d["data"], dtype=float)
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"tensor data of size {data.size} does not fit shape {shape}")
    return data.reshape(shape)


def model_to_dict(model: Model) -> dict:
    layers = [
        {"spec": asdict(layer.spec), "params": {n: _tensor(getattr(layer, n)) for n in layer.param_names}}
        for layer in model.layers
    ]
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "graph_hash": model.graph.digest,
        "graph": {"num_nodes": model.graph.num_nodes, "edges": [list(e) for e in model.graph.edges]},
        "shift_kind": model.shift.kind,
        "num_classes": model.num_classes,
        "init": model.init,
        "membership": None if model.membership is None else {
            "assignment": [int(v) for v in model.membership.assignment],
            "selected": list(model.membership.selected),
        },
        "layers": layers,
        "readout": {n: _tensor(getattr(model.readout, n)) for n in model.readout.param_names},
    }


def model_from_dict(d: dict) -> Model:
    if d.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"not a {FORMAT_NAME} file")
    if d.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model file version {d.get('version')!r}")
    try:
        graph = Graph(int(d["graph"]["num_nodes"]), tuple(tuple(e) for e in d["graph"]["edges"]))
        if graph.digest != d["graph_hash"]:
            raise ModelFormatError("graph hash does not match the stored graph")
        membership = None
        if d["membership"] is not None:
            membership = MembershipMatrix(
                np.array(d["membership"]["assignment"], dtype=np.int64),
                tuple(int(v) for v in d["membership"]["selected"]),
            )
        layers = []
        for entry in d["layers"]:
            spec = LayerSpec(**entry["spec"])
            cls = _LAYER_CLASSES[spec.kind]
            layers.append(cls(spec, *(_untensor(entry["params"][n]) for n in cls.param_names)))
        ro = d["readout"]
        weight, bias = _untensor(ro["weight"]), _untensor(ro["bias"])
        ro_spec = LayerSpec(DENSE, features_out=weight.shape[1], features_in=weight.shape[0],
                            nonlinearity="none")
        model = Model(graph, build_shift(graph, d["shift_kind"]), int(d["num_classes"]), layers,
                      DenseLayer(ro_spec, weight, bias), membership, dict(d.get("init") or {}))
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    _check_shapes(model)
    return model


def _check_shapes(model: Model) -> None:
    resolved, flat = _resolve_specs(model.specs, model.num_nodes)
    for spec, layer in zip(resolved, model.layers):
        if spec != layer.spec:
            raise ModelFormatError(f"layer spec {layer.spec} inconsistent with its input")
        if spec.kind == HYBRID:
            expected = [(spec.num_groups, spec.order), (1,)]
        elif spec.kind == BANK:
            expected = [(spec.order, spec.features_in, spec.features_out), (spec.features_out,)]
        else:
            expected = [(spec.features_in, spec.features_out), (spec.features_out,)]
        got = [getattr(layer, n).shape for n in layer.param_names]
        if got != expected:
            raise ModelFormatError(f"{spec.kind} tensors have shapes {got}, expected {expected}")
    if model.readout.weight.shape != (flat, model.num_classes):
        raise ModelFormatError("readout shape inconsistent with the last layer")
    if any(s.kind == HYBRID for s in resolved):
        if model.membership is None or model.membership.num_nodes != model.num_nodes:
            raise ModelFormatError("hybrid layers need a membership over all nodes")


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> Model:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"cannot parse model file {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ModelFormatError(f"cannot parse model file {path}: not an object")
    return model_from_dict(d)
