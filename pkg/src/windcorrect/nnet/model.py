"""Declarative model specs and a flat-parameter network built from them."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..errors import InputError, SpecError
from .layers import ACTIVATIONS, LAYERS

FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int | None = None  # dense units, conv filters, lstm units per direction
    kernel_width: int | None = None
    stride: int | None = None
    rate: float = 0.0
    activation: str = "linear"
    return_sequences: bool = False
    epsilon: float = 1e-3
    momentum: float = 0.99

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v != LayerSpec.__dataclass_fields__[k].default or k == "kind"}


def dense(units, activation="linear"):
    return LayerSpec("dense", units=units, activation=activation)


def conv1d(filters, width, stride, activation="linear"):
    return LayerSpec("conv1d", units=filters, kernel_width=width, stride=stride, activation=activation)


def bilstm(units, return_sequences=False):
    return LayerSpec("bilstm", units=units, return_sequences=return_sequences)


def batchnorm(epsilon=1e-3, momentum=0.99):
    return LayerSpec("batchnorm", epsilon=epsilon, momentum=momentum)


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def activation(kind):
    return LayerSpec("activation", activation=kind)


def flatten():
    return LayerSpec("flatten")


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss: str = "mse"

    @property
    def output_shape(self) -> tuple[int, ...]:
        return build_network(self).out_shape

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [l.to_dict() for l in self.layers],
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "loss": self.loss,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec(**l) for l in d["layers"]),
            learning_rate=float(d.get("learning_rate", 1e-3)),
            optimizer=d.get("optimizer", "adam"),
            loss=d.get("loss", "mse"),
        )

    def with_learning_rate(self, lr: float) -> "ModelSpec":
        return replace(self, learning_rate=lr)


@dataclass(frozen=True)
class Segment:
    name: str
    layer: int
    start: int
    stop: int
    shape: tuple[int, ...]


class Network:
    """Layer objects plus the index of their slices in the flat vectors."""

    def __init__(self, spec: ModelSpec):
        if spec.optimizer != "adam" or spec.loss != "mse":
            raise SpecError("only adam / mse are supported")
        if not spec.layers:
            raise SpecError("model has no layers")
        shape = tuple(spec.input_shape)
        self.layers = []
        for i, ls in enumerate(spec.layers):
            cls = LAYERS.get(ls.kind)
            if cls is None:
                raise SpecError(f"layer {i}: unknown kind {ls.kind!r}")
            if ls.activation not in ACTIVATIONS:
                raise SpecError(f"layer {i}: unknown activation {ls.activation!r}")
            try:
                layer = cls(ls, shape)
            except SpecError as exc:
                raise SpecError(f"layer {i} ({ls.kind}): {exc}") from None
            self.layers.append(layer)
            shape = layer.out_shape
        self.in_shape = tuple(spec.input_shape)
        self.out_shape = shape
        self.param_segments = self._index("params")
        self.state_segments = self._index("states")
        self.n_params = self.param_segments[-1].stop if self.param_segments else 0
        self.n_state = self.state_segments[-1].stop if self.state_segments else 0

    def _index(self, attr):
        segs, pos = [], 0
        for i, layer in enumerate(self.layers):
            for name, shape in getattr(layer, attr).items():
                size = int(np.prod(shape))
                segs.append(Segment(f"{i}.{layer.kind}.{name}", i, pos, pos + size, tuple(shape)))
                pos += size
        return segs

    def views(self, flat, segments):
        per_layer = [dict() for _ in self.layers]
        for seg in segments:
            per_layer[seg.layer][seg.name.rsplit(".", 1)[1]] = flat[seg.start:seg.stop].reshape(seg.shape)
        return per_layer

    def layer_mask(self, layers) -> np.ndarray:
        """Boolean mask over the flat params selecting the given layer indices."""
        mask = np.zeros(self.n_params, dtype=bool)
        chosen = set(layers)
        for seg in self.param_segments:
            if seg.layer in chosen:
                mask[seg.start:seg.stop] = True
        return mask

    def init(self, seed: int):
        rng = np.random.default_rng(seed)
        params = np.zeros(self.n_params)
        state = np.zeros(self.n_state)
        pv, sv = self.views(params, self.param_segments), self.views(state, self.state_segments)
        for layer, p, s in zip(self.layers, pv, sv):
            for k, v in layer.init(rng).items():
                p[k][...] = v
            for k, v in layer.init_state().items():
                s[k][...] = v
        return params, state

    def check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.in_shape:
            raise InputError(f"expected input shape (n, {', '.join(map(str, self.in_shape))}), got {x.shape}")
        return x

    def run(self, params, state, x, training, rng=None, frozen=frozenset()):
        """Forward pass; returns (output, caches, new_state_flat).

        Layers in ``frozen`` run in inference mode, so frozen batch
        normalisation keeps using (and never updates) its running statistics.
        """
        pv, sv = self.views(params, self.param_segments), self.views(state, self.state_segments)
        new_state = state.copy() if training else state
        nsv = self.views(new_state, self.state_segments) if training else None
        caches = []
        for i, layer in enumerate(self.layers):
            train_here = training and i not in frozen
            x, cache, upd = layer.forward(x, pv[i], sv[i], train_here, rng)
            caches.append(cache)
            if upd:
                for k, v in upd.items():
                    nsv[i][k][...] = v
        return x, caches, new_state

    def backprop(self, dy, caches, params, stop_at: int = 0):
        """Gradient of the flat params given dLoss/dOutput; layers below ``stop_at`` are skipped."""
        pv = self.views(params, self.param_segments)
        grad = np.zeros(self.n_params)
        gv = self.views(grad, self.param_segments)
        for i in range(len(self.layers) - 1, stop_at - 1, -1):
            dy, g = self.layers[i].backward(dy, caches[i], pv[i])
            for k, v in g.items():
                gv[i][k][...] = v
        return grad, dy


@lru_cache(maxsize=64)
def build_network(spec: ModelSpec) -> Network:
    return Network(spec)


def param_count(spec: ModelSpec) -> int:
    """Trainable parameter count (batch-norm running statistics excluded)."""
    return build_network(spec).n_params


def nontrainable_count(spec: ModelSpec) -> int:
    return build_network(spec).n_state


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: np.ndarray
    state: np.ndarray
    history: list[dict] = field(default_factory=list)
    rng_seed: int = 0

    def __post_init__(self):
        net = build_network(self.spec)
        if self.params.shape != (net.n_params,) or self.state.shape != (net.n_state,):
            raise SpecError("parameter vector does not match the spec")

    @property
    def network(self) -> Network:
        return build_network(self.spec)

    def copy(self) -> "TrainedModel":
        return TrainedModel(self.spec, self.params.copy(), self.state.copy(),
                            [dict(h) for h in self.history], self.rng_seed)

    def named_params(self) -> dict[str, np.ndarray]:
        return {s.name: self.params[s.start:s.stop].reshape(s.shape) for s in self.network.param_segments}


def initialize(spec: ModelSpec, seed: int = 0) -> TrainedModel:
    params, state = build_network(spec).init(seed)
    return TrainedModel(spec, params, state, [], seed)


def forward(model: TrainedModel, batch, mode: str = "infer", rng=None, batch_size: int = 4096) -> np.ndarray:
    """Predictions for ``batch``; ``mode`` is ``"infer"`` or ``"train"``.

    Inference runs in chunks and is a pure function of the parameters and
    input.  Train mode applies dropout (``rng`` required) and batch
    statistics but does not store updated running statistics.
    """
    net = model.network
    x = net.check_input(batch)
    if mode == "train":
        return net.run(model.params, model.state, x, True, rng)[0]
    if mode != "infer":
        raise InputError(f"unknown mode {mode!r}")
    if len(x) <= batch_size:
        return net.run(model.params, model.state, x, False)[0]
    return np.concatenate([net.run(model.params, model.state, x[i:i + batch_size], False)[0]
                           for i in range(0, len(x), batch_size)])


def mse_loss(pred, targets):
    targets = np.asarray(targets, dtype=float).reshape(pred.shape)
    diff = pred - targets
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss_and_gradients(model: TrainedModel, batch, targets, mode="train", rng=None, frozen=frozenset()):
    """Returns ``(loss, flat_gradient, new_state)`` for mean-squared error."""
    net = model.network
    x = net.check_input(batch)
    pred, caches, new_state = net.run(model.params, model.state, x, mode == "train", rng, frozen)
    loss, dpred = mse_loss(pred, targets)
    stop = min((i for i in range(len(net.layers)) if i not in frozen), default=len(net.layers))
    grad, _ = net.backprop(dpred, caches, model.params, stop_at=stop)
    return loss, grad, new_state


def gradients(model: TrainedModel, batch, targets, mode="train", rng=None) -> np.ndarray:
    """Exact gradient of the batch MSE with respect to every trainable parameter."""
    return loss_and_gradients(model, batch, targets, mode, rng)[1]


def save_model(model: TrainedModel, out_dir, extra: dict | None = None) -> None:
    """Write ``model.json`` (spec, seed, history, segment index) and ``params.bin``.

    The blob holds the trainable parameters followed by the running
    statistics, as little-endian float64.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = model.network
    blob = np.concatenate([model.params, model.state]).astype("<f8")
    segments = [{"name": s.name, "offset": s.start, "shape": list(s.shape), "trainable": True}
                for s in net.param_segments]
    segments += [{"name": s.name, "offset": net.n_params + s.start, "shape": list(s.shape), "trainable": False}
                 for s in net.state_segments]
    meta = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "rng_seed": model.rng_seed,
        "history": model.history,
        "n_params": net.n_params,
        "n_state": net.n_state,
        "segments": segments,
        "blob": "params.bin",
    }
    if extra:
        meta.update(extra)
    (out / "params.bin").write_bytes(blob.tobytes())
    (out / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(model_dir) -> tuple[TrainedModel, dict]:
    d = Path(model_dir)
    meta = json.loads((d / "model.json").read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise SpecError(f"unsupported model format {meta.get('format_version')}")
    spec = ModelSpec.from_dict(meta["spec"])
    blob = np.frombuffer((d / meta["blob"]).read_bytes(), dtype="<f8").astype(float)
    n = meta["n_params"]
    model = TrainedModel(spec, blob[:n].copy(), blob[n:].copy(), meta["history"], meta["rng_seed"])
    return model, meta
