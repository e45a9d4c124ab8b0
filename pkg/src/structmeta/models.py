"""Per-task network architectures, parameter sets and losses.

Every task owns a ``ParamSet`` (one flat float64 vector) for the same
``ArchSpec``. The flat layout is layer declaration order, weight before bias,
each row-major: linear weights are ``(out, in)``, conv kernels
``(k, k, C_in, C_out)``. Gradient dot products between tasks rely on this
order being identical across tasks.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import (
    Tensor,
    bce_with_logits,
    conv2d,
    conv_output_size,
    cross_entropy,
    index,
    linear,
    max_pool2d,
    no_grad,
    relu,
    reshape,
    sigmoid,
)
from .errors import DataError, FormatError, ShapeError, SpecError

BINARY = "binary-bce"
MULTICLASS = "multiclass-ce"
_LAYER_KINDS = {"conv", "linear", "relu", "sigmoid", "maxpool", "flatten"}


@dataclass(frozen=True)
class Layer:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    size: int = 0


def Conv(cin: int, cout: int, kernel: int, stride: int = 1, padding: int = 0) -> Layer:
    return Layer("conv", cin, cout, kernel=kernel, stride=stride, padding=padding)


def Linear(din: int, dout: int) -> Layer:
    return Layer("linear", din, dout)


def ReLU() -> Layer:
    return Layer("relu")


def Sigmoid() -> Layer:
    return Layer("sigmoid")


def MaxPool(size: int) -> Layer:
    return Layer("maxpool", size=size)


def Flatten() -> Layer:
    return Layer("flatten")


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple
    input_shape: tuple
    loss: str = BINARY
    final_relu: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self.validate()

    def validate(self) -> tuple:
        """Walk the layer chain; return the output shape or raise ``SpecError``."""
        if self.loss not in (BINARY, MULTICLASS):
            raise SpecError(f"unknown loss kind {self.loss!r}")
        shape = self.input_shape
        for pos, layer in enumerate(self.layers):
            if layer.kind not in _LAYER_KINDS:
                raise SpecError(f"layer {pos}: unknown kind {layer.kind!r}")
            if layer.kind == "conv":
                if len(shape) != 3 or shape[2] != layer.in_dim:
                    raise SpecError(f"layer {pos}: conv expects (H, W, {layer.in_dim}), got {shape}")
                h = conv_output_size(shape[0], layer.kernel, layer.stride, layer.padding)
                w = conv_output_size(shape[1], layer.kernel, layer.stride, layer.padding)
                if h < 1 or w < 1:
                    raise SpecError(f"layer {pos}: conv output collapses to {h}x{w}")
                shape = (h, w, layer.out_dim)
            elif layer.kind == "maxpool":
                if len(shape) != 3 or shape[0] // layer.size < 1 or shape[1] // layer.size < 1:
                    raise SpecError(f"layer {pos}: cannot pool {shape} by {layer.size}")
                shape = (shape[0] // layer.size, shape[1] // layer.size, shape[2])
            elif layer.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif layer.kind == "linear":
                if shape != (layer.in_dim,):
                    raise SpecError(f"layer {pos}: linear expects ({layer.in_dim},), got {shape}")
                shape = (layer.out_dim,)
        if len(shape) != 1:
            raise SpecError(f"network output must be a vector, got {shape}")
        if self.loss == BINARY and shape != (1,):
            raise SpecError("binary architectures need output dimension 1")
        if self.loss == MULTICLASS and shape[0] < 2:
            raise SpecError("multiclass architectures need output dimension >= 2")
        return shape

    @property
    def output_dim(self) -> int:
        return self.validate()[0]

    def param_shapes(self) -> list[tuple[str, tuple]]:
        shapes = []
        for pos, layer in enumerate(self.layers):
            if layer.kind == "conv":
                shapes.append((f"{pos}.weight", (layer.kernel, layer.kernel, layer.in_dim, layer.out_dim)))
                shapes.append((f"{pos}.bias", (layer.out_dim,)))
            elif layer.kind == "linear":
                shapes.append((f"{pos}.weight", (layer.out_dim, layer.in_dim)))
                shapes.append((f"{pos}.bias", (layer.out_dim,)))
        return shapes

    def slices(self) -> dict[str, tuple[slice, tuple]]:
        out, start = {}, 0
        for name, shape in self.param_shapes():
            n = int(np.prod(shape))
            out[name] = (slice(start, start + n), shape)
            start += n
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    def to_dict(self) -> dict:
        return {
            "layers": [asdict(layer) for layer in self.layers],
            "input_shape": list(self.input_shape),
            "loss": self.loss,
            "final_relu": self.final_relu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        try:
            layers = tuple(Layer(**l) for l in d["layers"])
            return cls(layers, tuple(d["input_shape"]), d.get("loss", BINARY), bool(d.get("final_relu", False)))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed architecture description: {exc}") from exc


def task_arch(input_size: int = 128, final_relu: bool = False) -> ArchSpec:
    """Binary task network: conv3-relu-pool4, conv3-relu-pool4, 2450-500-1.

    Kernel 3, stride 1, no padding and 4x4 pooling give 50*7*7 = 2450
    features at 128x128 input.
    """
    h = conv_output_size(conv_output_size(input_size, 3) // 4, 3) // 4
    return ArchSpec(
        (Conv(3, 20, 3), ReLU(), MaxPool(4), Conv(20, 50, 3), ReLU(), MaxPool(4), Flatten(),
         Linear(50 * h * h, 500), ReLU(), Linear(500, 1)),
        (input_size, input_size, 3),
        BINARY,
        final_relu,
    )


def domain_arch(input_size: int = 32, n_classes: int = 10, final_relu: bool = False) -> ArchSpec:
    """10-way domain network: conv5-relu-pool2, conv5(pad 2)-relu-pool2, 2450-500-C.

    At 32x32 input this gives 50*7*7 = 2450 features.
    """
    h = conv_output_size(conv_output_size(input_size, 5) // 2, 5, 1, 2) // 2
    return ArchSpec(
        (Conv(3, 20, 5), ReLU(), MaxPool(2), Conv(20, 50, 5, 1, 2), ReLU(), MaxPool(2), Flatten(),
         Linear(50 * h * h, 500), ReLU(), Linear(500, n_classes)),
        (input_size, input_size, 3),
        MULTICLASS,
        final_relu,
    )


def mlp(sizes, loss: str = BINARY, input_shape=None) -> ArchSpec:
    """Fully connected ReLU network; ``sizes = [in, hidden..., out]``."""
    sizes = list(sizes)
    layers = []
    if input_shape is not None and len(input_shape) > 1:
        layers.append(Flatten())
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Linear(a, b))
        if k < len(sizes) - 2:
            layers.append(ReLU())
    return ArchSpec(tuple(layers), tuple(input_shape) if input_shape is not None else (sizes[0],), loss)


# -- parameter sets -----------------------------------------------------------

_CKPT_HEADER = struct.Struct("<qqq")


@dataclass
class ParamSet:
    task_id: int
    flat: np.ndarray
    seed: int = 0
    arch: ArchSpec | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)

    def __len__(self):
        return self.flat.size

    def __eq__(self, other):
        return (
            isinstance(other, ParamSet)
            and self.task_id == other.task_id
            and self.seed == other.seed
            and np.array_equal(self.flat, other.flat)
        )

    def copy(self, flat=None) -> "ParamSet":
        return replace(self, flat=np.array(self.flat if flat is None else flat, dtype=np.float64, copy=True))

    def views(self) -> dict[str, np.ndarray]:
        if self.arch is None:
            raise SpecError("ParamSet has no architecture attached")
        return {name: self.flat[sl].reshape(shape) for name, (sl, shape) in self.arch.slices().items()}

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(_CKPT_HEADER.pack(self.task_id, self.flat.size, self.seed))
            fh.write(self.flat.astype("<f8").tobytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path, arch: ArchSpec | None = None) -> "ParamSet":
        raw = Path(path).read_bytes()
        if len(raw) < _CKPT_HEADER.size:
            raise FormatError(f"{path}: truncated checkpoint header")
        task_id, count, seed = _CKPT_HEADER.unpack_from(raw)
        payload = raw[_CKPT_HEADER.size:]
        if count < 0 or len(payload) != 8 * count:
            raise FormatError(f"{path}: expected {count} values, found {len(payload) / 8:g}")
        if arch is not None and arch.n_params != count:
            raise FormatError(f"{path}: {count} parameters, architecture needs {arch.n_params}")
        flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        return cls(task_id, flat, seed, arch)


def build(spec: ArchSpec, seed: int, task_id: int = 0) -> ParamSet:
    """Uniform(-a, a) init with a = sqrt(1 / fan_in), weights and biases alike."""
    spec.validate()
    rng = np.random.default_rng(seed)
    chunks = []
    for layer in spec.layers:
        if layer.kind == "conv":
            fan_in = layer.kernel * layer.kernel * layer.in_dim
            shapes = [(layer.kernel, layer.kernel, layer.in_dim, layer.out_dim), (layer.out_dim,)]
        elif layer.kind == "linear":
            fan_in = layer.in_dim
            shapes = [(layer.out_dim, layer.in_dim), (layer.out_dim,)]
        else:
            continue
        a = np.sqrt(1.0 / fan_in)
        for shape in shapes:
            chunks.append(rng.uniform(-a, a, size=int(np.prod(shape))))
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return ParamSet(task_id, flat, seed, spec)


def _as_param_tensor(params) -> Tensor:
    if isinstance(params, Tensor):
        return params
    if isinstance(params, ParamSet):
        return Tensor(params.flat)
    return Tensor(np.asarray(params, dtype=np.float64))


def predict(spec: ArchSpec, params, x) -> Tensor:
    """Logits: shape (n,) for binary architectures, (n, C) for multiclass."""
    theta = _as_param_tensor(params)
    if theta.shape != (spec.n_params,):
        raise ShapeError(f"parameter vector {theta.shape} != ({spec.n_params},)", "params")
    h = x if isinstance(x, Tensor) else Tensor(x)
    if h.shape[1:] != spec.input_shape:
        raise ShapeError(f"input {h.shape[1:]} does not match {spec.input_shape}", "input")
    n = h.shape[0]
    slices = spec.slices()

    def view(name):
        sl, shape = slices[name]
        return reshape(index(theta, sl), shape)

    for pos, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            h = conv2d(h, view(f"{pos}.weight"), view(f"{pos}.bias"), layer.stride, layer.padding)
        elif layer.kind == "linear":
            h = linear(h, view(f"{pos}.weight"), view(f"{pos}.bias"))
        elif layer.kind == "relu":
            h = relu(h)
        elif layer.kind == "sigmoid":
            h = sigmoid(h)
        elif layer.kind == "maxpool":
            h = max_pool2d(h, layer.size)
        elif layer.kind == "flatten":
            h = reshape(h, (n, -1) if n else (0, int(np.prod(h.shape[1:]))))
    if spec.final_relu:
        h = relu(h)
    if spec.loss == BINARY:
        h = reshape(h, (n,))
    return h


def loss(spec: ArchSpec, params, data) -> Tensor:
    """Mean per-sample loss of ``data`` under ``params`` (graph retained)."""
    labels = np.asarray(data.labels)
    if labels.size == 0:
        raise DataError(f"dataset {getattr(data, 'name', '?')!r} is empty")
    logits = predict(spec, params, data.inputs)
    if spec.loss == BINARY:
        if not np.isin(labels, (0, 1)).all():
            raise DataError("binary loss needs labels in {0, 1}")
        return bce_with_logits(logits, labels.astype(np.float64))
    if labels.min() < 0 or labels.max() >= spec.output_dim:
        raise DataError(f"class labels must lie in [0, {spec.output_dim})")
    return cross_entropy(logits, labels)


def predictions(spec: ArchSpec, params, x) -> np.ndarray:
    """Hard class predictions (threshold 0.5 on the sigmoid, or argmax)."""
    with no_grad():
        logits = predict(spec, params, x).data
    if spec.loss == BINARY:
        return (logits > 0).astype(np.int64)
    return logits.argmax(axis=1)
