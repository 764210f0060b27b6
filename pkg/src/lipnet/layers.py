"""Layer stacks, the reference 28x28 conv net, a model registry, checkpoints.

A Model maps image batches to class-probability rows (the stack always ends
in softmax). Layer geometry is validated once at build time by composing
shapes through the stack, so a misconfigured stack never reaches forward().
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .ioutil import atomic_write_bytes
from .tensor import (Graph, Tensor, add_channelvec, add_rowvec, conv2d,
                     matmul, relu, reshape, softmax)

LAYER_KINDS = ("conv2d", "dense", "relu", "flatten", "softmax")

CHECKPOINT_MAGIC = b"LIPN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a stack; geometry fields are only read for its kind.

    conv2d uses out_channels/kernel_size/stride/padding, dense uses
    out_features. Input extents are inferred while composing the stack.
    """
    kind: str
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    out_features: int = 0


class Model:
    """An ordered layer stack with named parameters.

    ``params`` iterates in creation order (layer order), which fixes the
    checkpoint record order and the optimizer update order.
    """

    def __init__(self, layers, params, rng_seed, input_shape):
        self.layers = list(layers)
        self.params: dict[str, Tensor] = params
        self.rng_seed = rng_seed
        self.input_shape = tuple(input_shape)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def clone(self) -> "Model":
        params = {name: Tensor(p.data.copy(), requires_grad=True)
                  for name, p in self.params.items()}
        return Model(self.layers, params, self.rng_seed, self.input_shape)


def _compose_shape(shape, spec: LayerSpec, index: int):
    """Output feature shape (ex-batch) of one layer, or raise naming it."""
    where = f"layer {index} ({spec.kind})"
    if spec.kind == "conv2d":
        if len(shape) != 3:
            raise ValueError(f"{where}: expects [C,H,W] input, got {shape}")
        c, h, w = shape
        kh = kw = spec.kernel_size
        hp, wp = h + 2 * spec.padding, w + 2 * spec.padding
        if spec.out_channels < 1 or kh < 1 or spec.stride < 1 or spec.padding < 0:
            raise ValueError(f"{where}: bad geometry {spec}")
        if hp < kh or wp < kw:
            raise ValueError(f"{where}: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
        return (spec.out_channels, (hp - kh) // spec.stride + 1, (wp - kw) // spec.stride + 1)
    if spec.kind == "dense":
        if len(shape) != 1:
            raise ValueError(f"{where}: expects flat input, got {shape} (flatten first)")
        if spec.out_features < 1:
            raise ValueError(f"{where}: out_features must be positive")
        return (spec.out_features,)
    if spec.kind == "relu":
        return shape
    if spec.kind == "flatten":
        return (int(np.prod(shape)),)
    if spec.kind == "softmax":
        if len(shape) != 1:
            raise ValueError(f"{where}: expects flat input, got {shape}")
        return shape
    raise ValueError(f"{where}: unknown layer kind {spec.kind!r}")


def build_model(specs, input_shape, seed: int) -> Model:
    """Compose a stack, validate geometry, He-init parameters from the seed.

    The stack must end with softmax (outputs are probability rows) and
    softmax may not appear anywhere else.
    """
    specs = list(specs)
    if not specs or specs[-1].kind != "softmax":
        raise ValueError("model stack must end with a softmax layer")
    for i, s in enumerate(specs[:-1]):
        if s.kind == "softmax":
            raise ValueError(f"layer {i}: softmax is only valid as the final layer")

    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        out_shape = _compose_shape(shape, spec, i)
        if spec.kind == "conv2d":
            c = shape[0]
            k = spec.kernel_size
            std = math.sqrt(2.0 / (c * k * k))
            w = rng.normal(0.0, std, size=(spec.out_channels, c, k, k))
            params[f"{i}.conv2d.weight"] = Tensor(w, requires_grad=True)
            params[f"{i}.conv2d.bias"] = Tensor(np.zeros(spec.out_channels), requires_grad=True)
        elif spec.kind == "dense":
            fan_in = shape[0]
            std = math.sqrt(2.0 / fan_in)
            w = rng.normal(0.0, std, size=(fan_in, spec.out_features))
            params[f"{i}.dense.weight"] = Tensor(w, requires_grad=True)
            params[f"{i}.dense.bias"] = Tensor(np.zeros(spec.out_features), requires_grad=True)
        shape = out_shape
    return Model(specs, params, seed, input_shape)


def forward(model: Model, x: Tensor, graph: Graph | None = None,
            output: str = "probs") -> Tensor:
    """Run the stack on a batch; rows of the result are probability vectors.

    ``output="logits"`` stops before the final softmax (used by the
    logits-mode quotient, off by default).
    """
    if output not in ("probs", "logits"):
        raise ValueError(f"forward: output must be 'probs' or 'logits', got {output!r}")
    expected = (x.shape[0],) + model.input_shape
    if x.shape != expected:
        raise ValueError(f"forward: input shape {x.shape}, model expects {expected}")
    out = x
    for i, spec in enumerate(model.layers):
        if spec.kind == "conv2d":
            out = conv2d(out, model.params[f"{i}.conv2d.weight"], spec.stride, spec.padding, graph)
            out = add_channelvec(out, model.params[f"{i}.conv2d.bias"], graph)
        elif spec.kind == "dense":
            out = matmul(out, model.params[f"{i}.dense.weight"], graph)
            out = add_rowvec(out, model.params[f"{i}.dense.bias"], graph)
        elif spec.kind == "relu":
            out = relu(out, graph)
        elif spec.kind == "flatten":
            out = reshape(out, (out.shape[0], -1), graph)
        elif spec.kind == "softmax":
            if output == "logits":
                return out
            out = softmax(out, graph)
    return out


def predict(model: Model, x: Tensor):
    """Argmax labels (ties break to the lowest index) and their probabilities."""
    probs = forward(model, x).data
    labels = probs.argmax(axis=1)
    confidence = probs[np.arange(probs.shape[0]), labels]
    return labels, confidence


def build_mnist_model(seed: int) -> Model:
    """The 28x28 grayscale reference net: conv 8@5x5/s2/p2, dense 128, dense 10."""
    specs = [
        LayerSpec("conv2d", out_channels=8, kernel_size=5, stride=2, padding=2),
        LayerSpec("relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", out_features=128),
        LayerSpec("relu"),
        LayerSpec("dense", out_features=10),
        LayerSpec("softmax"),
    ]
    return build_model(specs, (1, 28, 28), seed)


def build_blobs_mlp(seed: int) -> Model:
    """Small dense net for the built-in 2-D two-class blob dataset."""
    specs = [
        LayerSpec("dense", out_features=32),
        LayerSpec("relu"),
        LayerSpec("dense", out_features=2),
        LayerSpec("softmax"),
    ]
    return build_model(specs, (2,), seed)


MODEL_REGISTRY: dict[str, object] = {}


def register_model(name: str, builder) -> None:
    MODEL_REGISTRY[name] = builder


def build_registered(name: str, seed: int) -> Model:
    try:
        builder = MODEL_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(MODEL_REGISTRY))
        raise ValueError(f"unknown model {name!r}; registered: {known}") from None
    return builder(seed)


register_model("mnist_cnn", build_mnist_model)
register_model("blobs_mlp", build_blobs_mlp)


def checkpoint_bytes(model: Model) -> bytes:
    """Serialize named parameters: magic, u32 version, then per-parameter
    records (u32 name length, name, u32 rank, u32 extents, float64 payload),
    all little-endian. Round-trips bit-exactly."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, p in model.params.items():
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_checkpoint(model: Model, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    """Parse a checkpoint file back into an ordered name->array mapping."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint format version {version}, "
                         f"expected {CHECKPOINT_VERSION}")
    off = 8
    out: dict[str, np.ndarray] = {}
    while off < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        extents = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(extents)) if rank else 1
        end = off + 8 * count
        if end > len(blob):
            raise ValueError(f"{path}: truncated checkpoint payload for {name!r}")
        out[name] = np.frombuffer(blob[off:end], dtype="<f8").reshape(extents).copy()
        off = end
    return out


def load_checkpoint(model: Model, path) -> Model:
    """Load parameters into a freshly built model; names and shapes must match."""
    arrays = read_checkpoint(path)
    if set(arrays) != set(model.params):
        missing = sorted(set(model.params) - set(arrays))
        extra = sorted(set(arrays) - set(model.params))
        raise ValueError(f"{path}: parameter names do not match model "
                         f"(missing {missing}, unexpected {extra})")
    for name, arr in arrays.items():
        p = model.params[name]
        if arr.shape != p.data.shape:
            raise ValueError(f"{path}: {name} has shape {arr.shape}, model expects {p.data.shape}")
        p.data = np.ascontiguousarray(arr)
    return model
