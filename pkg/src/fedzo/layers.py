"""Layer specifications, shape inference, and stock architectures.

Models are flat lists of LayerSpec values (dense / conv2d / maxpool2d / relu /
flatten). Shapes use channel-first convention: (C, H, W) for images, (F,) for
vectors. Everything is validated up front so forward/backward can assume
compatible shapes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ShapeError


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dims: tuple = ()
    bias: bool = True

    def __post_init__(self):
        if self.kind not in ("dense", "conv2d", "maxpool2d", "relu", "flatten"):
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if any(d <= 0 for d in self.dims):
            raise ShapeError(f"non-positive dim in {self}")


def dense(in_features: int, out_features: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("dense", (in_features, out_features), bias)


def conv2d(in_channels: int, out_channels: int, kernel: int, stride: int = 1,
           bias: bool = True) -> LayerSpec:
    return LayerSpec("conv2d", (in_channels, out_channels, kernel, stride), bias)


def maxpool2d(window: int) -> LayerSpec:
    return LayerSpec("maxpool2d", (window,))


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def infer_shapes(spec: list[LayerSpec], input_shape: tuple) -> list[tuple]:
    """Per-layer output shapes (excluding batch); raises ShapeError on mismatch."""
    shapes = []
    cur = tuple(input_shape)
    for i, layer in enumerate(spec):
        if layer.kind == "dense":
            fin, fout = layer.dims
            if cur != (fin,):
                raise ShapeError(f"layer {i} dense expects ({fin},), got {cur}")
            cur = (fout,)
        elif layer.kind == "conv2d":
            cin, cout, k, s = layer.dims
            if len(cur) != 3 or cur[0] != cin:
                raise ShapeError(f"layer {i} conv2d expects (C={cin},H,W), got {cur}")
            _, h, w = cur
            if h < k or w < k:
                raise ShapeError(f"layer {i} kernel {k} larger than input {cur}")
            cur = (cout, (h - k) // s + 1, (w - k) // s + 1)
        elif layer.kind == "maxpool2d":
            (win,) = layer.dims
            if len(cur) != 3:
                raise ShapeError(f"layer {i} maxpool2d expects (C,H,W), got {cur}")
            c, h, w = cur
            if h % win or w % win:
                raise ShapeError(f"layer {i} pool window {win} must divide {cur}")
            cur = (c, h // win, w // win)
        elif layer.kind == "flatten":
            n = 1
            for d in cur:
                n *= d
            cur = (n,)
        # relu keeps shape
        shapes.append(cur)
    if len(shapes[-1]) != 1:
        raise ShapeError(f"model must end in a flat logits vector, got {shapes[-1]}")
    return shapes


def descriptor_hash(spec: list[LayerSpec], input_shape: tuple) -> bytes:
    """32-byte hash identifying the architecture, used in mask/checkpoint files."""
    text = repr(tuple(input_shape)) + "|" + ";".join(
        f"{l.kind}{l.dims}{int(l.bias)}" for l in spec)
    return hashlib.sha256(text.encode()).digest()


@dataclass(frozen=True)
class ModelDef:
    name: str
    spec: tuple
    input_shape: tuple
    classes: int = field(default=10)


def lenet5(classes: int = 10) -> ModelDef:
    """LeNet-5 style net for 3x32x32 inputs."""
    spec = (
        conv2d(3, 6, 5), relu(), maxpool2d(2),
        conv2d(6, 16, 5), relu(), maxpool2d(2),
        flatten(),
        dense(400, 120), relu(),
        dense(120, 84), relu(),
        dense(84, classes),
    )
    return ModelDef("lenet5", spec, (3, 32, 32), classes)


def synth_conv(classes: int = 10) -> ModelDef:
    """Small conv/dense net (~20k params) for 32-dim synthetic inputs as (2,4,4)."""
    spec = (
        conv2d(2, 16, 3), relu(), flatten(),
        dense(64, 256), relu(),
        dense(256, classes),
    )
    return ModelDef("synth-conv", spec, (2, 4, 4), classes)


def synth_dense(dims: int = 32, classes: int = 10, hidden: int = 64) -> ModelDef:
    """Tiny two-layer MLP for fast tests."""
    spec = (dense(dims, hidden), relu(), dense(hidden, classes))
    return ModelDef("synth-dense", spec, (dims,), classes)


_MODELS = {
    "lenet5": lenet5,
    "synth-conv": synth_conv,
    "synth-dense": synth_dense,
}


def model_by_name(name: str, classes: int = 10, dims: int | None = None) -> ModelDef:
    if name not in _MODELS:
        raise ShapeError(f"unknown model {name!r}; choose from {sorted(_MODELS)}")
    if name == "synth-dense" and dims is not None:
        return synth_dense(dims=dims, classes=classes)
    return _MODELS[name](classes=classes)
