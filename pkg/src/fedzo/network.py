"""Forward passes, reverse-mode gradients, and loss for the small NN engine.

Forward always evaluates the masked parameters W * m. Inference mode keeps no
per-layer history; trace mode retains layer inputs (and pool argmaxes) so a
single reverse sweep can produce the gradient of any scalar objective on the
logits with respect to the flat parameter vector.

Gradients are reported with respect to the *effective* (pre-mask) coordinate:
for active coordinates this is the ordinary gradient, for masked ones it is
the gradient the coordinate would receive inside the masked network, which is
what saliency of currently-zero entries needs. Training code applies the mask
to updates itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError, StaleTraceError
from .layers import LayerSpec, infer_shapes
from .params import Mask, ModelParams


@dataclass
class ForwardTrace:
    """Per-layer inputs retained for the reverse sweep (server-side only)."""
    inputs: list = field(default_factory=list)
    pool_argmax: dict = field(default_factory=dict)
    logits: np.ndarray | None = None
    token: tuple = ()


def _effective_flat(params: ModelParams, mask: Mask | None) -> np.ndarray:
    if mask is None:
        return params.flat
    if mask.n != params.n:
        raise ShapeError(f"mask length {mask.n} != parameter count {params.n}")
    return params.flat * mask.bits


def _layer_params(params: ModelParams, eff: np.ndarray, layer_idx: int):
    w = b = None
    for seg in params.segments:
        if seg.layer == layer_idx:
            if seg.role == "weight":
                w = params.segment_view(eff, seg)
            else:
                b = params.segment_view(eff, seg)
    return w, b


def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (B,C,H,W) -> (B, C*k*k, OH*OW)
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, oh, ow = windows.shape[:4]
    cols = windows.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, oh * ow)
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, x_shape: tuple, k: int, stride: int) -> np.ndarray:
    b, c, h, w = x_shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    d = dcols.reshape(b, c, k, k, oh, ow)
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d[:, :, i, j]
    return dx


def model_forward(spec: list[LayerSpec], params: ModelParams, mask: Mask | None,
                  batch: np.ndarray, mode: str = "inference"):
    """Run the masked network on a batch.

    mode "inference" returns logits; mode "trace" returns (logits, ForwardTrace).
    """
    if mode not in ("inference", "trace"):
        raise ValueError(f"unknown mode {mode!r}")
    shapes = infer_shapes(list(spec), tuple(batch.shape[1:]))
    eff = _effective_flat(params, mask)
    trace = ForwardTrace(token=(id(params), id(mask))) if mode == "trace" else None

    x = np.asarray(batch, dtype=np.float64)
    for i, layer in enumerate(spec):
        if trace is not None:
            trace.inputs.append(x)
        if layer.kind == "dense":
            w, b = _layer_params(params, eff, i)
            x = x @ w.T
            if b is not None:
                x = x + b
        elif layer.kind == "conv2d":
            cin, cout, k, s = layer.dims
            w, b = _layer_params(params, eff, i)
            cols = _im2col(x, k, s)
            out = w.reshape(cout, -1) @ cols
            if b is not None:
                out = out + b[:, None]
            x = out.reshape(x.shape[0], cout, *shapes[i][1:])
        elif layer.kind == "maxpool2d":
            (win,) = layer.dims
            bsz, c, h, w_ = x.shape
            oh, ow = h // win, w_ // win
            xr = x.reshape(bsz, c, oh, win, ow, win).transpose(0, 1, 2, 4, 3, 5)
            xr = xr.reshape(bsz, c, oh, ow, win * win)
            if trace is not None:
                trace.pool_argmax[i] = np.argmax(xr, axis=-1)
            x = xr.max(axis=-1)
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        elif layer.kind == "flatten":
            x = x.reshape(x.shape[0], -1)

    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite activation in forward pass")
    if trace is not None:
        trace.logits = x
        return x, trace
    return x


def backward_logits(spec: list[LayerSpec], params: ModelParams, mask: Mask | None,
                    trace: ForwardTrace, dlogits: np.ndarray) -> np.ndarray:
    """Reverse sweep: flat gradient of sum(dlogits * logits) wrt parameters."""
    if trace.token != (id(params), id(mask)):
        raise StaleTraceError("trace was produced by different params/mask")
    grad = np.zeros(params.n)
    dx = np.asarray(dlogits, dtype=np.float64)
    for i in range(len(spec) - 1, -1, -1):
        layer = spec[i]
        x = trace.inputs[i]
        if layer.kind == "dense":
            for seg in params.segments:
                if seg.layer != i:
                    continue
                gv = params.segment_view(grad, seg)
                if seg.role == "weight":
                    gv += dx.T @ x
                else:
                    gv += dx.sum(axis=0)
            w, _ = _layer_params(params, _effective_flat(params, mask), i)
            dx = dx @ w
        elif layer.kind == "conv2d":
            cin, cout, k, s = layer.dims
            bsz = x.shape[0]
            dflat = dx.reshape(bsz, cout, -1)
            cols = _im2col(x, k, s)
            for seg in params.segments:
                if seg.layer != i:
                    continue
                gv = params.segment_view(grad, seg)
                if seg.role == "weight":
                    gv += np.einsum("bop,bkp->ok", dflat, cols).reshape(seg.shape)
                else:
                    gv += dflat.sum(axis=(0, 2))
            w, _ = _layer_params(params, _effective_flat(params, mask), i)
            dcols = np.einsum("ok,bop->bkp", w.reshape(cout, -1), dflat)
            dx = _col2im(dcols, x.shape, k, s)
        elif layer.kind == "maxpool2d":
            (win,) = layer.dims
            bsz, c, h, w_ = x.shape
            oh, ow = h // win, w_ // win
            dxr = np.zeros((bsz, c, oh, ow, win * win))
            np.put_along_axis(dxr, trace.pool_argmax[i][..., None],
                              dx[..., None], axis=-1)
            dx = dxr.reshape(bsz, c, oh, ow, win, win).transpose(0, 1, 2, 4, 3, 5)
            dx = dx.reshape(bsz, c, h, w_)
        elif layer.kind == "relu":
            dx = dx * (x > 0)
        elif layer.kind == "flatten":
            dx = dx.reshape(x.shape)
    return grad


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-softmax of the labeled class."""
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.max(initial=0) >= logits.shape[1]:
        raise ValueError("label value exceeds class count")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(labels)), labels]))


def cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean CE)/dlogits: (softmax - onehot)/B."""
    labels = np.asarray(labels)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(len(labels)), labels] -= 1.0
    return p / len(labels)


def backward_params(spec: list[LayerSpec], params: ModelParams, mask: Mask | None,
                    trace: ForwardTrace, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy objective wrt the flat parameters."""
    return backward_logits(spec, params, mask, trace,
                           cross_entropy_grad(trace.logits, labels))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


def layer_flop_table(spec: list[LayerSpec], input_shape: tuple):
    """Per-sample (weight MACs-as-flops per layer dict, fixed flops) of a forward.

    Weight terms (2 * MACs) scale with density; bias adds, relu comparisons,
    and pool comparisons are fixed.
    """
    shapes = infer_shapes(list(spec), tuple(input_shape))
    weight_flops = {}
    fixed = 0
    cur = tuple(input_shape)
    for i, layer in enumerate(spec):
        out = shapes[i]
        if layer.kind == "dense":
            fin, fout = layer.dims
            weight_flops[i] = 2 * fin * fout
            if layer.bias:
                fixed += fout
        elif layer.kind == "conv2d":
            cin, cout, k, _ = layer.dims
            pos = out[1] * out[2]
            weight_flops[i] = 2 * cin * k * k * cout * pos
            if layer.bias:
                fixed += cout * pos
        elif layer.kind == "maxpool2d":
            (win,) = layer.dims
            fixed += int(np.prod(out)) * (win * win - 1)
        elif layer.kind == "relu":
            fixed += int(np.prod(out))
        cur = out
    return weight_flops, fixed


def count_forward_flops(spec: list[LayerSpec], input_shape: tuple,
                        density=1.0) -> float:
    """Per-sample forward FLOPs with weight terms scaled by density.

    `density` is a scalar applied to every weight layer, or a dict mapping
    layer index to that layer's surviving weight fraction (e.g. from
    Mask.layer_weight_density()).
    """
    weight_flops, fixed = layer_flop_table(spec, input_shape)
    if isinstance(density, dict):
        total = sum(w * density.get(i, 1.0) for i, w in weight_flops.items())
    else:
        if not 0 < density <= 1:
            raise ValueError(f"density must be in (0, 1], got {density}")
        total = density * sum(weight_flops.values())
    return total + fixed
