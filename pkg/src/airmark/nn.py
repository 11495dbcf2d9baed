"""Minimal tensor/NN core: forward, backward, loss, Adam.

Tensors are plain numpy arrays (shape + row-major buffer). Activations and
parameters use the layouts:

    feature maps   (height, width, channels)
    conv kernels   (kh, kw, in_channels, out_channels)
    dense weights  (in_width, out_width)

Convolution is stride-1/no-padding, pooling is 2x2/stride-2. The forward
kernels accumulate their sums in a fixed canonical order, (dy, dx, ci) for
convolution and input index for dense, so outputs are bit-identical to a
naive nested-loop evaluation in that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputTooSmall, MissingCache, ShapeMismatch

BCE_CLAMP = 1e-7

CONV, POOL, RELU, FLATTEN, DENSE, SIGMOID = (
    "conv",
    "pool",
    "relu",
    "flatten",
    "dense",
    "sigmoid",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_h: int = 0
    kernel_w: int = 0
    filters: int = 0
    units: int = 0


@dataclass
class NetworkSpec:
    """Layer chain plus its parameter tensors, aligned one list per layer."""

    input_shape: tuple[int, int, int]
    layers: list[LayerSpec]
    params: list[list[np.ndarray]] = field(default_factory=list)


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid convolution: out[y,x,co] = bias[co] + sum over (dy,dx,ci)."""
    kh, kw, cin, cout = kernels.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ShapeMismatch(f"input {x.shape} vs kernels {kernels.shape}")
    if bias.shape != (cout,):
        raise ShapeMismatch(f"bias {bias.shape} vs {cout} filters")
    h, w = x.shape[:2]
    if h < kh or w < kw:
        raise ShapeMismatch(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    oh, ow = h - kh + 1, w - kw + 1
    out = np.empty((oh, ow, cout))
    out[:] = bias
    tmp = np.empty_like(out)
    for dy in range(kh):
        for dx in range(kw):
            patch = x[dy : dy + oh, dx : dx + ow]
            for ci in range(cin):
                np.multiply(patch[:, :, ci, None], kernels[dy, dx, ci], out=tmp)
                out += tmp
    return out


def maxpool2d_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pool; trailing odd row/column dropped.

    Also returns the argmax map: for each output cell the winning window
    index 0..3 in row-major window order (first occurrence on ties), which
    the backward pass uses to route gradients.
    """
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeMismatch(f"input {h}x{w} too small to pool")
    oh, ow = h // 2, w // 2
    win = (
        x[: oh * 2, : ow * 2]
        .reshape(oh, 2, ow, 2, c)
        .transpose(0, 2, 4, 1, 3)
        .reshape(oh, ow, c, 4)
    )
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    return out, arg


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """out[j] = bias[j] + sum_i x[i] * weights[i,j], accumulated in i order."""
    if weights.ndim != 2:
        raise ShapeMismatch(f"weights must be 2-D, got {weights.shape}")
    n, m = weights.shape
    if x.shape != (n,):
        raise ShapeMismatch(f"input {x.shape} vs weights {weights.shape}")
    if bias.shape != (m,):
        raise ShapeMismatch(f"bias {bias.shape} vs {m} outputs")
    out = bias.astype(np.float64).copy()
    for i in range(n):
        out += x[i] * weights[i]
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def activations(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == RELU:
        return relu(x)
    if kind == SIGMOID:
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def bce_loss(pred: float, target: float) -> tuple[float, float]:
    """Binary cross-entropy and d(loss)/d(pred), pred clamped to [1e-7, 1-1e-7]."""
    p = min(max(pred, BCE_CLAMP), 1.0 - BCE_CLAMP)
    loss = -(target * math.log(p) + (1.0 - target) * math.log1p(-p))
    dpred = (p - target) / (p * (1.0 - p))
    return loss, dpred


def infer_shapes(input_shape: tuple[int, int, int], layers: list[LayerSpec]) -> list[tuple]:
    """Shape after each layer; raises before any arithmetic could run."""
    shapes: list[tuple] = []
    cur: tuple = tuple(input_shape)
    for spec in layers:
        if spec.kind == CONV:
            if len(cur) != 3:
                raise ShapeMismatch(f"conv needs (H, W, C), got {cur}")
            h, w, _ = cur
            oh, ow = h - spec.kernel_h + 1, w - spec.kernel_w + 1
            if oh < 1 or ow < 1:
                raise InputTooSmall(f"conv output {oh}x{ow} from input {h}x{w}")
            cur = (oh, ow, spec.filters)
        elif spec.kind == POOL:
            if len(cur) != 3:
                raise ShapeMismatch(f"pool needs (H, W, C), got {cur}")
            h, w, c = cur
            oh, ow = h // 2, w // 2
            if oh < 1 or ow < 1:
                raise InputTooSmall(f"pool output {oh}x{ow} from input {h}x{w}")
            cur = (oh, ow, c)
        elif spec.kind == FLATTEN:
            cur = (int(np.prod(cur)),)
        elif spec.kind == DENSE:
            if len(cur) != 1:
                raise ShapeMismatch(f"dense needs a flat input, got {cur}")
            cur = (spec.units,)
        elif spec.kind in (RELU, SIGMOID):
            pass
        else:
            raise ShapeMismatch(f"unknown layer kind {spec.kind!r}")
        shapes.append(cur)
    return shapes


def param_shapes(input_shape: tuple[int, int, int], layers: list[LayerSpec]) -> list[list[tuple]]:
    """Parameter tensor shapes per layer (kernels/weights before biases)."""
    shapes = infer_shapes(input_shape, layers)
    ins = [tuple(input_shape)] + shapes[:-1]
    out: list[list[tuple]] = []
    for spec, shp in zip(layers, ins):
        if spec.kind == CONV:
            out.append([(spec.kernel_h, spec.kernel_w, shp[2], spec.filters), (spec.filters,)])
        elif spec.kind == DENSE:
            out.append([(shp[0], spec.units), (spec.units,)])
        else:
            out.append([])
    return out


def init_weights(net: NetworkSpec, seed: int) -> NetworkSpec:
    """Seeded init: He-uniform conv/hidden dense, Glorot-uniform output dense.

    Weight tensors are drawn in layer order from one generator; biases are
    zero, so the same seed always reproduces the same parameters.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(net.input_shape, net.layers)
    dense_idx = [i for i, l in enumerate(net.layers) if l.kind == DENSE]
    last_dense = dense_idx[-1] if dense_idx else -1
    params: list[list[np.ndarray]] = []
    for i, (spec, shp) in enumerate(zip(net.layers, shapes)):
        if not shp:
            params.append([])
            continue
        w_shape, b_shape = shp
        if spec.kind == CONV:
            fan_in = w_shape[0] * w_shape[1] * w_shape[2]
            limit = math.sqrt(6.0 / fan_in)
        elif i == last_dense:
            fan_in, fan_out = w_shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        else:
            limit = math.sqrt(6.0 / w_shape[0])
        weights = rng.uniform(-limit, limit, size=w_shape)
        params.append([weights, np.zeros(b_shape)])
    net.params = params
    return net


def forward(net: NetworkSpec, x: np.ndarray, keep_cache: bool = False):
    """Run the chain on one (H, W, C) tensor; returns (probability, cache).

    cache is None unless keep_cache; backward() consumes it.
    """
    if x.shape != tuple(net.input_shape):
        raise ShapeMismatch(f"input {x.shape} vs network input {net.input_shape}")
    cache: list | None = [] if keep_cache else None
    a = x
    for spec, params in zip(net.layers, net.params):
        if spec.kind == CONV:
            if keep_cache:
                cache.append(a)
            a = conv2d_forward(a, params[0], params[1])
        elif spec.kind == POOL:
            in_shape = a.shape
            a, arg = maxpool2d_forward(a)
            if keep_cache:
                cache.append((in_shape, arg))
        elif spec.kind == RELU:
            if keep_cache:
                cache.append(a)
            a = relu(a)
        elif spec.kind == FLATTEN:
            if keep_cache:
                cache.append(a.shape)
            a = a.reshape(-1)
        elif spec.kind == DENSE:
            if keep_cache:
                cache.append(a)
            a = dense_forward(a, params[0], params[1])
        elif spec.kind == SIGMOID:
            a = sigmoid(a)
            if keep_cache:
                cache.append(a)
        else:
            raise ShapeMismatch(f"unknown layer kind {spec.kind!r}")
    if a.shape != (1,):
        raise ShapeMismatch(f"network output shape {a.shape}, expected scalar")
    return float(a[0]), cache


def predict(net: NetworkSpec, x: np.ndarray) -> float:
    return forward(net, x)[0]


def backward(net: NetworkSpec, cache: list | None, d_loss: float) -> list[list[np.ndarray]]:
    """Exact reverse-mode gradients for every parameter tensor.

    Max-pool routes into recorded argmax indices, relu gates on forward
    sign, flatten reshapes. Input gradients for the first layer are not
    materialized.
    """
    if cache is None:
        raise MissingCache("forward() must run with keep_cache=True")
    grads: list[list[np.ndarray]] = [[] for _ in net.layers]
    d = np.array([d_loss], dtype=np.float64)
    for li in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[li]
        params = net.params[li]
        c = cache[li]
        if spec.kind == SIGMOID:
            d = d * c * (1.0 - c)
        elif spec.kind == DENSE:
            x_in = c
            grads[li] = [np.outer(x_in, d), d.copy()]
            if li > 0:
                d = params[0] @ d
        elif spec.kind == FLATTEN:
            d = d.reshape(c)
        elif spec.kind == RELU:
            d = d * (c > 0.0)
        elif spec.kind == POOL:
            in_shape, arg = c
            oh, ow, ch = arg.shape
            dx = np.zeros(in_shape)
            ys = 2 * np.arange(oh)[:, None, None] + arg // 2
            xs = 2 * np.arange(ow)[None, :, None] + arg % 2
            cs = np.broadcast_to(np.arange(ch), arg.shape)
            dx[ys, xs, cs] = d
            d = dx
        elif spec.kind == CONV:
            x_in = c
            kernels = params[0]
            kh, kw, cin, cout = kernels.shape
            oh, ow = d.shape[:2]
            dk = np.empty_like(kernels)
            for dy in range(kh):
                for dx_ in range(kw):
                    patch = x_in[dy : dy + oh, dx_ : dx_ + ow]
                    dk[dy, dx_] = np.tensordot(patch, d, axes=([0, 1], [0, 1]))
            db = d.sum(axis=(0, 1))
            grads[li] = [dk, db]
            if li > 0:
                dxin = np.zeros_like(x_in)
                for dy in range(kh):
                    for dx_ in range(kw):
                        dxin[dy : dy + oh, dx_ : dx_ + ow] += d @ kernels[dy, dx_].T
                d = dxin
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators mirroring one flat parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(
    params: list[np.ndarray],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        t=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected update: p <- p - lr * m_hat / (sqrt(v_hat) + eps)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter/gradient/state lengths differ")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
    state.t += 1
    b1t = 1.0 - state.beta1**state.t
    b2t = 1.0 - state.beta2**state.t
    new_params = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        new_params.append(p - state.lr * (m / b1t) / (np.sqrt(v / b2t) + state.eps))
    return new_params, state


def flat_params(net: NetworkSpec) -> list[np.ndarray]:
    """Parameter tensors in layer order, kernels/weights before biases."""
    return [arr for group in net.params for arr in group]


def set_flat_params(net: NetworkSpec, arrays: list[np.ndarray]) -> None:
    it = iter(arrays)
    net.params = [[next(it) for _ in group] for group in net.params]
