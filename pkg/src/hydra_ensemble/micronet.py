"""Small differentiable CNN core on top of numpy.

Tensors are plain ``float64`` numpy arrays.  Image batches use NHWC layout,
``(batch, height, width, channels)``.  Layers are stateless specs; their
parameters live in :attr:`Network.params` (one dict per layer) and every
forward pass returns its own caches, so a network is never mutated by
``forward`` or ``backward``.  Only :func:`adam_step` writes parameters.
"""
from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

LAYER_KINDS = ("dense", "conv2d", "residual_block", "dense_block", "dropout", "relu", "flatten")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LayerSpec:
    """Recipe for one layer.

    Only the fields relevant to ``kind`` are read:

    * ``dense``: ``units``
    * ``conv2d``: ``filters``, ``kernel``, ``stride`` (padding is ``kernel // 2``)
    * ``residual_block``: ``kernel``; two convolutions that keep the channel count
    * ``dense_block``: ``depth`` internal layers of ``growth`` channels each
    * ``dropout``: ``rate`` in ``[0, 1)``
    """

    kind: str
    units: int = 0
    filters: int = 0
    kernel: int = 3
    stride: int = 1
    growth: int = 0
    depth: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and self.units < 1:
            raise ShapeError("dense layer needs units >= 1")
        if self.kind == "conv2d" and (self.filters < 1 or self.stride < 1):
            raise ShapeError("conv2d layer needs filters >= 1 and stride >= 1")
        if self.kind in ("conv2d", "residual_block", "dense_block") and (
            self.kernel < 1 or self.kernel % 2 == 0
        ):
            raise ShapeError(f"{self.kind} kernel must be a positive odd integer")
        if self.kind == "dense_block" and (self.depth < 0 or (self.depth > 0 and self.growth < 1)):
            raise ShapeError("dense_block needs depth >= 0 and growth >= 1")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ShapeError(f"dropout rate must lie in [0, 1), got {self.rate}")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if k == "kind" or v != LayerSpec.__dataclass_fields__[k].default}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def dense(units):
    return LayerSpec("dense", units=units)


def conv2d(filters, kernel=3, stride=1):
    return LayerSpec("conv2d", filters=filters, kernel=kernel, stride=stride)


def residual_block(kernel=3):
    return LayerSpec("residual_block", kernel=kernel)


def dense_block(depth, growth, kernel=3):
    return LayerSpec("dense_block", depth=depth, growth=growth, kernel=kernel)


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def relu():
    return LayerSpec("relu")


def flatten():
    return LayerSpec("flatten")


def _layer_name(index, spec):
    return f"layer {index} ({spec.kind})"


def _conv_out(size, kernel, stride):
    pad = kernel // 2
    return (size + 2 * pad - kernel) // stride + 1


def infer_shapes(input_shape, layers, metadata_width=0):
    """Per-layer ``(input_shape, output_shape)`` pairs, batch dimension omitted.

    The first dense layer's input shape includes the metadata columns.
    Raises :class:`ShapeError` naming the offending layer.
    """
    shape = tuple(int(s) for s in input_shape)
    if len(shape) != 3 or min(shape) < 1:
        raise ShapeError(f"input shape must be (H, W, C) with positive sizes, got {shape}")
    seen_dense = False
    shapes = []
    for i, spec in enumerate(layers):
        name = _layer_name(i, spec)
        if spec.kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"{name}: expects a flat input, got shape {shape}; add a flatten layer")
            if not seen_dense:
                shape = (shape[0] + metadata_width,)
                seen_dense = True
            out = (spec.units,)
        elif spec.kind in ("conv2d", "residual_block", "dense_block"):
            if len(shape) != 3:
                raise ShapeError(f"{name}: expects an (H, W, C) input, got shape {shape}")
            h, w, c = shape
            if spec.kind == "conv2d":
                out = (_conv_out(h, spec.kernel, spec.stride), _conv_out(w, spec.kernel, spec.stride), spec.filters)
                if min(out) < 1:
                    raise ShapeError(f"{name}: output collapses to {out}")
            elif spec.kind == "residual_block":
                out = shape
            else:
                out = (h, w, c + spec.depth * spec.growth)
        elif spec.kind == "flatten":
            out = (int(np.prod(shape)),)
        else:
            out = shape
        shapes.append((shape, out))
        shape = out
    if metadata_width and not seen_dense:
        raise ShapeError("metadata_width > 0 requires at least one dense layer")
    return shapes


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def _init_params(spec, in_shape, rng):
    if spec.kind == "dense":
        n_in = in_shape[0]
        return {"w": _he(rng, (n_in, spec.units), n_in), "b": np.zeros(spec.units)}
    if spec.kind == "conv2d":
        k, c = spec.kernel, in_shape[2]
        return {"w": _he(rng, (k, k, c, spec.filters), k * k * c), "b": np.zeros(spec.filters)}
    if spec.kind == "residual_block":
        k, c = spec.kernel, in_shape[2]
        return {
            "w1": _he(rng, (k, k, c, c), k * k * c),
            "b1": np.zeros(c),
            "w2": _he(rng, (k, k, c, c), k * k * c),
            "b2": np.zeros(c),
        }
    if spec.kind == "dense_block":
        k, c = spec.kernel, in_shape[2]
        params = {}
        for l in range(spec.depth):
            cin = c + l * spec.growth
            params[f"w{l}"] = _he(rng, (k, k, cin, spec.growth), k * k * cin)
            params[f"b{l}"] = np.zeros(spec.growth)
        return params
    return {}


@dataclass
class Network:
    """An ordered stack of layers plus their parameters."""

    input_shape: tuple
    layers: list
    params: list
    metadata_width: int = 0
    _shapes: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = list(self.layers)
        if len(self.params) != len(self.layers):
            raise ShapeError("one parameter dict per layer is required")
        self._shapes = infer_shapes(self.input_shape, self.layers, self.metadata_width)
        for i, (spec, p) in enumerate(zip(self.layers, self.params)):
            expected = _init_params(spec, self._shapes[i][0], _ShapeOnlyRng())
            if set(expected) != set(p):
                raise ShapeError(f"{_layer_name(i, spec)}: parameter names {sorted(p)} != {sorted(expected)}")
            for name, arr in p.items():
                if arr.shape != expected[name].shape:
                    raise ShapeError(
                        f"{_layer_name(i, spec)}: parameter {name} has shape {arr.shape}, "
                        f"expected {expected[name].shape}"
                    )

    @property
    def num_classes(self):
        return self._shapes[-1][1][0] if self._shapes else 0

    @property
    def output_shape(self):
        return self._shapes[-1][1] if self._shapes else self.input_shape

    def num_parameters(self):
        return sum(a.size for p in self.params for a in p.values())

    def copy(self):
        return Network(self.input_shape, list(self.layers), copy.deepcopy(self.params), self.metadata_width)

    def checksum(self):
        """SHA-256 over the layer table and every parameter's float64 bytes."""
        h = hashlib.sha256()
        h.update(repr((self.input_shape, self.metadata_width, [s.to_dict() for s in self.layers])).encode())
        for p in self.params:
            for name in sorted(p):
                h.update(name.encode())
                h.update(np.ascontiguousarray(p[name], dtype="<f8").tobytes())
        return h.hexdigest()


class _ShapeOnlyRng:
    """Stand-in generator used to compute expected parameter shapes cheaply."""

    def standard_normal(self, shape):
        return np.zeros(shape)


def build_network(input_shape, layers, metadata_width=0, seed=0):
    """Create a network with seeded He-normal weights and zero biases."""
    shapes = infer_shapes(input_shape, layers, metadata_width)
    rng = np.random.default_rng(seed)
    params = [_init_params(spec, s_in, rng) for spec, (s_in, _) in zip(layers, shapes)]
    return Network(tuple(input_shape), list(layers), params, metadata_width)


# ---------------------------------------------------------------------------
# primitive kernels
# ---------------------------------------------------------------------------


def _window(i, j, stride, ho, wo):
    return (slice(None), slice(i, i + stride * (ho - 1) + 1, stride), slice(j, j + stride * (wo - 1) + 1, stride))


def _conv_forward(x, w, b, stride=1):
    k = w.shape[0]
    pad = k // 2
    n, h, wd, c = x.shape
    if w.shape[2] != c:
        raise ShapeError(f"convolution expects {w.shape[2]} input channels, got {c}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    ho, wo = _conv_out(h, k, stride), _conv_out(wd, k, stride)
    out = np.empty((n, ho, wo, w.shape[3]))
    out[...] = b
    for i in range(k):
        for j in range(k):
            out += xp[_window(i, j, stride, ho, wo)] @ w[i, j]
    return out, (xp, x.shape, stride)


def _conv_backward(w, cache, dout):
    xp, x_shape, stride = cache
    k = w.shape[0]
    pad = k // 2
    _, ho, wo, cout = dout.shape
    cin = w.shape[2]
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    d2 = dout.reshape(-1, cout)
    for i in range(k):
        for j in range(k):
            win = _window(i, j, stride, ho, wo)
            dw[i, j] = xp[win].reshape(-1, cin).T @ d2
            dxp[win] += dout @ w[i, j].T
    db = d2.sum(axis=0)
    h, wd = x_shape[1], x_shape[2]
    dx = dxp[:, pad : pad + h, pad : pad + wd, :] if pad else dxp
    return dx, dw, db


def residual_block_forward(params, x):
    """``F(x) + x`` with ``F`` = conv -> relu -> conv, for one batch ``x`` (NHWC)."""
    out, _ = _residual_forward(params, x)
    return out


def _residual_forward(params, x):
    h1, c1 = _conv_forward(x, params["w1"], params["b1"])
    a1 = np.maximum(h1, 0.0)
    f, c2 = _conv_forward(a1, params["w2"], params["b2"])
    if f.shape != x.shape:
        raise ShapeError(f"residual branch changed shape {x.shape} -> {f.shape}")
    return f + x, (c1, h1, c2)


def _residual_backward(params, cache, dout):
    c1, h1, c2 = cache
    da1, dw2, db2 = _conv_backward(params["w2"], c2, dout)
    dh1 = da1 * (h1 > 0)
    dx, dw1, db1 = _conv_backward(params["w1"], c1, dh1)
    return dx + dout, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def dense_block_forward(params, x, trace=None):
    """Densely connected block: internal layer ``l`` sees ``[x, y_1, ..., y_{l-1}]``.

    Each internal layer is relu -> conv producing ``growth`` channels; the
    block returns the concatenation of ``x`` and every ``y_l``.  If ``trace``
    is a list, the exact input handed to each internal layer is appended to it.
    """
    out, _ = _dense_block_forward(params, x, trace)
    return out


def _dense_block_forward(params, x, trace=None):
    depth = len(params) // 2
    feats = x
    caches = []
    for l in range(depth):
        w = params[f"w{l}"]
        if w.shape[2] != feats.shape[3]:
            raise ShapeError(
                f"dense block layer {l} expects {w.shape[2]} channels, concatenation has {feats.shape[3]}"
            )
        if trace is not None:
            trace.append(feats)
        a = np.maximum(feats, 0.0)
        y, cc = _conv_forward(a, w, params[f"b{l}"])
        caches.append((feats, cc))
        feats = np.concatenate([feats, y], axis=3)
    return feats, caches


def _dense_block_backward(params, caches, dout):
    dfull = dout.copy()
    grads = {}
    for l in range(len(caches) - 1, -1, -1):
        feats, cc = caches[l]
        c = feats.shape[3]
        w = params[f"w{l}"]
        dy = dfull[..., c : c + w.shape[3]]
        da, grads[f"w{l}"], grads[f"b{l}"] = _conv_backward(w, cc, dy)
        dfull[..., :c] += da * (feats > 0)
    c_in = caches[0][0].shape[3] if caches else dout.shape[3]
    return dfull[..., :c_in], grads


def _layer_forward(spec, p, x, train, rng):
    kind = spec.kind
    if kind == "dense":
        return x @ p["w"] + p["b"], x
    if kind == "conv2d":
        return _conv_forward(x, p["w"], p["b"], spec.stride)
    if kind == "relu":
        return np.maximum(x, 0.0), x
    if kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if kind == "dropout":
        if not train or spec.rate == 0.0:
            return x, None
        mask = (rng.random(x.shape) >= spec.rate) / (1.0 - spec.rate)
        return x * mask, mask
    if kind == "residual_block":
        return _residual_forward(p, x)
    if kind == "dense_block":
        return _dense_block_forward(p, x)
    raise ShapeError(f"unknown layer kind {kind!r}")


def _layer_backward(spec, p, cache, dout):
    kind = spec.kind
    if kind == "dense":
        x = cache
        return dout @ p["w"].T, {"w": x.T @ dout, "b": dout.sum(axis=0)}
    if kind == "conv2d":
        dx, dw, db = _conv_backward(p["w"], cache, dout)
        return dx, {"w": dw, "b": db}
    if kind == "relu":
        return dout * (cache > 0), {}
    if kind == "flatten":
        return dout.reshape(cache), {}
    if kind == "dropout":
        return (dout if cache is None else dout * cache), {}
    if kind == "residual_block":
        return _residual_backward(p, cache, dout)
    if kind == "dense_block":
        return _dense_block_backward(p, cache, dout)
    raise ShapeError(f"unknown layer kind {kind!r}")


def _require_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {where}")


# ---------------------------------------------------------------------------
# network-level passes
# ---------------------------------------------------------------------------


def _as_batch(net, pixels, metadata):
    pixels = np.asarray(pixels, dtype=np.float64)
    single = pixels.ndim == 3
    if single:
        pixels = pixels[None]
    if pixels.ndim != 4 or pixels.shape[1:] != net.input_shape:
        raise ShapeError(f"layer 0 (input): expected pixels of shape {net.input_shape}, got {pixels.shape}")
    n = pixels.shape[0]
    if net.metadata_width:
        if metadata is None:
            raise ShapeError(f"network expects a metadata vector of width {net.metadata_width}")
        metadata = np.asarray(metadata, dtype=np.float64)
        if metadata.ndim == 1:
            metadata = metadata[None]
        if metadata.shape != (n, net.metadata_width):
            raise ShapeError(
                f"metadata must have shape ({n}, {net.metadata_width}), got {metadata.shape}"
            )
    else:
        metadata = None
    return pixels, metadata, single


def _run_forward(net, pixels, metadata, train_mode, rng_seed):
    rng = np.random.default_rng(rng_seed) if train_mode else None
    x = pixels
    caches = []
    seen_dense = False
    for i, (spec, p) in enumerate(zip(net.layers, net.params)):
        if spec.kind == "dense" and not seen_dense:
            seen_dense = True
            if metadata is not None:
                x = np.concatenate([x, metadata], axis=1)
        if x.shape[1:] != net._shapes[i][0]:
            raise ShapeError(f"{_layer_name(i, spec)}: expected input {net._shapes[i][0]}, got {x.shape[1:]}")
        x, cache = _layer_forward(spec, p, x, train_mode, rng)
        _require_finite(x, f"forward pass of {_layer_name(i, spec)}")
        caches.append(cache)
    return x, caches


def forward(net, pixels, metadata=None, train_mode=False, rng_seed=0):
    """Raw class scores (pre-softmax).

    ``pixels`` is one ``(H, W, C)`` image or an ``(N, H, W, C)`` batch; the
    result is ``(m,)`` or ``(N, m)`` accordingly.  In train mode the dropout
    masks are drawn from ``numpy.random.default_rng(rng_seed)``.
    """
    pixels, metadata, single = _as_batch(net, pixels, metadata)
    scores, _ = _run_forward(net, pixels, metadata, train_mode, rng_seed)
    return scores[0] if single else scores


def _log_softmax(scores):
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(scores, target, class_weight=1.0):
    """``-class_weight * log(softmax(scores)[target])`` for one score vector."""
    scores = np.asarray(scores, dtype=np.float64)
    _require_finite(scores, "softmax_cross_entropy input")
    return float(-class_weight * _log_softmax(scores)[int(target)])


def weighted_cross_entropy(scores, targets, class_weights=None):
    """Batch loss ``mean_n w[y_n] * CE_n`` and its gradient w.r.t. ``scores``."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n, m = scores.shape
    if targets.shape != (n,) or targets.min(initial=0) < 0 or targets.max(initial=0) >= m:
        raise ShapeError(f"targets must be {n} labels in [0, {m})")
    w = np.ones(m) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (m,):
        raise ShapeError(f"class_weights must have length {m}, got {w.shape}")
    logp = _log_softmax(scores)
    rows = np.arange(n)
    sw = w[targets]
    loss = float(-(sw * logp[rows, targets]).sum() / n)
    dscores = np.exp(logp)
    dscores[rows, targets] -= 1.0
    dscores *= (sw / n)[:, None]
    return loss, dscores


def backward(net, pixels, metadata, targets, class_weights=None, train_mode=True, rng_seed=0):
    """Weighted softmax cross-entropy and its gradient for every parameter.

    Returns ``(loss, grads)`` where ``grads`` mirrors ``net.params``.  The
    dropout masks match ``forward(..., train_mode, rng_seed)`` exactly.
    """
    pixels, metadata, single = _as_batch(net, pixels, metadata)
    targets = np.atleast_1d(np.asarray(targets))
    scores, caches = _run_forward(net, pixels, metadata, train_mode, rng_seed)
    loss, d = weighted_cross_entropy(scores, targets, class_weights)
    grads = [None] * len(net.layers)
    first_dense = next((i for i, s in enumerate(net.layers) if s.kind == "dense"), None)
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        d, g = _layer_backward(spec, net.params[i], caches[i], d)
        where = f"backward pass of {_layer_name(i, spec)}"
        _require_finite(d, where)
        for arr in g.values():
            _require_finite(arr, where)
        grads[i] = g
        if i == first_dense and metadata is not None:
            d = d[:, : d.shape[1] - net.metadata_width]
    return loss, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            [{k: np.zeros_like(a) for k, a in p.items()} for p in params],
            [{k: np.zeros_like(a) for k, a in p.items()} for p in params],
        )


def adam_step(params, grads, state, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update, applied in place.

    Returns ``(params, state)`` for convenience.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        for k, arr in p.items():
            gk = g[k]
            if gk.shape != arr.shape or m[k].shape != arr.shape:
                raise ShapeError(f"gradient shape {gk.shape} does not match parameter {k} {arr.shape}")
            m[k] *= beta1
            m[k] += (1.0 - beta1) * gk
            v[k] *= beta2
            v[k] += (1.0 - beta2) * gk * gk
            arr -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
    return params, state
