"""Layer-wise reverse-mode differentiation for the layer vocabulary used by the
CNN / LSTM / GRU classifiers.

Every layer implements ``forward(x, params) -> (y, cache)`` and
``backward(dy, cache, params, need_dx) -> (dx, grads)``.  Tensors are plain
float64 numpy arrays, batch first.  A model owns one flat parameter vector;
layers read views into it, so gradients come back as one flat vector too.
"""
from __future__ import annotations

import math
import os

import numpy as np

from . import _accel
from .errors import NonFiniteOutput, ShapeMismatch

__all__ = [
    "Layer",
    "Conv2D",
    "MaxPool2D",
    "GlobalAvgPool",
    "Dense",
    "LSTM",
    "GRU",
    "ReLU",
    "Softmax",
    "Residual",
    "AddChannel",
    "TimeMajor",
    "Network",
    "forward",
    "logits",
    "loss_and_param_gradients",
    "input_gradient",
    "logit_gradients",
    "fd_check",
]

DEBUG = os.environ.get("RFADV_DEBUG", "0") == "1"


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _glorot(rng, shape, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Layer:
    kind = "layer"

    def build(self, in_shape):
        """Record shapes; return the output shape (without batch)."""
        self.in_shape = tuple(in_shape)
        self.out_shape = self.in_shape
        return self.out_shape

    def param_shapes(self) -> list[tuple]:
        return []

    def init_params(self, rng) -> list[np.ndarray]:
        return []

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dy, cache, params, need_dx=True):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}


class AddChannel(Layer):
    """(B, F, T) spectrogram -> (B, F, T, 1) image."""

    kind = "reshape"

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = self.in_shape + (1,)
        return self.out_shape

    def forward(self, x, params):
        return x[..., None], None

    def backward(self, dy, cache, params, need_dx=True):
        return dy[..., 0], []


class TimeMajor(Layer):
    """(B, F, T) spectrogram -> (B, T, F) sequence of frequency vectors."""

    kind = "reshape"

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = (in_shape[1], in_shape[0])
        return self.out_shape

    def forward(self, x, params):
        return np.ascontiguousarray(x.transpose(0, 2, 1)), None

    def backward(self, dy, cache, params, need_dx=True):
        return dy.transpose(0, 2, 1), []


class Conv2D(Layer):
    """Stride-1 "same" convolution, NHWC, zero padding."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel: int):
        self.filters, self.kernel = int(filters), int(kernel)

    def build(self, in_shape):
        h, w, c = in_shape
        self.in_shape, self.cin = tuple(in_shape), c
        self.out_shape = (h, w, self.filters)
        return self.out_shape

    def param_shapes(self):
        return [(self.kernel * self.kernel * self.cin, self.filters), (self.filters,)]

    def init_params(self, rng):
        k2 = self.kernel * self.kernel
        w = _glorot(rng, self.param_shapes()[0], k2 * self.cin, k2 * self.filters)
        return [w, np.zeros(self.filters)]

    def forward(self, x, params):
        w, b = params
        bsz, h, wd, c = x.shape
        cols = x.reshape(-1, c) if self.kernel == 1 else _accel.im2col(x, self.kernel)
        y = cols @ w + b
        return y.reshape(bsz, h, wd, self.filters), (cols, x.shape)

    def backward(self, dy, cache, params, need_dx=True):
        w, _ = params
        cols, xshape = cache
        d2 = dy.reshape(-1, self.filters)
        dw = cols.T @ d2
        db = d2.sum(axis=0)
        dx = None
        if need_dx:
            dcols = d2 @ w.T
            dx = dcols.reshape(xshape) if self.kernel == 1 else _accel.col2im(dcols, xshape, self.kernel)
        return dx, [dw, db]

    def spec(self):
        return {"kind": self.kind, "filters": self.filters, "kernel": self.kernel, "stride": 1, "padding": "same"}


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def build(self, in_shape):
        h, w, c = in_shape
        self.in_shape = tuple(in_shape)
        self.out_shape = (h // 2, w // 2, c)
        return self.out_shape

    def forward(self, x, params):
        y, idx = _accel.maxpool2x2_forward(x)
        return y, (idx, x.shape)

    def backward(self, dy, cache, params, need_dx=True):
        idx, xshape = cache
        return _accel.maxpool2x2_backward(np.ascontiguousarray(dy), idx, xshape), []

    def spec(self):
        return {"kind": self.kind, "pool": 2, "stride": 2}


class GlobalAvgPool(Layer):
    """Mean over every axis except batch and the last (channels / features)."""

    kind = "global_avgpool"

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = (in_shape[-1],)
        return self.out_shape

    def forward(self, x, params):
        axes = tuple(range(1, x.ndim - 1))
        return x.mean(axis=axes), x.shape

    def backward(self, dy, cache, params, need_dx=True):
        xshape = cache
        count = int(np.prod(xshape[1:-1]))
        shape = (xshape[0],) + (1,) * (len(xshape) - 2) + (xshape[-1],)
        return np.broadcast_to(dy.reshape(shape) / count, xshape).copy(), []


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int):
        self.units = int(units)

    def build(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"dense expects a flat input, got {in_shape}")
        self.in_shape, self.out_shape = tuple(in_shape), (self.units,)
        return self.out_shape

    def param_shapes(self):
        return [(self.in_shape[0], self.units), (self.units,)]

    def init_params(self, rng):
        return [_glorot(rng, self.param_shapes()[0], self.in_shape[0], self.units), np.zeros(self.units)]

    def forward(self, x, params):
        w, b = params
        return x @ w + b, x

    def backward(self, dy, cache, params, need_dx=True):
        w, _ = params
        x = cache
        return (dy @ w.T if need_dx else None), [x.T @ dy, dy.sum(axis=0)]

    def spec(self):
        return {"kind": self.kind, "units": self.units}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, params, need_dx=True):
        return dy * cache, []


class Softmax(Layer):
    """Terminal layer; training and attacks use the fused log-softmax path."""

    kind = "softmax"

    def forward(self, x, params):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return p, p

    def backward(self, dy, cache, params, need_dx=True):
        p = cache
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True)), []


class LSTM(Layer):
    """Full-sequence LSTM, gate order (i, f, g, o); returns all hidden states."""

    kind = "lstm"

    def __init__(self, units: int):
        self.units = int(units)

    def build(self, in_shape):
        t, f = in_shape
        self.in_shape, self.features = tuple(in_shape), f
        self.out_shape = (t, self.units)
        return self.out_shape

    def param_shapes(self):
        u = self.units
        return [(self.features, 4 * u), (u, 4 * u), (4 * u,)]

    def init_params(self, rng):
        u = self.units
        wx = _glorot(rng, (self.features, 4 * u), self.features, 4 * u)
        wh = _glorot(rng, (u, 4 * u), u, 4 * u)
        b = np.zeros(4 * u)
        b[u : 2 * u] = 1.0  # forget gate
        return [wx, wh, b]

    def forward(self, x, params):
        wx, wh, b = params
        bsz, t_len, f = x.shape
        u = self.units
        xw = (x.reshape(-1, f) @ wx + b).reshape(bsz, t_len, 4 * u)
        hs = np.zeros((bsz, t_len + 1, u))
        cs = np.zeros((bsz, t_len + 1, u))
        gates = np.empty((bsz, t_len, 4 * u))
        tanh_c = np.empty((bsz, t_len, u))
        for t in range(t_len):
            a = xw[:, t] + hs[:, t] @ wh
            ifo = _sigmoid(a[:, np.r_[0 : 2 * u, 3 * u : 4 * u]])
            i, fg, o = ifo[:, :u], ifo[:, u : 2 * u], ifo[:, 2 * u :]
            g = np.tanh(a[:, 2 * u : 3 * u])
            cs[:, t + 1] = fg * cs[:, t] + i * g
            tc = np.tanh(cs[:, t + 1])
            hs[:, t + 1] = o * tc
            gates[:, t, :u], gates[:, t, u : 2 * u] = i, fg
            gates[:, t, 2 * u : 3 * u], gates[:, t, 3 * u :] = g, o
            tanh_c[:, t] = tc
        return hs[:, 1:].copy(), (x, hs, cs, gates, tanh_c)

    def backward(self, dy, cache, params, need_dx=True):
        wx, wh, _ = params
        x, hs, cs, gates, tanh_c = cache
        bsz, t_len, f = x.shape
        u = self.units
        da_all = np.empty((bsz, t_len, 4 * u))
        dh = np.zeros((bsz, u))
        dc = np.zeros((bsz, u))
        for t in range(t_len - 1, -1, -1):
            i, fg = gates[:, t, :u], gates[:, t, u : 2 * u]
            g, o = gates[:, t, 2 * u : 3 * u], gates[:, t, 3 * u :]
            dh = dh + dy[:, t]
            tc = tanh_c[:, t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cs[:, t]
            da = da_all[:, t]
            da[:, :u] = di * i * (1.0 - i)
            da[:, u : 2 * u] = df * fg * (1.0 - fg)
            da[:, 2 * u : 3 * u] = dg * (1.0 - g * g)
            da[:, 3 * u :] = do * o * (1.0 - o)
            dc = dc * fg
            dh = da @ wh.T
        da2 = da_all.reshape(-1, 4 * u)
        dwx = x.reshape(-1, f).T @ da2
        dwh = hs[:, :-1].reshape(-1, u).T @ da2
        db = da2.sum(axis=0)
        dx = (da2 @ wx.T).reshape(x.shape) if need_dx else None
        return dx, [dwx, dwh, db]

    def spec(self):
        return {"kind": self.kind, "units": self.units}


class GRU(Layer):
    """Full-sequence GRU with the reset gate applied after the recurrent
    matmul; gate order (z, r, n)."""

    kind = "gru"

    def __init__(self, units: int):
        self.units = int(units)

    def build(self, in_shape):
        t, f = in_shape
        self.in_shape, self.features = tuple(in_shape), f
        self.out_shape = (t, self.units)
        return self.out_shape

    def param_shapes(self):
        u = self.units
        return [(self.features, 3 * u), (u, 3 * u), (3 * u,), (3 * u,)]

    def init_params(self, rng):
        u = self.units
        wx = _glorot(rng, (self.features, 3 * u), self.features, 3 * u)
        wh = _glorot(rng, (u, 3 * u), u, 3 * u)
        return [wx, wh, np.zeros(3 * u), np.zeros(3 * u)]

    def forward(self, x, params):
        wx, wh, bx, bh = params
        bsz, t_len, f = x.shape
        u = self.units
        xw = (x.reshape(-1, f) @ wx + bx).reshape(bsz, t_len, 3 * u)
        hs = np.zeros((bsz, t_len + 1, u))
        zr_all = np.empty((bsz, t_len, 2 * u))
        n_all = np.empty((bsz, t_len, u))
        hn_all = np.empty((bsz, t_len, u))
        for t in range(t_len):
            hw = hs[:, t] @ wh + bh
            zr = _sigmoid(xw[:, t, : 2 * u] + hw[:, : 2 * u])
            z, r = zr[:, :u], zr[:, u:]
            hn = hw[:, 2 * u :]
            n = np.tanh(xw[:, t, 2 * u :] + r * hn)
            hs[:, t + 1] = z * hs[:, t] + (1.0 - z) * n
            zr_all[:, t], n_all[:, t], hn_all[:, t] = zr, n, hn
        return hs[:, 1:].copy(), (x, hs, zr_all, n_all, hn_all)

    def backward(self, dy, cache, params, need_dx=True):
        wx, wh, _, _ = params
        x, hs, zr_all, n_all, hn_all = cache
        bsz, t_len, f = x.shape
        u = self.units
        dxa = np.empty((bsz, t_len, 3 * u))
        dha = np.empty((bsz, t_len, 3 * u))
        dh = np.zeros((bsz, u))
        for t in range(t_len - 1, -1, -1):
            z, r = zr_all[:, t, :u], zr_all[:, t, u:]
            n, hn = n_all[:, t], hn_all[:, t]
            h_prev = hs[:, t]
            dh = dh + dy[:, t]
            dz = dh * (h_prev - n)
            dan = dh * (1.0 - z) * (1.0 - n * n)
            dar = dan * hn * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            dxa[:, t, :u], dxa[:, t, u : 2 * u], dxa[:, t, 2 * u :] = daz, dar, dan
            dha[:, t, :u], dha[:, t, u : 2 * u], dha[:, t, 2 * u :] = daz, dar, dan * r
            dh = dh * z + dha[:, t] @ wh.T
        dx2 = dxa.reshape(-1, 3 * u)
        dh2 = dha.reshape(-1, 3 * u)
        dwx = x.reshape(-1, f).T @ dx2
        dwh = hs[:, :-1].reshape(-1, u).T @ dh2
        dx = (dx2 @ wx.T).reshape(x.shape) if need_dx else None
        return dx, [dwx, dwh, dx2.sum(axis=0), dh2.sum(axis=0)]

    def spec(self):
        return {"kind": self.kind, "units": self.units, "reset_after": True}


class Residual(Layer):
    """``body(x) + skip(x)``, where skip is identity or a 1x1 projection."""

    kind = "add"

    def __init__(self, body: list[Layer], projection: Layer | None = None):
        self.body, self.projection = list(body), projection

    def build(self, in_shape):
        self.in_shape = tuple(in_shape)
        s = self.in_shape
        for layer in self.body:
            s = layer.build(s)
        if self.projection is not None:
            ps = self.projection.build(self.in_shape)
        else:
            ps = self.in_shape
        if tuple(ps) != tuple(s):
            raise ShapeMismatch(f"skip path {ps} does not match body output {s}")
        self.out_shape = tuple(s)
        return self.out_shape

    def _parts(self):
        parts = list(self.body)
        if self.projection is not None:
            parts.append(self.projection)
        return parts

    def param_shapes(self):
        return [s for p in self._parts() for s in p.param_shapes()]

    def init_params(self, rng):
        return [a for p in self._parts() for a in p.init_params(rng)]

    def _split(self, params):
        out, k = [], 0
        for p in self._parts():
            n = len(p.param_shapes())
            out.append(params[k : k + n])
            k += n
        return out

    def forward(self, x, params):
        split = self._split(params)
        h, caches = x, []
        for layer, ps in zip(self.body, split):
            h, c = layer.forward(h, ps)
            caches.append(c)
        if self.projection is not None:
            s, pc = self.projection.forward(x, split[-1])
        else:
            s, pc = x, None
        return h + s, (caches, pc)

    def backward(self, dy, cache, params, need_dx=True):
        caches, pc = cache
        split = self._split(params)
        grads = []
        d = dy
        for layer, ps, c in reversed(list(zip(self.body, split, caches))):
            d, g = layer.backward(d, c, ps, True)
            grads = g + grads
        if self.projection is not None:
            ds, gp = self.projection.backward(dy, pc, split[-1], True)
            grads = grads + gp
        else:
            ds = dy
        return d + ds, grads

    def spec(self):
        return {
            "kind": self.kind,
            "body": [layer.spec() for layer in self.body],
            "projection": self.projection.spec() if self.projection is not None else None,
        }


class Network:
    """A built layer stack with a flat parameter vector."""

    def __init__(self, layers: list[Layer], input_shape, params: np.ndarray | None = None, rng=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        s = self.input_shape
        for layer in self.layers:
            s = layer.build(s)
        self.output_shape = s
        self._shapes = [layer.param_shapes() for layer in self.layers]
        self.n_params = int(sum(int(np.prod(sh)) for shapes in self._shapes for sh in shapes))
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            flat = [a.ravel() for layer in self.layers for a in layer.init_params(rng)]
            params = np.concatenate(flat) if flat else np.zeros(0)
        self.set_params(params)

    def set_params(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params
        self._views = []
        k = 0
        for shapes in self._shapes:
            vs = []
            for sh in shapes:
                n = int(np.prod(sh))
                vs.append(params[k : k + n].reshape(sh))
                k += n
            self._views.append(vs)

    def run(self, x, upto=None):
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"input shape {x.shape[1:]} != model input {self.input_shape}")
        caches = []
        layers = self.layers if upto is None else self.layers[:upto]
        for layer, ps in zip(layers, self._views):
            x, c = layer.forward(x, ps)
            if DEBUG and not np.all(np.isfinite(x)):
                raise NonFiniteOutput(f"non-finite activation after {layer.kind}")
            caches.append(c)
        return x, caches

    def backprop(self, dy, caches, need_dx=True, n_layers=None):
        n = len(caches) if n_layers is None else n_layers
        grads = [None] * n
        d = dy
        for li in range(n - 1, -1, -1):
            layer = self.layers[li]
            d, g = layer.backward(d, caches[li], self._views[li], need_dx or li > 0)
            grads[li] = g
        return d, grads

    def flatten_grads(self, grads):
        out = np.zeros(self.n_params)
        k = 0
        for li, shapes in enumerate(self._shapes):
            for j, sh in enumerate(shapes):
                n = int(np.prod(sh))
                if grads[li] is not None:
                    out[k : k + n] = grads[li][j].ravel()
                k += n
        return out

    @property
    def head(self) -> int:
        """Number of layers producing logits (the trailing softmax excluded)."""
        return len(self.layers) - 1 if self.layers and isinstance(self.layers[-1], Softmax) else len(self.layers)


def _net(model) -> Network:
    return model.net if hasattr(model, "net") else model


def _batched(x, net):
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == net.input_shape
    return (x[None] if single else x), single


def logits(model, x):
    net = _net(model)
    xb, single = _batched(x, net)
    z, _ = net.run(xb, upto=net.head)
    return z[0] if single else z


def forward(model, x):
    """Class probabilities for one input or a batch."""
    net = _net(model)
    xb, single = _batched(x, net)
    z, _ = net.run(xb, upto=net.head)
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    if not np.all(np.isfinite(p)):
        raise NonFiniteOutput("non-finite class probabilities")
    return p[0] if single else p


def _xent(z, labels):
    m = z.max(axis=-1, keepdims=True)
    lse = (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[:, 0]
    loss = lse - z[np.arange(len(labels)), labels]
    p = np.exp(z - lse[:, None])
    return loss, p


def loss_and_param_gradients(model, batch, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the flat parameters."""
    net = _net(model)
    labels = np.asarray(labels, dtype=np.int64)
    if len(batch) == 0:
        raise ShapeMismatch("empty batch")
    if len(labels) != len(batch):
        raise ShapeMismatch("batch and labels differ in length")
    z, caches = net.run(batch, upto=net.head)
    loss, p = _xent(z, labels)
    dz = p
    dz[np.arange(len(labels)), labels] -= 1.0
    dz /= len(labels)
    _, grads = net.backprop(dz, caches, need_dx=False)
    return float(loss.mean()), net.flatten_grads(grads)


def input_gradient(model, x, label, mode: str = "true-label"):
    """d cross-entropy(f(x), label) / dx.  ``mode`` only names which label is
    passed (ground truth or attack target); the derivative is the same."""
    if mode not in ("true-label", "target-label"):
        raise ValueError(f"unknown mode {mode!r}")
    net = _net(model)
    xb, single = _batched(x, net)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.size == 1 and len(xb) > 1:
        labels = np.full(len(xb), labels[0])
    z, caches = net.run(xb, upto=net.head)
    _, p = _xent(z, labels)
    dz = p
    dz[np.arange(len(labels)), labels] -= 1.0
    dx, _ = net.backprop(dz, caches, need_dx=True)
    return dx[0] if single else dx


def loss_value(model, x, label):
    net = _net(model)
    xb, single = _batched(x, net)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.size == 1 and len(xb) > 1:
        labels = np.full(len(xb), labels[0])
    z, _ = net.run(xb, upto=net.head)
    loss, _ = _xent(z, labels)
    return float(loss[0]) if single else loss


def logit_gradients(model, x, classes):
    """Logits of a single input and d logit_k / dx for each k in ``classes``."""
    net = _net(model)
    classes = np.asarray(classes, dtype=np.int64)
    xr = np.repeat(np.asarray(x, dtype=np.float64)[None], len(classes), axis=0)
    z, caches = net.run(xr, upto=net.head)
    dz = np.zeros_like(z)
    dz[np.arange(len(classes)), classes] = 1.0
    dx, _ = net.backprop(dz, caches, need_dx=True)
    return z[0], dx


def fd_check(model, x, label=0, h: float = 1e-3, n_probe: int | None = 64, seed: int = 0, atol: float = 1e-7) -> dict:
    """Compare analytic input / parameter gradients with central differences.

    Relative error per coordinate is |a - n| / max(|a|, |n|, atol); the report
    holds the maxima.  ``n_probe`` limits how many parameters are probed.
    """
    net = _net(model)
    xb, _ = _batched(x, net)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.size == 1 and len(xb) > 1:
        labels = np.full(len(xb), labels[0])
    rng = np.random.default_rng(seed)

    def total_loss(xx):
        z, _ = net.run(xx, upto=net.head)
        return float(_xent(z, labels)[0].sum())

    z, caches = net.run(xb, upto=net.head)
    _, p = _xent(z, labels)
    dz = p
    dz[np.arange(len(labels)), labels] -= 1.0
    dx, grads = net.backprop(dz, caches, need_dx=True)
    g_param = net.flatten_grads(grads)

    def rel(a, n):
        return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), atol))) if a.size else 0.0

    xi = np.arange(xb.size)
    if n_probe is not None and xi.size > n_probe:
        xi = rng.choice(xi, n_probe, replace=False)
    num_x = np.empty(xi.size)
    flat = xb.ravel().copy()
    for j, i in enumerate(xi):
        old = flat[i]
        flat[i] = old + h
        lp = total_loss(flat.reshape(xb.shape))
        flat[i] = old - h
        lm = total_loss(flat.reshape(xb.shape))
        flat[i] = old
        num_x[j] = (lp - lm) / (2 * h)
    pi = np.arange(net.n_params)
    if n_probe is not None and pi.size > n_probe:
        pi = rng.choice(pi, n_probe, replace=False)
    base = net.params.copy()
    num_p = np.empty(pi.size)
    for j, i in enumerate(pi):
        q = base.copy()
        q[i] += h
        net.set_params(q)
        lp = total_loss(xb)
        q[i] -= 2 * h
        net.set_params(q)
        lm = total_loss(xb)
        num_p[j] = (lp - lm) / (2 * h)
    net.set_params(base)
    ex, ep = rel(dx.ravel()[xi], num_x), rel(g_param[pi], num_p)
    return {"input_rel_err": ex, "param_rel_err": ep, "max_rel_err": max(ex, ep), "n_input": int(xi.size), "n_param": int(pi.size)}
