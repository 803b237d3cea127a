"""Minimal dense float64 network kernel: layers, backprop, SGD, gradient checks.

Conventions
-----------
- Image tensors are (batch, height, width, channels); vector tensors are
  (batch, features). Everything is float64.
- Convolution is cross-correlation (no kernel flip), stride >= 1, padding
  "same" or "valid".
- Max-pool ties break at the first (row-major) window position so the
  backward routing is deterministic.
- Layers cache what forward saw; backward consumes the cache and fills the
  layer's parameter gradients. Parameters are only changed by sgd_step.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ConfigurationError(ValueError):
    """A layer stack whose shapes do not compose."""


class NumericsError(RuntimeError):
    """Non-finite values where finite ones are required."""


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "?"

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}


class Affine(Layer):
    """y = x @ W + b on (batch, n_in) inputs.

    `head` marks the affine as a classifier head ("svm" or "softmax") so a
    persisted architecture descriptor round-trips the training loss choice.
    """

    kind = "affine"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 head: str | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.head = head
        self.W = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        self.b = np.zeros(n_out)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.gW, "b": self.gb}

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.n_in:
            raise ConfigurationError(
                f"affine expects ({self.n_in},) input, got {in_shape}")
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, d_out):
        self.gW[...] = self._x.T @ d_out
        self.gb[...] = d_out.sum(axis=0)
        return d_out @ self.W.T

    def spec(self):
        if self.head is not None:
            return {"kind": f"{self.head}-head", "classes": self.n_out}
        return {"kind": "affine", "out": self.n_out}


class ReLU(Layer):
    kind = "rectifier"

    def __init__(self):
        self._mask = None

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, d_out):
        return d_out * self._mask


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._in_shape = None

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, d_out):
        return d_out.reshape(self._in_shape)


def _same_padding(size: int, kernel: int, stride: int) -> tuple:
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


class Conv2D(Layer):
    """Cross-correlation with `filters` kernels of shape (kh, kw, in_channels)."""

    kind = "conv"

    def __init__(self, filters: int, kernel: tuple, in_channels: int, stride: int = 1,
                 padding: str = "same", rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        if padding not in ("same", "valid"):
            raise ConfigurationError(f"conv padding must be same/valid, got {padding!r}")
        self.filters = int(filters)
        self.kh, self.kw = int(kernel[0]), int(kernel[1])
        self.cin = int(in_channels)
        self.stride = int(stride)
        self.padding = padding
        fan_in = self.kh * self.kw * self.cin
        fan_out = self.kh * self.kw * self.filters
        self.W = glorot_uniform(rng, (self.kh, self.kw, self.cin, self.filters), fan_in, fan_out)
        self.b = np.zeros(self.filters)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._cols = None
        self._geom = None
        self._scatter_cache = {}

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.gW, "b": self.gb}

    def _pads(self, h, w):
        if self.padding == "same":
            return _same_padding(h, self.kh, self.stride), _same_padding(w, self.kw, self.stride)
        return (0, 0), (0, 0)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigurationError(f"conv expects (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        if c != self.cin:
            raise ConfigurationError(f"conv built for {self.cin} channels, got {c}")
        (pt, pb), (pl, pr) = self._pads(h, w)
        hp, wp = h + pt + pb, w + pl + pr
        if hp < self.kh or wp < self.kw:
            raise ConfigurationError(f"conv kernel {self.kh}x{self.kw} larger than input {in_shape}")
        ho = (hp - self.kh) // self.stride + 1
        wo = (wp - self.kw) // self.stride + 1
        return (ho, wo, self.filters)

    def _im2col(self, xp):
        # windows: (N, H', W', C, kh, kw) -> (N*H'*W', kh*kw*C)
        win = sliding_window_view(xp, (self.kh, self.kw), axis=(1, 2))
        win = win[:, ::self.stride, ::self.stride]
        n, ho, wo = win.shape[:3]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
        return cols, ho, wo

    def forward(self, x):
        n, h, w, _ = x.shape
        (pt, pb), (pl, pr) = self._pads(h, w)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
        cols, ho, wo = self._im2col(xp)
        self._cols = cols
        self._geom = (n, h, w, xp.shape[1], xp.shape[2], pt, pl, ho, wo)
        wmat = self.W.reshape(-1, self.filters)
        out = cols @ wmat + self.b
        return out.reshape(n, ho, wo, self.filters)

    def _scatter_indices(self, n, hp, wp):
        # flat padded-input index of every im2col column entry, whole batch
        key = (n, hp, wp)
        cached = self._scatter_cache.get(key)
        if cached is not None:
            return cached
        base = np.arange(hp * wp * self.cin).reshape(1, hp, wp, self.cin)
        idx, _, _ = self._im2col(base)
        per_image = hp * wp * self.cin
        flat = (np.tile(idx.ravel(), n).reshape(n, -1)
                + (np.arange(n) * per_image)[:, None]).ravel()
        if len(self._scatter_cache) >= 4:
            self._scatter_cache.pop(next(iter(self._scatter_cache)))
        self._scatter_cache[key] = flat
        return flat

    def backward(self, d_out):
        n, h, w, hp, wp, pt, pl, ho, wo = self._geom
        dmat = d_out.reshape(n * ho * wo, self.filters)
        wmat = self.W.reshape(-1, self.filters)
        self.gW[...] = (self._cols.T @ dmat).reshape(self.W.shape)
        self.gb[...] = dmat.sum(axis=0)
        dcols = dmat @ wmat.T  # (N*H'*W', kh*kw*C)
        per_image = hp * wp * self.cin
        dxp = np.bincount(self._scatter_indices(n, hp, wp),
                          weights=dcols.ravel(),
                          minlength=n * per_image)
        dxp = dxp.reshape(n, hp, wp, self.cin)
        return dxp[:, pt:pt + h, pl:pl + w, :]

    def spec(self):
        return {"kind": "conv", "filters": self.filters, "kernel": [self.kh, self.kw],
                "stride": self.stride, "padding": self.padding}


class MaxPool2D(Layer):
    """Valid max pooling; trailing cells that do not fill a window are dropped."""

    kind = "maxpool"

    def __init__(self, size: tuple, stride: int | None = None):
        self.ph, self.pw = int(size[0]), int(size[1])
        self.stride = int(stride) if stride is not None else self.ph
        self._cache = None
        self._index_cache = {}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ConfigurationError(f"maxpool expects (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        if h < self.ph or w < self.pw:
            raise ConfigurationError(f"maxpool window {self.ph}x{self.pw} larger than input {in_shape}")
        ho = (h - self.ph) // self.stride + 1
        wo = (w - self.pw) // self.stride + 1
        return (ho, wo, c)

    def _windows(self, x):
        win = sliding_window_view(x, (self.ph, self.pw), axis=(1, 2))
        win = win[:, ::self.stride, ::self.stride]
        n, ho, wo, c = win.shape[:4]
        return win.reshape(n, ho, wo, c, self.ph * self.pw), ho, wo

    def _source_indices(self, h, w, c):
        key = (h, w, c)
        cached = self._index_cache.get(key)
        if cached is not None:
            return cached
        base = np.arange(h * w * c).reshape(1, h, w, c)
        idx, _, _ = self._windows(base)
        self._index_cache[key] = idx[0]
        return idx[0]

    def forward(self, x):
        win, ho, wo = self._windows(x)
        arg = win.argmax(axis=-1)  # first max wins ties, row-major in-window
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg)
        return out

    def backward(self, d_out):
        (n, h, w, c), arg = self._cache
        src = self._source_indices(h, w, c)  # (H', W', C, ph*pw)
        flat_src = np.take_along_axis(
            np.broadcast_to(src, (n,) + src.shape), arg[..., None], axis=-1)[..., 0]
        per_image = h * w * c
        flat_idx = flat_src.reshape(n, -1) + (np.arange(n) * per_image)[:, None]
        dx = np.bincount(flat_idx.ravel(), weights=d_out.reshape(n, -1).ravel(),
                         minlength=n * per_image)
        return dx.reshape(n, h, w, c)

    def spec(self):
        return {"kind": "maxpool", "size": [self.ph, self.pw], "stride": self.stride}


# ---------------------------------------------------------------------------
# network


class Network:
    """An ordered layer stack with shape checking and flat-parameter access."""

    def __init__(self, layers, input_shape: tuple, head: str | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.head = head
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
            except ConfigurationError as exc:
                raise ConfigurationError(f"layer {i} ({layer.kind}): {exc}") from None
        self.output_shape = self.shapes[-1]

    def forward(self, x: np.ndarray):
        """Run all layers; returns one activation per layer (last = output)."""
        if tuple(x.shape[1:]) != self.input_shape:
            raise ConfigurationError(
                f"network expects input shape {self.input_shape}, got {tuple(x.shape[1:])}")
        activations = []
        for layer in self.layers:
            x = layer.forward(x)
            activations.append(x)
        return activations

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[-1]

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        if tuple(d_out.shape[1:]) != self.output_shape:
            raise NumericsError(
                f"output gradient shape {tuple(d_out.shape[1:])} does not match "
                f"network output {self.output_shape}")
        for layer in reversed(self.layers):
            d_out = layer.backward(d_out)
        return d_out

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out.append((f"{i}.{layer.kind}.{name}", arr))
        return out

    def gradients(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads().items():
                out.append((f"{i}.{layer.kind}.{name}", arr))
        return out

    def sgd_step(self, learning_rate: float) -> None:
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        names = [n for n, _ in self.parameters()]
        params = [p for _, p in self.parameters()]
        grads = [g for _, g in self.gradients()]
        for name, grad in zip(names, grads):
            if not np.all(np.isfinite(grad)):
                raise NumericsError(f"non-finite gradient in {name}; training aborted")
        sgd_step(params, grads, learning_rate)

    def param_vector(self) -> np.ndarray:
        arrays = [p.ravel() for _, p in self.parameters()]
        return np.concatenate(arrays) if arrays else np.zeros(0)

    def set_param_vector(self, vec: np.ndarray) -> None:
        offset = 0
        for _, p in self.parameters():
            p[...] = vec[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != vec.size:
            raise NumericsError(f"parameter vector length {vec.size}, expected {offset}")

    def grad_vector(self) -> np.ndarray:
        arrays = [g.ravel() for _, g in self.gradients()]
        return np.concatenate(arrays) if arrays else np.zeros(0)

    def spec(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [layer.spec() for layer in self.layers]}

    def copy_from(self, other: "Network") -> None:
        for (_, dst), (_, src) in zip(self.parameters(), other.parameters()):
            dst[...] = src


def build_network(layer_specs, input_shape, rng: np.random.Generator | None = None) -> Network:
    """Construct a Network from spec dicts, inferring fan-ins from the shapes."""
    rng = rng or np.random.default_rng(0)
    shape = tuple(int(d) for d in input_shape)
    layers = []
    head = None
    for i, spec in enumerate(layer_specs):
        kind = spec["kind"]
        if kind == "conv":
            if len(shape) != 3:
                raise ConfigurationError(f"layer {i} (conv): needs (H, W, C) input, has {shape}")
            layer = Conv2D(spec["filters"], spec["kernel"], in_channels=shape[2],
                           stride=spec.get("stride", 1), padding=spec.get("padding", "same"),
                           rng=rng)
        elif kind == "maxpool":
            layer = MaxPool2D(spec["size"], spec.get("stride"))
        elif kind == "rectifier":
            layer = ReLU()
        elif kind == "flatten":
            layer = Flatten()
        elif kind == "affine":
            if len(shape) != 1:
                raise ConfigurationError(f"layer {i} (affine): needs flat input, has {shape}")
            layer = Affine(shape[0], spec["out"], rng=rng)
        elif kind in ("svm-head", "softmax-head"):
            if len(shape) != 1:
                raise ConfigurationError(f"layer {i} ({kind}): needs flat input, has {shape}")
            head = kind.split("-")[0]
            layer = Affine(shape[0], spec["classes"], rng=rng, head=head)
        else:
            raise ConfigurationError(f"layer {i}: unknown kind {kind!r}")
        try:
            shape = tuple(layer.output_shape(shape))
        except ConfigurationError as exc:
            raise ConfigurationError(f"layer {i} ({kind}): {exc}") from None
        layers.append(layer)
    return Network(layers, input_shape, head=head)


# ---------------------------------------------------------------------------
# losses and updates


def sgd_step(parameters, gradients, learning_rate: float) -> None:
    """p <- p - lr * g, in place, element-wise."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    for p, g in zip(parameters, gradients):
        p -= learning_rate * g


def multiclass_hinge(scores: np.ndarray, labels: np.ndarray, margin: float = 1.0):
    """Mean multiclass hinge loss (margin 1 by default) and its score gradient."""
    n = scores.shape[0]
    correct = scores[np.arange(n), labels]
    margins = np.maximum(0.0, scores - correct[:, None] + margin)
    margins[np.arange(n), labels] = 0.0
    loss = margins.sum() / n
    d = (margins > 0).astype(float)
    d[np.arange(n), labels] -= d.sum(axis=1)
    return loss, d / n


def softmax_cross_entropy(scores: np.ndarray, labels: np.ndarray):
    n = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def grad_check(network: Network, x: np.ndarray, loss_fn, rng: np.random.Generator,
               n_coords: int = 20, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn maps the network output to (scalar loss, d_loss/d_output).
    Checks n_coords parameter coordinates per call.

    Central differences are only a valid oracle where the loss is smooth; a
    perturbation that crosses a rectifier or max-pool switch gives an
    arbitrary estimate. Coordinates where two step sizes disagree with each
    other (the signature of such a crossing) are resampled. A wrong analytic
    gradient still fails: there the two numeric estimates agree with each
    other and jointly disagree with the analytic value.
    """
    vec = network.param_vector()
    if not np.all(np.isfinite(vec)):
        raise NumericsError("grad_check requires finite parameters")
    loss, d_out = loss_fn(network.forward(x)[-1])
    network.backward(d_out)
    analytic = network.grad_vector()

    def numeric_at(c, step):
        bumped = vec.copy()
        bumped[c] = vec[c] + step
        network.set_param_vector(bumped)
        up, _ = loss_fn(network.forward(x)[-1])
        bumped[c] = vec[c] - step
        network.set_param_vector(bumped)
        down, _ = loss_fn(network.forward(x)[-1])
        return (up - down) / (2.0 * step)

    order = rng.permutation(vec.size)
    worst = 0.0
    checked = 0
    for c in order:
        if checked >= min(n_coords, vec.size):
            break
        coarse = numeric_at(c, eps)
        fine = numeric_at(c, eps / 8.0)
        if abs(coarse - fine) > 1e-3 * max(abs(coarse), abs(fine), 1e-8):
            continue  # non-smooth at this coordinate; the oracle is invalid
        denom = max(abs(analytic[c]), abs(fine), 1e-8)
        worst = max(worst, abs(analytic[c] - fine) / denom)
        checked += 1
    network.set_param_vector(vec)
    if checked < min(n_coords, vec.size) // 2:
        raise NumericsError("too few smooth coordinates for a gradient check")
    return worst
