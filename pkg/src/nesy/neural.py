"""Small float64 MLP stack with hand-written reverse mode.

Tensors are plain numpy arrays.  Networks take 1-D (single sample) or 2-D
(batch x features) input; gradients accumulate into ``grads`` until
:func:`zero_grads` is called.
"""

import math
import struct

import numpy as np

from nesy import errors

CHECKPOINT_MAGIC = b"NSYN"
CHECKPOINT_VERSION = 1

_TAG_LINEAR, _TAG_RELU, _TAG_SOFTMAX = 0, 1, 2


class Linear:
    def __init__(self, in_features, out_features, rng=None):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        # Kaiming-uniform for ReLU fan-in.
        bound = math.sqrt(6.0 / in_features)
        self.weight = rng.uniform(-bound, bound, size=(out_features, in_features))
        self.bias = np.zeros(out_features)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._input = None

    def params(self):
        return [self.weight, self.bias]

    def grads(self):
        return [self.grad_weight, self.grad_bias]

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise errors.ShapeMismatch(f"Linear expects {self.in_features} features, got {x.shape[-1]}")
        self._input = x
        return self.apply(x)

    def apply(self, x):
        return x @ self.weight.T + self.bias

    def backward(self, grad):
        if self._input is None:
            raise errors.NoCachedForward("backward called before forward")
        self.grad_weight += grad.T @ self._input
        self.grad_bias += grad.sum(axis=0)
        return grad @ self.weight


class ReLU:
    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def apply(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad):
        if self._mask is None:
            raise errors.NoCachedForward("backward called before forward")
        return grad * self._mask


class Softmax:
    def __init__(self):
        self._out = None

    def params(self):
        return []

    def grads(self):
        return []

    def forward(self, x):
        self._out = self.apply(x)
        return self._out

    def apply(self, x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def backward(self, grad):
        if self._out is None:
            raise errors.NoCachedForward("backward called before forward")
        s = self._out
        return s * (grad - (grad * s).sum(axis=-1, keepdims=True))


class Network:
    """Feed-forward stack bound to one neural head id."""

    def __init__(self, head_id, layers):
        self.head_id = head_id
        self.layers = list(layers)
        self._check()
        self._squeeze = False
        self._forwarded = False

    def _check(self):
        width = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise errors.ShapeMismatch("Softmax must be the final layer")
            if isinstance(layer, Linear):
                if width is not None and width != layer.in_features:
                    raise errors.ShapeMismatch(
                        f"layer {i} expects {layer.in_features} inputs, previous layer gives {width}"
                    )
                width = layer.out_features

    @property
    def in_features(self):
        return next(layer.in_features for layer in self.layers if isinstance(layer, Linear))

    @property
    def out_features(self):
        return [layer for layer in self.layers if isinstance(layer, Linear)][-1].out_features

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._squeeze = x.ndim == 1
        if self._squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise errors.ShapeMismatch(f"{self.head_id}: expected (*, {self.in_features}) input, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"{self.head_id}: non-finite input")
        for layer in self.layers:
            x = layer.forward(x)
        self._forwarded = True
        return x[0] if self._squeeze else x

    __call__ = forward

    def backward(self, output_grad):
        if not self._forwarded:
            raise errors.NoCachedForward(f"{self.head_id}: backward called before forward")
        g = np.asarray(output_grad, dtype=np.float64)
        if self._squeeze:
            g = g[None, :]
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g[0] if self._squeeze else g

    def predict(self, x):
        """Forward pass without touching the backward cache."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise errors.ShapeMismatch(f"{self.head_id}: expected (*, {self.in_features}) input, got {x.shape}")
        for layer in self.layers:
            x = layer.apply(x)
        return x[0] if squeeze else x


def mlp(head_id, sizes, seed=0, softmax=True):
    """``sizes=[in, hidden..., out]``: Linear/ReLU blocks, optional final Softmax."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        layers.append(Linear(a, b, rng))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    if softmax:
        layers.append(Softmax())
    return Network(head_id, layers)


def zero_grads(net):
    for g in net.grads():
        g.fill(0.0)


class SGD:
    def __init__(self, lr=0.01):
        if lr <= 0:
            raise errors.ConfigError("learning rate must be positive")
        self.lr = lr

    def step(self, net):
        for p, g in zip(net.params(), net.grads()):
            p -= self.lr * g


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise errors.ConfigError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {}  # id(param) -> (m, v, t)

    def step(self, net):
        for p, g in zip(net.params(), net.grads()):
            m, v, t = self.state.get(id(p), (np.zeros_like(p), np.zeros_like(p), 0))
            t += 1
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self.state[id(p)] = (m, v, t)


def step(optimizer, net):
    optimizer.step(net)


NLL_CLAMP = 1e-12


def nll_loss(predicted, target):
    """Negative log-likelihood of ``target`` under a probability vector.

    Returns ``(loss, grad)`` with the gradient taken w.r.t. ``predicted``.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    if not isinstance(target, (int, np.integer)) or not 0 <= target < len(predicted):
        raise errors.BadTarget(f"target {target!r} out of range for {len(predicted)} classes")
    if abs(predicted.sum() - 1.0) > 1e-6:
        raise ValueError(f"predicted distribution sums to {predicted.sum()}")
    p = max(predicted[target], NLL_CLAMP)
    grad = np.zeros_like(predicted)
    grad[target] = -1.0 / p
    return -math.log(p), grad


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(net, path):
    """Binary layout: b"NSYN", u32 version, u32 len + head id bytes,
    u32 layer count, then per layer: u8 tag, u32 dim count, u32 dims,
    little-endian f64 weights (row-major, out x in) followed by biases."""
    head = net.head_id.encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(head)), head,
              struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        if isinstance(layer, Linear):
            chunks.append(struct.pack("<BIII", _TAG_LINEAR, 2, layer.in_features, layer.out_features))
            chunks.append(layer.weight.astype("<f8").tobytes())
            chunks.append(layer.bias.astype("<f8").tobytes())
        else:
            tag = _TAG_RELU if isinstance(layer, ReLU) else _TAG_SOFTMAX
            chunks.append(struct.pack("<BI", tag, 0))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise errors.CheckpointError(f"{path}: bad magic {data[:4]!r}")
    offset = 4

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise errors.CheckpointError(f"{path}: truncated checkpoint")
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise errors.CheckpointError(f"{path}: unsupported version {version}")
    (head_len,) = take("<I")
    head = data[offset:offset + head_len].decode("utf-8")
    offset += head_len
    (count,) = take("<I")
    layers = []
    for _ in range(count):
        tag, ndims = take("<BI")
        dims = take("<" + "I" * ndims) if ndims else ()
        if tag == _TAG_LINEAR:
            n_in, n_out = dims
            layer = Linear(n_in, n_out)
            w = take(f"<{n_in * n_out}d")
            b = take(f"<{n_out}d")
            layer.weight = np.array(w, dtype=np.float64).reshape(n_out, n_in)
            layer.bias = np.array(b, dtype=np.float64)
            layer.grad_weight = np.zeros_like(layer.weight)
            layer.grad_bias = np.zeros_like(layer.bias)
            layers.append(layer)
        elif tag == _TAG_RELU:
            layers.append(ReLU())
        elif tag == _TAG_SOFTMAX:
            layers.append(Softmax())
        else:
            raise errors.CheckpointError(f"{path}: unknown layer tag {tag}")
    return Network(head, layers)
