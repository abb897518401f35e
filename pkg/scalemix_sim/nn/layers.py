"""Layers of the chi-grid regression network, with hand-written backward passes.

Every layer caches what its backward pass needs during forward(). Inputs are batches:
(batch, channels, height, width) for images, (batch, features) after Flatten.
"""
import abc

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from scalemix_sim.errors import ShapeError


def fan_in_uniform(shape, fan_in, rng):
    """He-style uniform initialization on +-sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer(abc.ABC):

    @abc.abstractmethod
    def forward(self, x):
        return

    @abc.abstractmethod
    def backward(self, grad):
        """Gradient w.r.t. the layer input; parameter gradients are stored on the layer."""
        return

    def params(self):
        return []

    def grads(self):
        return []

    def output_shape(self, input_shape):
        return input_shape

    @abc.abstractmethod
    def to_dict(self):
        return


class Conv2D(Layer):
    """Stride-1 convolution with zero 'same' padding; weights are (filters, channels, k, k)."""

    def __init__(self, in_channels, filters, kernel=3, rng=None, weights=None, bias=None):
        if kernel % 2 != 1:
            raise ShapeError("Conv2D needs an odd kernel size for same padding")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        shape = (filters, in_channels, kernel, kernel)
        if weights is None:
            weights = fan_in_uniform(shape, in_channels * kernel * kernel, rng)
        self.weights = np.asarray(weights, dtype=float).reshape(shape)
        self.bias = np.zeros(filters) if bias is None else np.asarray(bias, dtype=float)
        self.d_weights = np.zeros_like(self.weights)
        self.d_bias = np.zeros_like(self.bias)
        self._windows = None

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError("Conv2D expects (batch, %d, h, w) input, got %s" % (self.in_channels, x.shape))
        pad = self.kernel // 2
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        # (batch, channels, h, w, k, k)
        self._windows = sliding_window_view(padded, (self.kernel, self.kernel), axis=(2, 3))
        return np.einsum("bchwij,fcij->bfhw", self._windows, self.weights) + self.bias[None, :, None, None]

    def backward(self, grad):
        self.d_weights = np.einsum("bchwij,bfhw->fcij", self._windows, grad)
        self.d_bias = grad.sum(axis=(0, 2, 3))
        batch, _, height, width = grad.shape
        pad = self.kernel // 2
        d_padded = np.zeros((batch, self.in_channels, height + 2 * pad, width + 2 * pad))
        for i in range(self.kernel):
            for j in range(self.kernel):
                d_padded[:, :, i:i + height, j:j + width] += np.einsum(
                    "bfhw,fc->bchw", grad, self.weights[:, :, i, j])
        return d_padded[:, :, pad:pad + height, pad:pad + width]

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.d_weights, self.d_bias]

    def output_shape(self, input_shape):
        return (self.filters,) + tuple(input_shape[1:])

    def to_dict(self):
        return {"type": "conv2d", "in_channels": self.in_channels, "filters": self.filters,
                "kernel": self.kernel, "weights": self.weights.ravel().tolist(), "bias": self.bias.tolist()}


class Flatten(Layer):

    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def to_dict(self):
        return {"type": "flatten"}


class Dense(Layer):
    """Fully connected layer; weights are (inputs, outputs)."""

    def __init__(self, n_in, n_out, rng=None, weights=None, bias=None):
        self.n_in = n_in
        self.n_out = n_out
        if weights is None:
            weights = fan_in_uniform((n_in, n_out), n_in, rng)
        self.weights = np.asarray(weights, dtype=float).reshape(n_in, n_out)
        self.bias = np.zeros(n_out) if bias is None else np.asarray(bias, dtype=float)
        self.d_weights = np.zeros_like(self.weights)
        self.d_bias = np.zeros_like(self.bias)
        self._x = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError("Dense expects (batch, %d) input, got %s" % (self.n_in, x.shape))
        self._x = x
        return x @ self.weights + self.bias

    def backward(self, grad):
        self.d_weights = self._x.T @ grad
        self.d_bias = grad.sum(axis=0)
        return grad @ self.weights.T

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.d_weights, self.d_bias]

    def output_shape(self, input_shape):
        return (self.n_out,)

    def to_dict(self):
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out,
                "weights": self.weights.ravel().tolist(), "bias": self.bias.tolist()}


class ReLU(Layer):

    def __init__(self):
        self._active = None

    def forward(self, x):
        # derivative taken as 0 at exactly 0
        self._active = x > 0
        return np.where(self._active, x, 0.0)

    def backward(self, grad):
        return grad * self._active

    def to_dict(self):
        return {"type": "relu"}


class Sigmoid(Layer):

    def __init__(self):
        self._out = None

    def forward(self, x):
        self._out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self._out

    def backward(self, grad):
        return grad * self._out * (1.0 - self._out)

    def to_dict(self):
        return {"type": "sigmoid"}


def layer_from_dict(d):
    kind = d["type"]
    if kind == "conv2d":
        return Conv2D(d["in_channels"], d["filters"], d["kernel"], weights=d["weights"], bias=d["bias"])
    if kind == "dense":
        return Dense(d["n_in"], d["n_out"], weights=d["weights"], bias=d["bias"])
    if kind == "flatten":
        return Flatten()
    if kind == "relu":
        return ReLU()
    if kind == "sigmoid":
        return Sigmoid()
    raise ShapeError("Unknown layer type " + repr(kind))
