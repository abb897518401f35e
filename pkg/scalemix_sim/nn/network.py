import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np

from scalemix_sim.errors import ConfigurationError, ShapeError
from scalemix_sim.nn.layers import Conv2D, Dense, Flatten, ReLU, Sigmoid, layer_from_dict
from scalemix_sim.rng import Purpose, stream

logger = logging.getLogger('scalemix_sim')

NETWORK_FORMAT = "scalemix-network"
NETWORK_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    filters: int = 16
    kernel: int = 3
    dense: Tuple[int, ...] = (64, 32)
    mask_channel: bool = False
    learning_rate: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    epochs: int = 40
    batch_size: int = 128

    def __post_init__(self):
        object.__setattr__(self, "dense", tuple(int(w) for w in self.dense))
        if self.filters < 1 or self.kernel < 1 or any(w < 1 for w in self.dense):
            raise ConfigurationError("Network layer sizes must be positive")
        if self.learning_rate <= 0 or not 0.0 <= self.rho < 1.0 or self.eps <= 0:
            raise ConfigurationError("Invalid RMSprop hyperparameters")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be at least 1")

    def to_dict(self):
        d = asdict(self)
        d["dense"] = list(self.dense)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class RMSprop:
    """s <- rho*s + (1-rho)*g^2; w <- w - lr*g/(sqrt(s)+eps), one accumulator per weight."""

    def __init__(self, params, learning_rate=1e-3, rho=0.9, eps=1e-8):
        self.learning_rate = learning_rate
        self.rho = rho
        self.eps = eps
        self.state = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, s in zip(params, grads, self.state):
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p -= self.learning_rate * g / (np.sqrt(s) + self.eps)


def mae_loss(pred, target):
    """Mean absolute error over batch and coordinates, with its gradient w.r.t. pred."""
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


@dataclass
class NetworkModel:
    layers: list
    input_shape: Tuple[int, ...]
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config, input_shape, seed, n_outputs=4):
        """Conv -> ReLU -> Flatten -> (Dense -> ReLU)* -> Dense -> Sigmoid, seeded initial weights."""
        rng = stream(seed, Purpose.INIT)
        channels, height, width = input_shape
        layers = [Conv2D(channels, config.filters, config.kernel, rng=rng), ReLU(), Flatten()]
        width_in = config.filters * height * width
        for width_out in config.dense:
            layers += [Dense(width_in, width_out, rng=rng), ReLU()]
            width_in = width_out
        layers += [Dense(width_in, n_outputs, rng=rng), Sigmoid()]
        model = cls(layers, tuple(input_shape))
        logger.info("Network built: %d layers, %d trainable parameters, input %s",
                    len(layers), model.n_params, model.input_shape)
        return model

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params()))

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def forward(self, x):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError("Network expects inputs of shape %s, got %s" % (self.input_shape, x.shape[1:]))
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict(self, x, batch_size=1024):
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def get_weights(self):
        return [p.copy() for p in self.params()]

    def set_weights(self, weights):
        for p, w in zip(self.params(), weights):
            p[...] = w

    def to_dict(self):
        return {"format": NETWORK_FORMAT, "version": NETWORK_VERSION, "input_shape": list(self.input_shape),
                "layers": [layer.to_dict() for layer in self.layers], "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != NETWORK_FORMAT:
            raise ConfigurationError("Not a network file (format %r)" % d.get("format"))
        if d.get("version") != NETWORK_VERSION:
            raise ConfigurationError("Unsupported network file version %r" % d.get("version"))
        return cls([layer_from_dict(layer) for layer in d["layers"]], tuple(d["input_shape"]), d.get("meta", {}))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))
