"""Member classifiers split into encoder and linear head, and their ensemble.

Architectures (``d`` = representation width, ``C`` = classes)::

    mlp        flatten -> Linear(784, 128) -> relu -> Linear(128, d) | Linear(d, C)
    cnn-small  conv(1->8, 3x3) -> relu -> pool2 -> conv(8->16, 3x3) -> relu
               -> pool2 -> flatten(400) -> Linear(400, d) | Linear(d, C)

The encoder output ``v`` is the last linear layer before the head; ``predict``
applies softmax to ``v @ W + b``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

ARCHITECTURES = ("mlp", "cnn-small")
MLP_HIDDEN = 128


def glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _param(data, name):
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class SubModel:
    arch: str
    params: dict
    input_shape: tuple
    n_classes: int
    rep_dim: int

    @property
    def classifier_W(self):
        return self.params["head.W"]

    @property
    def classifier_b(self):
        return self.params["head.b"]

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return sum(p.size for p in self.params.values())

    def _batched(self, x):
        x = T.as_tensor(x)
        shape = tuple(self.input_shape)
        n_in = int(np.prod(shape))
        if x.shape == shape or (self.arch == "mlp" and x.shape == (n_in,)):
            return T.reshape(x, (1,) + shape), True
        if x.ndim >= 2 and (x.shape[1:] == shape or (self.arch == "mlp" and x.shape[1:] == (n_in,))):
            return x, False
        raise ShapeError(f"{self.arch}: input shape {x.shape} does not match {shape}")

    def encode(self, x):
        """Representation ``v`` (B, d), or (d,) for a single unbatched example."""
        x, single = self._batched(x)
        p = self.params
        if self.arch == "mlp":
            h = T.reshape(x, (x.shape[0], -1))
            h = T.relu(h @ p["enc.W1"] + p["enc.b1"])
            v = h @ p["enc.W2"] + p["enc.b2"]
        else:
            h = T.reshape(x, (x.shape[0],) + tuple(self.input_shape))
            h = T.maxpool2d(T.relu(T.conv2d(h, p["enc.K1"], p["enc.c1"])), 2)
            h = T.maxpool2d(T.relu(T.conv2d(h, p["enc.K2"], p["enc.c2"])), 2)
            h = T.reshape(h, (h.shape[0], -1))
            v = h @ p["enc.W3"] + p["enc.b3"]
        return T.reshape(v, (self.rep_dim,)) if single else v

    def classify(self, v):
        """Class probabilities from a representation."""
        v = T.as_tensor(v)
        if v.shape[-1] != self.rep_dim:
            raise ShapeError(f"representation width {v.shape[-1]} != {self.rep_dim}")
        if v.ndim == 1:
            return T.softmax(T.reshape(v, (1, -1)) @ self.classifier_W + self.classifier_b, -1)[0]
        return T.softmax(v @ self.classifier_W + self.classifier_b, -1)

    def predict(self, x):
        return self.classify(self.encode(x))

    __call__ = predict

    def snapshot(self):
        """Detached copy with frozen parameters, safe to share read-only."""
        params = {k: Tensor(v.data, name=k) for k, v in self.params.items()}
        return SubModel(self.arch, params, tuple(self.input_shape), self.n_classes, self.rep_dim)


def build_submodel(arch, rng, n_classes=10, rep_dim=64, input_shape=(1, 28, 28)):
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    input_shape = tuple(input_shape)
    params = {}
    if arch == "mlp":
        n_in = int(np.prod(input_shape))
        params["enc.W1"] = glorot(rng, (n_in, MLP_HIDDEN), n_in, MLP_HIDDEN)
        params["enc.b1"] = np.zeros(MLP_HIDDEN)
        params["enc.W2"] = glorot(rng, (MLP_HIDDEN, rep_dim), MLP_HIDDEN, rep_dim)
        params["enc.b2"] = np.zeros(rep_dim)
    else:
        cin, h, w = input_shape
        params["enc.K1"] = glorot(rng, (8, cin, 3, 3), cin * 9, 8 * 9)
        params["enc.c1"] = np.zeros(8)
        params["enc.K2"] = glorot(rng, (16, 8, 3, 3), 8 * 9, 16 * 9)
        params["enc.c2"] = np.zeros(16)
        oh = ((h - 2) // 2 - 2) // 2
        ow = ((w - 2) // 2 - 2) // 2
        flat = 16 * oh * ow
        params["enc.W3"] = glorot(rng, (flat, rep_dim), flat, rep_dim)
        params["enc.b3"] = np.zeros(rep_dim)
    params["head.W"] = glorot(rng, (rep_dim, n_classes), rep_dim, n_classes)
    params["head.b"] = np.zeros(n_classes)
    return SubModel(arch, {k: _param(v, k) for k, v in params.items()},
                    input_shape, n_classes, rep_dim)


@dataclass
class Ensemble:
    members: list = field(default_factory=list)

    def __post_init__(self):
        if self.members:
            first = self.members[0]
            for m in self.members[1:]:
                if (m.n_classes, tuple(m.input_shape), m.rep_dim) != (
                        first.n_classes, tuple(first.input_shape), first.rep_dim):
                    raise ShapeError("ensemble members disagree on classes, input shape or width")

    def __len__(self):
        return len(self.members)

    @property
    def n_classes(self):
        return self.members[0].n_classes

    @property
    def arch(self):
        return self.members[0].arch

    def parameters(self):
        return [p for m in self.members for p in m.parameters()]

    def predict(self, x):
        return ensemble_predict(self, x)

    __call__ = predict

    def snapshot(self):
        return Ensemble([m.snapshot() for m in self.members])


def ensemble_predict(ensemble, x):
    """Average of the members' softmax outputs."""
    if not ensemble.members:
        raise ValueError("ensemble_predict: ensemble has no members")
    total = ensemble.members[0].predict(x)
    for m in ensemble.members[1:]:
        total = total + m.predict(x)
    return total / float(len(ensemble.members))


def build_ensemble(arch, n_members, rng, n_classes=10, rep_dim=64, input_shape=(1, 28, 28)):
    return Ensemble([build_submodel(arch, rng, n_classes, rep_dim, input_shape)
                     for _ in range(n_members)])
