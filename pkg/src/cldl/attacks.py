"""L-infinity gradient-sign attacks: FGSM, BIM, PGD and MIM.

All attacks maximize a per-example loss of the source model and keep the
result inside both the epsilon-ball around the clean input and [0, 1].
``sign(0) = 0``, so coordinates with a vanishing gradient are left alone.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .lcm import EPS, kl_training_loss, one_hot
from .tensor import Tensor

FAMILIES = ("fgsm", "bim", "pgd", "mim")
LOSSES = ("cross-entropy", "kl-to-sld")


@dataclass(frozen=True)
class AttackConfig:
    family: str
    epsilon: float
    iterations: int = 10
    step_size: float = None  # None -> epsilon / 5
    momentum: float = 1.0
    loss: str = "cross-entropy"
    seed: int = 0
    random_start: bool = True  # pgd only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.momentum < 0:
            raise ValueError("momentum must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown attack loss {self.loss!r}")

    @property
    def step(self):
        return self.epsilon / 5.0 if self.step_size is None else self.step_size


@dataclass
class AdversarialBatch:
    x: np.ndarray
    x_adv: np.ndarray
    y: np.ndarray
    config: AttackConfig
    success: np.ndarray  # source model misclassifies x_adv


def _predict_fn(model):
    return getattr(model, "predict", model)


def cross_entropy_loss(model):
    """-log p_y of the model's (ensemble-averaged) probabilities."""
    predict = _predict_fn(model)

    def loss(x, y):
        p = predict(x)
        return -T.log(T.clamp_min(p[np.arange(len(y)), y], EPS))
    return loss


def kl_to_sld_loss(ensemble, lcm):
    """Mean over members of KL(soft label || prediction)."""

    def loss(x, y):
        y1h = one_hot(y, ensemble.n_classes)
        acc = None
        for m in ensemble.members:
            v = m.encode(x)
            kl = kl_training_loss(lcm.simulated_label_distribution(v, y1h).sld, m.classify(v))
            acc = kl if acc is None else acc + kl
        return acc / float(len(ensemble.members))
    return loss


def make_loss(model, config, lcm=None):
    if config.loss == "kl-to-sld":
        if lcm is None:
            raise ValueError("kl-to-sld attack loss needs the label confusion model")
        return kl_to_sld_loss(model, lcm)
    return cross_entropy_loss(model)


def input_gradient(loss_fn, x, y):
    xt = Tensor(x, requires_grad=True)
    return T.grad(T.tsum(loss_fn(xt, y)), [xt])[0].data


def project(x_adv, x, eps):
    return np.clip(np.clip(x_adv, x - eps, x + eps), 0.0, 1.0)


def _finish(model, x, x_adv, y, config):
    with T.no_grad():
        p = _predict_fn(model)(Tensor(x_adv)).data
    return AdversarialBatch(x, x_adv, y, config, p.argmax(axis=-1) != y)


def _prepare(x, y):
    return np.array(x, dtype=np.float64), np.asarray(y, dtype=np.intp)


def fgsm(model, x, y, config, loss_fn=None, lcm=None):
    x, y = _prepare(x, y)
    loss_fn = loss_fn or make_loss(model, config, lcm)
    g = input_gradient(loss_fn, x, y)
    x_adv = np.clip(x + config.epsilon * np.sign(g), 0.0, 1.0)
    return _finish(model, x, x_adv, y, config)


def _iterate(model, x, y, config, loss_fn, x0, momentum=None, trace=None):
    x_adv = x0
    g_acc = np.zeros_like(x)
    for _ in range(config.iterations):
        g = input_gradient(loss_fn, x_adv, y)
        if momentum is not None:
            l1 = np.abs(g).reshape(len(g), -1).sum(axis=1)
            l1 = np.maximum(l1, EPS).reshape((-1,) + (1,) * (g.ndim - 1))
            g_acc = momentum * g_acc + g / l1
            g = g_acc
        x_adv = project(x_adv + config.step * np.sign(g), x, config.epsilon)
        if trace is not None:
            trace.append(x_adv.copy())
    return x_adv


def bim(model, x, y, config, loss_fn=None, lcm=None, trace=None):
    x, y = _prepare(x, y)
    loss_fn = loss_fn or make_loss(model, config, lcm)
    x_adv = _iterate(model, x, y, config, loss_fn, x.copy(), trace=trace)
    return _finish(model, x, x_adv, y, config)


def pgd(model, x, y, config, loss_fn=None, lcm=None, trace=None):
    x, y = _prepare(x, y)
    loss_fn = loss_fn or make_loss(model, config, lcm)
    if config.random_start:
        rng = np.random.default_rng(config.seed)
        x0 = np.clip(x + rng.uniform(-config.epsilon, config.epsilon, size=x.shape), 0.0, 1.0)
    else:
        x0 = x.copy()
    x_adv = _iterate(model, x, y, config, loss_fn, x0, trace=trace)
    return _finish(model, x, x_adv, y, config)


def mim(model, x, y, config, loss_fn=None, lcm=None, trace=None):
    x, y = _prepare(x, y)
    loss_fn = loss_fn or make_loss(model, config, lcm)
    x_adv = _iterate(model, x, y, config, loss_fn, x.copy(), momentum=config.momentum, trace=trace)
    return _finish(model, x, x_adv, y, config)


ATTACKS = {"fgsm": fgsm, "bim": bim, "pgd": pgd, "mim": mim}


def attack(model, x, y, config, loss_fn=None, lcm=None):
    return ATTACKS[config.family](model, x, y, config, loss_fn=loss_fn, lcm=lcm)
