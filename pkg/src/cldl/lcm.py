"""Label confusion model: learned label embeddings turned into soft targets.

The label encoder maps a C×d embedding table through a two-layer network to
label representations ``Vec`` (C×d). For a member representation ``v`` the
similarity scores ``v @ Vec.T`` (one per class) pass through a C×C linear
layer and a softmax to give the label confusion vector ``c``; the soft target
is ``softmax(gamma * onehot(y) + c)``.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import glorot
from .tensor import ShapeError, Tensor

EPS = 1e-12


@dataclass
class SoftLabel:
    sld: Tensor
    lcv: Tensor
    model_index: int = -1


class LabelConfusionModel:
    def __init__(self, params, gamma):
        if gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {gamma}")
        self.params = params
        self.gamma = float(gamma)

    @property
    def n_classes(self):
        return self.params["label_table"].shape[0]

    @property
    def rep_dim(self):
        return self.params["net.W2"].shape[1]

    def parameters(self):
        return list(self.params.values())

    def label_representations(self):
        p = self.params
        emb = T.embedding_lookup(p["label_table"], np.arange(self.n_classes))
        h = T.relu(emb @ p["net.W1"] + p["net.b1"])
        return h @ p["net.W2"] + p["net.b2"]

    def confusion_vector(self, v):
        """softmax((v · Vec_c)_c @ sim_W + sim_b) per row of ``v``."""
        v = T.as_tensor(v)
        if v.shape[-1] != self.rep_dim:
            raise ShapeError(f"confusion_vector: v has width {v.shape[-1]}, LCM expects {self.rep_dim}")
        single = v.ndim == 1
        if single:
            v = T.reshape(v, (1, -1))
        sims = v @ T.transpose(self.label_representations())
        c = T.softmax(sims @ self.params["sim_W"] + self.params["sim_b"], -1)
        return c[0] if single else c

    def simulated_label_distribution(self, v, y_onehot, model_index=-1):
        y_onehot = T.as_tensor(y_onehot)
        check_onehot(y_onehot.data, self.n_classes)
        c = self.confusion_vector(v)
        s = T.softmax(y_onehot * self.gamma + c, -1)
        return SoftLabel(sld=s, lcv=c, model_index=model_index)

    def snapshot(self):
        return LabelConfusionModel({k: Tensor(v.data, name=k) for k, v in self.params.items()},
                                   self.gamma)


def check_onehot(y, n_classes):
    y = np.asarray(y)
    if y.shape[-1] != n_classes:
        raise ValueError(f"one-hot labels have width {y.shape[-1]}, expected {n_classes}")
    ok = np.isin(y, (0.0, 1.0)).all() and np.all(y.sum(axis=-1) == 1.0)
    if not ok:
        raise ValueError("labels are not one-hot vectors")


def one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def build_lcm(rng, n_classes=10, rep_dim=64, gamma=4.0):
    e = d = rep_dim
    params = {
        "label_table": glorot(rng, (n_classes, e), n_classes, e),
        "net.W1": glorot(rng, (e, d), e, d),
        "net.b1": np.zeros(d),
        "net.W2": glorot(rng, (d, d), d, d),
        "net.b2": np.zeros(d),
        "sim_W": glorot(rng, (n_classes, n_classes), n_classes, n_classes),
        "sim_b": np.zeros(n_classes),
    }
    return LabelConfusionModel({k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()},
                               gamma)


def kl_training_loss(sld, p):
    """KL(sld || p) along the last axis; one value per row."""
    sld, p = T.as_tensor(sld), T.as_tensor(p)
    if sld.shape != p.shape:
        raise ShapeError(f"kl_training_loss: shapes {sld.shape} and {p.shape} differ")
    terms = sld * (T.log(T.clamp_min(sld, EPS)) - T.log(T.clamp_min(p, EPS)))
    return T.tsum(terms, -1)
