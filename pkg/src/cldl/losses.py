"""Diversity regularizers and the combined ensemble objective."""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .lcm import EPS, kl_training_loss, one_hot
from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiversityWeights:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be nonnegative, got {self.alpha}, {self.beta}")


@dataclass
class EnsembleLossReport:
    """Batch-averaged loss terms; all fields stay attached to the graph."""

    per_model_kl: list
    mean_kl: Tensor
    label_diversity: Tensor
    gradient_alignment: Tensor
    total: Tensor
    alpha: float = 0.0
    beta: float = 0.0

    def row(self, epoch, step):
        return {
            "epoch": epoch,
            "step": step,
            "mean_kl": self.mean_kl.item(),
            "l_ld": self.label_diversity.item(),
            "l_gd": self.gradient_alignment.item(),
            "total": self.total.item(),
        }


REPORT_FIELDS = ("epoch", "step", "mean_kl", "l_ld", "l_gd", "total")


def truncate_sld(s, y):
    """Drop the true-class entry of each row and renormalize the rest."""
    s = T.as_tensor(s)
    C = s.shape[-1]
    if C < 2:
        raise ShapeError(f"truncate_sld: need at least 2 classes, got {C}")
    y = np.asarray(y, dtype=np.intp)
    if s.ndim == 1:
        keep = np.delete(np.arange(C), int(y))
        t = s[keep]
    else:
        if y.shape != s.shape[:1]:
            raise ShapeError(f"truncate_sld: {y.shape[0] if y.ndim else 1} labels for {s.shape[0]} rows")
        cols = np.arange(C)[None, :].repeat(len(y), 0)
        keep = cols[cols != y[:, None]].reshape(len(y), C - 1)
        t = s[np.arange(len(y))[:, None], keep]
    return t / T.tsum(t, -1, keepdims=True)


def _kl(p, q):
    return T.tsum(p * (T.log(T.clamp_min(p, EPS)) - T.log(T.clamp_min(q, EPS))), -1)


def jsd(p, q):
    """Jensen-Shannon divergence (natural log) along the last axis."""
    p, q = T.as_tensor(p), T.as_tensor(q)
    if p.shape != q.shape:
        raise ShapeError(f"jsd: shapes {p.shape} and {q.shape} differ")
    m = (p + q) * 0.5
    return (_kl(p, m) + _kl(q, m)) * 0.5


def _pairs(n, what):
    if n < 2:
        raise ValueError(f"{what}: need at least 2 members, got {n}")
    return list(itertools.combinations(range(n), 2))


def label_diversity_loss(slds):
    """log of the pair-mean of exp(JSD) over truncated soft labels, per row."""
    pairs = _pairs(len(slds), "label_diversity_loss")
    acc = None
    for i, j in pairs:
        e = T.exp(jsd(slds[i], slds[j]))
        acc = e if acc is None else acc + e
    return T.log(acc / float(len(pairs)))


def gradient_alignment_loss(grads):
    """Pair-mean of |cosine similarity| between input gradients, per row.

    Each gradient is (B, ...) and is flattened per example; a 1-D gradient is
    treated as a single example.
    """
    pairs = _pairs(len(grads), "gradient_alignment_loss")
    flat = []
    for g in grads:
        g = T.as_tensor(g)
        flat.append(T.reshape(g, (1, -1)) if g.ndim == 1 else T.reshape(g, (g.shape[0], -1)))
    if len({f.shape for f in flat}) != 1:
        raise ShapeError("gradient_alignment_loss: gradients have different shapes")
    sq = [T.tsum(f * f, -1) for f in flat]
    if any((s.data < EPS * EPS).any() for s in sq):
        logger.warning("gradient_alignment_loss: zero-norm input gradient; norm clamped at %g", EPS)
    norms = [T.sqrt(T.clamp_min(s, EPS * EPS)) for s in sq]
    acc = None
    for i, j in pairs:
        cos = T.tabs(T.tsum(flat[i] * flat[j], -1) / (norms[i] * norms[j]))
        acc = cos if acc is None else acc + cos
    out = acc / float(len(pairs))
    return out[0] if all(T.as_tensor(g).ndim == 1 for g in grads) else out


def member_terms(ensemble, lcm, x, y):
    """Per-member KL rows and soft labels for a batch.

    Returns (kls, softs) with kls[i] of shape (B,).
    """
    y = np.asarray(y, dtype=np.intp)
    y1h = one_hot(y, ensemble.n_classes)
    kls, softs = [], []
    for i, m in enumerate(ensemble.members):
        v = m.encode(x)
        p = m.classify(v)
        soft = lcm.simulated_label_distribution(v, y1h, model_index=i)
        kls.append(kl_training_loss(soft.sld, p))
        softs.append(soft)
    return kls, softs


def total_loss(x, y, ensemble, lcm, weights, need_alignment=True):
    """Ensemble KL loss minus alpha * label diversity plus beta * gradient alignment.

    Per-example totals are averaged over the batch. Input gradients are taken
    with ``create_graph=True`` when ``beta > 0`` so the alignment term can be
    trained; otherwise they are computed detached (for reporting only) unless
    ``need_alignment`` is False.
    """
    x = T.as_tensor(x)
    if x.shape[0] == 0:
        raise ValueError("total_loss: empty batch")
    y = np.asarray(y, dtype=np.intp)
    xg = Tensor(x.data, requires_grad=True)
    kls, softs = member_terms(ensemble, lcm, xg, y)
    n = len(kls)
    per_model = [k.mean() for k in kls]
    ell_e = kls[0]
    for k in kls[1:]:
        ell_e = ell_e + k
    ell_e = ell_e / float(n)

    zero = Tensor(np.zeros(x.shape[0]))
    if n >= 2:
        ld = label_diversity_loss([truncate_sld(s.sld, y) for s in softs])
    else:
        ld = zero
    if n >= 2 and (weights.beta > 0 or need_alignment):
        train_gd = weights.beta > 0
        if train_gd:
            gx = [T.grad(T.tsum(k), [xg], create_graph=True)[0] for k in kls]
        else:
            gx = [T.grad(T.tsum(k), [xg])[0] for k in kls]
        gd = gradient_alignment_loss(gx)
        if not train_gd:
            gd = gd.detach()
    else:
        gd = zero

    total_rows = ell_e - ld * weights.alpha + gd * weights.beta
    return EnsembleLossReport(
        per_model_kl=per_model,
        mean_kl=ell_e.mean(),
        label_diversity=ld.mean(),
        gradient_alignment=gd.mean(),
        total=total_rows.mean(),
        alpha=weights.alpha,
        beta=weights.beta,
    )
