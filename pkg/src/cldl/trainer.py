"""Joint mini-batch training of ensemble members and the label confusion model."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import iterate_batches, subset
from .lcm import EPS, build_lcm
from .losses import DiversityWeights, EnsembleLossReport, total_loss
from .models import ARCHITECTURES, build_ensemble
from .optim import AdamState, adam_step, lr_schedule
from .tensor import Tensor

logger = logging.getLogger(__name__)

OBJECTIVES = ("cldl", "cross-entropy")


class NumericalAbort(RuntimeError):
    """A loss component or gradient became non-finite."""

    def __init__(self, component, epoch, step):
        super().__init__(f"non-finite {component} at epoch {epoch}, step {step}")
        self.component = component


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr_members: float = 1e-3
    lr_lcm: float = 1e-3
    weight_decay: float = 1e-4
    lr_drop_epochs: tuple = ()
    lr_drop_factor: float = 0.1
    gamma: float = 4.0
    alpha: float = 0.0
    beta: float = 0.0
    seed: int = 0
    n_members: int = 3
    arch: str = "mlp"
    rep_dim: int = 64
    objective: str = "cldl"
    n_train: int = 0  # 0 = use the whole training set
    dataset: str = "mnist"
    train_images: str = ""
    train_labels: str = ""
    extra: dict = field(default_factory=dict)

    def validate(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.lr_members <= 0 or self.lr_lcm <= 0:
            problems.append("learning rates must be > 0")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if not 0 < self.lr_drop_factor <= 1:
            problems.append("lr_drop_factor must lie in (0, 1]")
        if self.gamma < 0 or self.alpha < 0 or self.beta < 0:
            problems.append("gamma, alpha and beta must be >= 0")
        if self.n_members < 1:
            problems.append("n_members must be >= 1")
        if self.n_members < 2 and (self.alpha > 0 or self.beta > 0):
            problems.append("diversity terms need n_members >= 2")
        if self.arch not in ARCHITECTURES:
            problems.append(f"arch must be one of {ARCHITECTURES}")
        if self.objective not in OBJECTIVES:
            problems.append(f"objective must be one of {OBJECTIVES}")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def weights(self):
        return DiversityWeights(self.alpha, self.beta)


def cross_entropy_report(x, y, ensemble):
    """Mean over members of each member's cross-entropy (surrogate training)."""
    y = np.asarray(y, dtype=np.intp)
    rows = np.arange(len(y))
    per = []
    for m in ensemble.members:
        p = m.predict(x)
        per.append(T.mean(-T.log(T.clamp_min(p[rows, y], EPS))))
    mean = per[0]
    for v in per[1:]:
        mean = mean + v
    mean = mean / float(len(per))
    zero = Tensor(0.0)
    return EnsembleLossReport(per, mean, zero, zero, mean)


def _check_finite(report, epoch, step):
    for name, value in (("mean_kl", report.mean_kl), ("l_ld", report.label_diversity),
                        ("l_gd", report.gradient_alignment), ("total", report.total)):
        if not np.isfinite(value.data).all():
            raise NumericalAbort(name, epoch, step)


def train(config, dataset, progress=None):
    """Run the joint training loop.

    Every step builds one graph for the batch, takes a single backward pass
    of the total loss, then updates the members (rate ``lr_members``) and the
    LCM (rate ``lr_lcm``) from that same set of gradients.

    Returns ``(ensemble, lcm, log)``; ``lcm`` is None for the cross-entropy
    objective and ``log`` holds one dict per step.
    """
    config.validate()
    if len(dataset) == 0:
        raise ValueError("train: empty dataset")
    init_seq, lcm_seq, data_seq = np.random.SeedSequence(config.seed).spawn(3)
    if config.n_train:
        dataset = subset(dataset, config.n_train, np.random.default_rng(data_seq).integers(2**63))
    ensemble = build_ensemble(config.arch, config.n_members, np.random.default_rng(init_seq),
                              dataset.n_classes, config.rep_dim, dataset.input_shape)
    cldl = config.objective == "cldl"
    lcm = build_lcm(np.random.default_rng(lcm_seq), dataset.n_classes, config.rep_dim,
                    config.gamma) if cldl else None
    member_params = ensemble.parameters()
    lcm_params = lcm.parameters() if cldl else []
    member_state, lcm_state = AdamState(), AdamState()
    epoch_seeds = np.random.default_rng(data_seq).integers(0, 2**63, size=config.epochs)
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    weights = config.weights

    log = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        lr_m = lr_schedule(epoch, config.lr_members, config.lr_drop_epochs, config.lr_drop_factor)
        lr_l = lr_schedule(epoch, config.lr_lcm, config.lr_drop_epochs, config.lr_drop_factor)
        for xb, yb in iterate_batches(dataset, config.batch_size, int(epoch_seeds[epoch - 1])):
            step += 1
            if cldl:
                report = total_loss(xb, yb, ensemble, lcm, weights)
            else:
                report = cross_entropy_report(xb, yb, ensemble)
            _check_finite(report, epoch, step)
            grads = T.grad(report.total, member_params + lcm_params)
            if not all(np.isfinite(g.data).all() for g in grads):
                raise NumericalAbort("gradient", epoch, step)
            n = len(member_params)
            adam_step(member_params, grads[:n], member_state, lr_m, config.weight_decay)
            if cldl:
                adam_step(lcm_params, grads[n:], lcm_state, lr_l, config.weight_decay)
            row = report.row(epoch, step)
            log.append(row)
            if progress is not None:
                progress(row)
        logger.info("epoch %d/%d (%d steps): total %.4f", epoch, config.epochs,
                    steps_per_epoch, log[-1]["total"])
    return ensemble, lcm, log
