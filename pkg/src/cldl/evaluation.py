"""Clean accuracy and black-box transfer evaluation."""

import csv
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import tensor as T
from .attacks import attack
from .losses import gradient_alignment_loss, jsd, member_terms, truncate_sld
from .tensor import Tensor

RESULT_FIELDS = ("dataset", "family", "epsilon", "n_examples", "clean_accuracy",
                 "adversarial_accuracy")


def predict_labels(model, images, batch_size=500):
    out = []
    with T.no_grad():
        for start in range(0, len(images), batch_size):
            p = model.predict(Tensor(images[start:start + batch_size]))
            out.append(p.data.argmax(axis=-1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


def accuracy(model, images, labels, batch_size=500):
    """Percentage of examples whose argmax prediction equals the label."""
    if len(labels) == 0:
        return float("nan")
    return 100.0 * float(np.mean(predict_labels(model, images, batch_size) == labels))


def craft(surrogate, images, labels, config, batch_size=500):
    """Adversarial examples generated against ``surrogate`` only."""
    parts = []
    for start in range(0, len(images), batch_size):
        sl = slice(start, start + batch_size)
        parts.append(attack(surrogate, images[sl], labels[sl], config).x_adv)
    return np.concatenate(parts)


def blackbox_transfer_eval(target, surrogate, dataset, configs, dataset_name="mnist",
                           batch_size=500, workers=1):
    """Target ensemble accuracy on examples crafted against an independent surrogate.

    Returns result rows: one ``clean`` row, then one per attack config.
    """
    if target.n_classes != surrogate.n_classes:
        raise ValueError(f"class count mismatch: target {target.n_classes}, "
                         f"surrogate {surrogate.n_classes}")
    configs = list(configs)
    target = target.snapshot()
    surrogate = surrogate.snapshot()
    x, y = dataset.images, dataset.labels
    clean = accuracy(target, x, y, batch_size)

    def cell(cfg):
        x_adv = craft(surrogate, x, y, cfg, batch_size)
        return accuracy(target, x_adv, y, batch_size)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            adv = list(pool.map(cell, configs))
    else:
        adv = [cell(cfg) for cfg in configs]

    rows = [_row(dataset_name, "clean", 0.0, len(y), clean, clean)]
    rows += [_row(dataset_name, cfg.family, cfg.epsilon, len(y), clean, acc)
             for cfg, acc in zip(configs, adv)]
    return rows


def _row(dataset, family, eps, n, clean, adv):
    return {"dataset": dataset, "family": family, "epsilon": float(eps), "n_examples": int(n),
            "clean_accuracy": clean, "adversarial_accuracy": adv}


def write_results(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_results(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"{path}: columns {reader.fieldnames} do not match {list(RESULT_FIELDS)}")
        rows = []
        for r in reader:
            rows.append({"dataset": r["dataset"], "family": r["family"],
                         "epsilon": float(r["epsilon"]), "n_examples": int(r["n_examples"]),
                         "clean_accuracy": float(r["clean_accuracy"]),
                         "adversarial_accuracy": float(r["adversarial_accuracy"])})
    return rows


def mean_pairwise_sld_jsd(ensemble, lcm, images, labels):
    """Mean over examples and member pairs of JSD between truncated soft labels."""
    with T.no_grad():
        _, softs = member_terms(ensemble, lcm, Tensor(images), labels)
        t = [truncate_sld(s.sld, labels) for s in softs]
        vals = [jsd(t[i], t[j]).data for i in range(len(t)) for j in range(i + 1, len(t))]
    return float(np.mean(vals))


def mean_pairwise_grad_cos(ensemble, lcm, images, labels):
    """Mean over examples and member pairs of |cos| between member input gradients.

    Gradients are of each member's own training loss (KL to its soft label).
    """
    xt = Tensor(images, requires_grad=True)
    kls, _ = member_terms(ensemble, lcm, xt, labels)
    grads = [T.grad(T.tsum(k), [xt])[0] for k in kls]
    with T.no_grad():
        return float(gradient_alignment_loss(grads).data.mean())
