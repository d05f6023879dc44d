"""Acceptance criteria, one test per criterion.

Each test records a ``CRITERION n: PASS|FAIL ...`` line; the lines are
printed as they happen and repeated in the pytest terminal summary. Run
alone with ``pytest tests/test_acceptance.py -s`` (about 6 minutes on one
core, most of it criterion 6).
"""

import itertools
import math
import struct
import time

import numpy as np
import pytest

from cldl import tensor as T
from cldl.attacks import FAMILIES, AttackConfig, attack, bim, fgsm, mim, pgd
from cldl.cli import main as cli_main
from cldl.data import Dataset, IdxFormatError, load_idx, read_idx, save_idx, subset
from cldl.evaluation import mean_pairwise_grad_cos, mean_pairwise_sld_jsd
from cldl.experiment import ExperimentSpec, run_experiment
from cldl.lcm import build_lcm
from cldl.losses import (DiversityWeights, gradient_alignment_loss, jsd, label_diversity_loss,
                         total_loss)
from cldl.models import build_ensemble
from cldl.tensor import Tensor
from cldl.trainer import TrainConfig, train
from conftest import CONFIGS

RESULTS = []

# pinned tolerances
FD_STEP = 1e-5
TOL_FIRST_ORDER = 1e-4
TOL_SECOND_ORDER = 1e-3
TOL_IDENTITY = 1e-10
TOL_MIM_BIM = 1e-10
BALL_SLACK = 1e-9
CLEAN_DROP_PP = 2.0
MIN_WINNING_CELLS = 12
N_ATTACK_RUNS = 10_000


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def relu_margin(ens, lcm, x):
    """Smallest |pre-activation| over every relu in the system."""
    pre = [x.reshape(len(x), -1) @ m.params["enc.W1"].data + m.params["enc.b1"].data
           for m in ens.members]
    pre.append(lcm.params["label_table"].data @ lcm.params["net.W1"].data + lcm.params["net.b1"].data)
    return min(float(np.abs(p).min()) for p in pre)


def oracle_system():
    """2-member MLP ensemble, d=16, C=5, batch of 4 (1x4x4 inputs), shared LCM.

    Finite differences are only meaningful away from relu kinks (the input
    gradient inside l_gd jumps there), so the first seed from 2024 whose
    pre-activations all clear 100 FD steps is used.
    """
    for seed in itertools.count(2024):
        rng = np.random.default_rng(seed)
        ens = build_ensemble("mlp", 2, rng, n_classes=5, rep_dim=16, input_shape=(1, 4, 4))
        lcm = build_lcm(rng, n_classes=5, rep_dim=16, gamma=3.0)
        x = rng.random((4, 1, 4, 4))
        if relu_margin(ens, lcm, x) >= 100 * FD_STEP:
            return ens, lcm, x, np.array([0, 1, 2, 4])


def fd_all_fields(fields_fn, params):
    """Central differences of every scalar returned by ``fields_fn`` on every coordinate.

    Returns one array per field and parameter. One pair of evaluations per
    coordinate serves all fields.
    """
    out = None
    frozen = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False  # forward values only; skip taping parameter paths
    try:
        for pi, p in enumerate(params):
            flat = p.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + FD_STEP
                up = fields_fn()
                flat[k] = orig - FD_STEP
                down = fields_fn()
                flat[k] = orig
                if out is None:
                    out = {f: [np.zeros(q.shape) for q in params] for f in up}
                for f in up:
                    out[f][pi].reshape(-1)[k] = (up[f] - down[f]) / (2 * FD_STEP)
    finally:
        for p, r in zip(params, frozen):
            p.requires_grad = r
    return out


def test_criterion_1_gradient_oracle_suite():
    ens, lcm, x, y = oracle_system()
    w = DiversityWeights(alpha=1.0, beta=2.0)
    params = ens.parameters() + lcm.parameters()
    n_coords = sum(p.size for p in params)

    def fields():
        r = total_loss(Tensor(x), y, ens, lcm, w)
        vals = {f"kl{i}": k.item() for i, k in enumerate(r.per_model_kl)}
        vals.update(l_ld=r.label_diversity.item(), l_gd=r.gradient_alignment.item(),
                    total=r.total.item())
        return vals

    start = time.perf_counter()
    rep = total_loss(Tensor(x), y, ens, lcm, w)
    targets = {f"kl{i}": k for i, k in enumerate(rep.per_model_kl)}
    targets.update(l_ld=rep.label_diversity, l_gd=rep.gradient_alignment, total=rep.total)
    analytic = {f: T.grad(t, params) for f, t in targets.items()}
    numeric = fd_all_fields(fields, params)
    elapsed = time.perf_counter() - start

    tol = {"kl0": TOL_FIRST_ORDER, "kl1": TOL_FIRST_ORDER, "l_ld": TOL_FIRST_ORDER,
           "l_gd": TOL_SECOND_ORDER, "total": TOL_SECOND_ORDER}
    errs = {f: max(rel_err(a.data, n) for a, n in zip(analytic[f], numeric[f])) for f in tol}
    ok = all(errs[f] <= tol[f] for f in tol) and elapsed < 60.0
    detail = ", ".join(f"{f} {errs[f]:.1e}" for f in tol)
    report(1, ok, f"{n_coords} coordinates (relu margin {relu_margin(ens, lcm, x):.1e}); "
                  f"worst rel err {detail}; {elapsed:.1f}s (limit 60s)")
    assert ok


def test_criterion_2_double_backward_gate():
    ens, lcm, x, y = oracle_system()
    w = DiversityWeights(alpha=0.0, beta=2.0)
    params = ens.parameters() + lcm.parameters()
    rep = total_loss(Tensor(x), y, ens, lcm, w)
    analytic = T.grad(rep.total, params)
    numeric = fd_all_fields(lambda: {"total": total_loss(Tensor(x), y, ens, lcm, w).total.item()},
                            params)["total"]
    err = max(rel_err(a.data, n) for a, n in zip(analytic, numeric))
    # the second-order path must matter: dropping it (beta = 0 gradient) misses the FD values
    first_order = T.grad(total_loss(Tensor(x), y, ens, lcm, DiversityWeights()).total, params)
    gap = max(rel_err(a.data, n) for a, n in zip(first_order, numeric))
    ok = err <= TOL_SECOND_ORDER and gap > 100 * TOL_SECOND_ORDER
    report(2, ok, f"beta=2 total vs FD worst rel err {err:.1e} (tol {TOL_SECOND_ORDER:g}); "
                  f"without the grad-of-grad path the error would be {gap:.1e}")
    assert ok


def test_criterion_3_analytic_identities():
    rng = np.random.default_rng(3)
    e = np.exp(rng.normal(size=6))
    p = Tensor(e / e.sum())
    checks = {
        "JSD(p,p)=0": abs(jsd(p, p).item()),
        "JSD(disjoint)=ln2": abs(jsd(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() - math.log(2)),
        "l_gd(identical)=1": abs(gradient_alignment_loss([Tensor(rng.normal(size=9))] * 2).item() - 1),
        "l_ld(identical)=0": abs(label_diversity_loss([p, p, p]).item()),
    }
    ens, lcm, x, y = oracle_system()
    worst_identity = 0.0
    for a, b in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (2.0, 1.0), (3.5, 0.25)]:
        r = total_loss(Tensor(x), y, ens, lcm, DiversityWeights(a, b))
        lhs = r.total.item()
        rhs = r.mean_kl.item() - a * r.label_diversity.item() + b * r.gradient_alignment.item()
        worst_identity = max(worst_identity, abs(lhs - rhs))
    checks["total identity"] = worst_identity
    ok = all(v <= TOL_IDENTITY for v in checks.values())
    report(3, ok, "; ".join(f"{k} |err| {v:.1e}" for k, v in checks.items()) + f" (tol {TOL_IDENTITY:g})")
    assert ok


class _Linear:
    def __init__(self, W, b):
        self.W, self.b, self.n_classes = Tensor(W), Tensor(b), W.shape[1]

    def predict(self, x):
        x = T.as_tensor(x)
        return T.softmax(T.reshape(x, (x.shape[0], -1)) @ self.W + self.b, -1)


def test_criterion_4_projection_invariants():
    rng = np.random.default_rng(4)
    mlp = build_ensemble("mlp", 2, rng, n_classes=4, rep_dim=5, input_shape=(1, 3, 3))
    violations = 0
    counts = dict.fromkeys(FAMILIES, 0)
    start = time.perf_counter()
    for run in range(N_ATTACK_RUNS):
        family = FAMILIES[run % 4]
        if run % 5 == 0:
            model = mlp
        else:
            model = _Linear(rng.normal(scale=3.0, size=(9, 4)), rng.normal(size=4))
        eps = float(np.exp(rng.uniform(np.log(1e-4), np.log(1.0))))
        step = None if rng.random() < 0.5 else float(rng.uniform(1e-3, 1.5))
        cfg = AttackConfig(family, eps, iterations=int(rng.integers(1, 6)), step_size=step,
                           momentum=float(rng.uniform(0, 2)), seed=run)
        x = rng.random((int(rng.integers(1, 5)), 1, 3, 3))
        x[rng.random(x.shape) < 0.2] = rng.choice([0.0, 1.0])  # saturated pixels
        out = attack(model, x, rng.integers(0, 4, len(x)), cfg)
        if np.abs(out.x_adv - x).max() > eps + BALL_SLACK or out.x_adv.min() < 0 or out.x_adv.max() > 1:
            violations += 1
        counts[family] += 1
    ok = violations == 0
    report(4, ok, f"{N_ATTACK_RUNS} randomized runs {counts}; {violations} invariant violations "
                  f"({time.perf_counter() - start:.1f}s)")
    assert ok


def test_criterion_5_attack_equivalences():
    rng = np.random.default_rng(5)
    ens = build_ensemble("mlp", 2, rng, n_classes=4, rep_dim=6, input_shape=(1, 3, 3))
    x, y = rng.random((8, 1, 3, 3)), rng.integers(0, 4, 8)
    a = fgsm(ens, x, y, AttackConfig("fgsm", 0.2)).x_adv
    b = bim(ens, x, y, AttackConfig("bim", 0.2, iterations=1, step_size=0.2)).x_adv
    fgsm_eq = np.array_equal(a, b)
    a = pgd(ens, x, y, AttackConfig("pgd", 0.15, random_start=False)).x_adv
    b = bim(ens, x, y, AttackConfig("bim", 0.15)).x_adv
    pgd_eq = np.array_equal(a, b)
    worst = 0.0
    for seed in range(5):
        xs = np.random.default_rng(seed).random((8, 1, 3, 3))
        ta, tb = [], []
        mim(ens, xs, y, AttackConfig("mim", 0.15, momentum=0.0), trace=ta)
        bim(ens, xs, y, AttackConfig("bim", 0.15), trace=tb)
        worst = max(worst, max(np.abs(p - q).max() for p, q in zip(ta, tb)))
    ok = fgsm_eq and pgd_eq and worst <= TOL_MIM_BIM
    report(5, ok, f"bim(r=1,step=eps)==fgsm exactly: {fgsm_eq}; pgd(zero init)==bim exactly: {pgd_eq}; "
                  f"mim(mu=0) vs bim worst per-step diff {worst:.1e} (tol {TOL_MIM_BIM:g})")
    assert ok


@pytest.mark.slow
def test_criterion_6_desk_direction_of_effect(mnist_paths, tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    spec = ExperimentSpec(
        train_configs={"baseline": str(CONFIGS / "baseline.ini"), "cldl": str(CONFIGS / "mnist_cldl.ini")},
        surrogate_config=str(CONFIGS / "surrogate.ini"), out_dir=str(out), run_id="criterion6")
    start = time.perf_counter()
    res = run_experiment(spec)
    elapsed = time.perf_counter() - start
    base = {(r["family"], r["epsilon"]): r for r in res["results"]["baseline"]}
    cldl = {(r["family"], r["epsilon"]): r for r in res["results"]["cldl"]}
    clean_b, clean_c = base[("clean", 0.0)]["clean_accuracy"], cldl[("clean", 0.0)]["clean_accuracy"]
    cells = [k for k in cldl if k[0] != "clean"]
    wins = [k for k in cells if cldl[k]["adversarial_accuracy"] > base[k]["adversarial_accuracy"]]
    largest = max(k[1] for k in cells)
    top_wins = [k for k in wins if k[1] == largest]
    ok_a = clean_c >= clean_b - CLEAN_DROP_PP
    ok_b = len(wins) >= MIN_WINNING_CELLS and len(top_wins) == 4
    print(res["table"])
    ok = ok_a and ok_b and len(cells) == 16
    report(6, ok, f"clean {clean_c:.2f} vs baseline {clean_b:.2f} (allowed drop {CLEAN_DROP_PP:g}pp); "
                  f"CLDL wins {len(wins)}/16 cells (need {MIN_WINNING_CELLS}), {len(top_wins)}/4 at "
                  f"eps={largest:g}; n_eval={len(res['eval'])}; {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_7_diversity_effect_probes(mnist_paths):
    train_set = subset(load_idx(mnist_paths["train_images"], mnist_paths["train_labels"]), 1000, 0)
    held = subset(load_idx(mnist_paths["eval_images"], mnist_paths["eval_labels"], split="eval"), 500, 0)
    common = dict(epochs=5, batch_size=64, n_members=3, gamma=3.0, seed=0)
    models = {ab: train(TrainConfig(alpha=ab[0], beta=ab[1], **common), train_set)[:2]
              for ab in [(0.0, 0.0), (2.0, 0.0), (0.0, 1.0)]}
    jsd_ctrl = mean_pairwise_sld_jsd(*models[(0.0, 0.0)], held.images, held.labels)
    jsd_alpha = mean_pairwise_sld_jsd(*models[(2.0, 0.0)], held.images, held.labels)
    cos_ctrl = mean_pairwise_grad_cos(*models[(0.0, 0.0)], held.images, held.labels)
    cos_beta = mean_pairwise_grad_cos(*models[(0.0, 1.0)], held.images, held.labels)
    ok = jsd_alpha > jsd_ctrl and cos_beta < cos_ctrl
    report(7, ok, f"truncated-SLD JSD alpha=2 {jsd_alpha:.4f} vs control {jsd_ctrl:.4f}; "
                  f"input-grad |cos| beta=1 {cos_beta:.4f} vs control {cos_ctrl:.4f} "
                  f"(MNIST-1k, 5 epochs, seed 0, 500 held-out)")
    assert ok


def test_criterion_8_cli_determinism(mnist_paths, tmp_path):
    ini = tmp_path / "det.ini"
    ini.write_text(
        "[data]\n"
        f"train_images = {mnist_paths['train_images']}\ntrain_labels = {mnist_paths['train_labels']}\n"
        f"eval_images = {mnist_paths['eval_images']}\neval_labels = {mnist_paths['eval_labels']}\n"
        "[train]\nn_members = 2\nrep_dim = 16\ngamma = 3\nalpha = 1\nbeta = 0.5\nepochs = 1\n"
        "batch_size = 100\nn_train = 400\nseed = 11\n"
        "[attack]\nfamilies = fgsm, bim, pgd, mim\nepsilons = 0.1, 0.25\nn_examples = 100\n")
    codes = []
    for run in ("a", "b"):
        codes.append(cli_main(["train", "--config", str(ini), "--out", str(tmp_path / run)]))
    for run in ("a", "b"):
        codes.append(cli_main(["attack", "--config", str(ini), "--target", str(tmp_path / "a" / "checkpoint.cldl"),
                               "--surrogate", str(tmp_path / "b" / "checkpoint.cldl"),
                               "--out", str(tmp_path / f"{run}.csv")]))
    same_ckpt = (tmp_path / "a" / "checkpoint.cldl").read_bytes() == (tmp_path / "b" / "checkpoint.cldl").read_bytes()
    same_csv = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    ok = codes == [0, 0, 0, 0] and same_ckpt and same_csv
    report(8, ok, f"exit codes {codes}; checkpoints byte-identical: {same_ckpt}; "
                  f"attack CSVs byte-identical: {same_csv}")
    assert ok


def test_criterion_9_idx_round_trip_and_validation(tmp_path):
    rng = np.random.default_rng(9)
    d = Dataset(rng.integers(0, 256, (7, 1, 5, 6)) / 255.0, rng.integers(0, 10, 7))
    checks = {}
    for ext in ("", ".gz"):
        save_idx(d, tmp_path / f"i{ext}", tmp_path / f"l{ext}")
        back = load_idx(tmp_path / f"i{ext}", tmp_path / f"l{ext}")
        checks[f"round trip{ext or ' raw'}"] = (np.array_equal(back.images, d.images)
                                              and np.array_equal(back.labels, d.labels))
    raw = (tmp_path / "i").read_bytes()
    checks["header bytes"] = raw[:16] == struct.pack(">IIII", 0x803, 7, 5, 6)

    def rejects(images, labels):
        try:
            load_idx(images, labels)
        except IdxFormatError:
            return True
        return False

    bad = {"bad magic": raw[:2] + b"\x09" + raw[3:], "truncated": raw[:-1]}
    for name, payload in bad.items():
        (tmp_path / "bad").write_bytes(payload)
        checks[name] = rejects(tmp_path / "bad", tmp_path / "l")
    checks["labels with 0x803"] = rejects(tmp_path / "i", tmp_path / "i")
    (tmp_path / "l8").write_bytes(struct.pack(">II", 0x801, 8) + bytes(8))
    checks["count mismatch"] = rejects(tmp_path / "i", tmp_path / "l8")
    magic, arr = read_idx(tmp_path / "i")
    checks["raw pixels"] = magic == 0x803 and np.array_equal(arr, np.rint(d.images[:, 0] * 255))
    ok = all(checks.values())
    report(9, ok, ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-s", "-q"]))
