"""Command-line entry point: ``cldl {train,attack,eval,compare}``.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical abort.
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import checkpoint
from .attacks import FAMILIES, AttackConfig
from .config import ConfigError, load_attack_section, load_train_config
from .data import IdxFormatError, load_idx, subset
from .evaluation import (accuracy, blackbox_transfer_eval, read_results,
                         write_results)
from .losses import REPORT_FIELDS
from .trainer import NumericalAbort, train

logger = logging.getLogger("cldl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _csv_list(text, cast=str):
    return tuple(cast(t) for t in text.replace(",", " ").split())


def cmd_train(args):
    cfg = load_train_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    data = load_idx(cfg.train_images, cfg.train_labels, split="train")
    out = Path(args.out or Path("runs") / Path(args.config).stem)
    ensemble, lcm, log = train(cfg, data)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / "checkpoint.cldl", ensemble, lcm)
    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in log:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    print(f"wrote {out / 'checkpoint.cldl'} ({len(log)} steps, final total {log[-1]['total']:.4f})")


def _eval_data(args, section):
    images = args.images or section.get("eval_images")
    labels = args.labels or section.get("eval_labels")
    if not images or not labels:
        raise UsageError("evaluation data needed: pass --images/--labels or a --config with [data] eval paths")
    data = load_idx(images, labels, split="eval")
    n = args.n_examples if args.n_examples is not None else section.get("n_examples", 0)
    if n:
        data = subset(data, n, 0)
    return data


def cmd_attack(args):
    section = load_attack_section(args.config) if args.config else {}
    families = _csv_list(args.families) if args.families else section.get("families", FAMILIES)
    epsilons = _csv_list(args.epsilons, float) if args.epsilons else section.get("epsilons", ())
    if not families or not epsilons:
        raise UsageError("empty attack sweep: give at least one family and one epsilon")
    bad = [f for f in families if f not in FAMILIES]
    if bad:
        raise UsageError(f"unknown attack families: {', '.join(bad)}")
    seed = args.seed if args.seed is not None else section.get("seed", 0)
    configs = [AttackConfig(f, e, iterations=section.get("iterations", 10),
                            step_size=section.get("step_size"), momentum=section.get("momentum", 1.0),
                            seed=seed)
               for f in families for e in epsilons]
    target, _ = checkpoint.load(args.target)
    surrogate, _ = checkpoint.load(args.surrogate)
    data = _eval_data(args, section)
    rows = blackbox_transfer_eval(target, surrogate, data, configs,
                                  dataset_name=section.get("dataset", "mnist"), workers=args.workers)
    out = Path(args.out or "results.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results(out, rows)
    for r in rows:
        print(f"{r['family']:>6} eps={r['epsilon']:<5g} acc={r['adversarial_accuracy']:6.2f}%")


def cmd_eval(args):
    section = load_attack_section(args.config) if args.config else {}
    ensemble, _ = checkpoint.load(args.target)
    data = _eval_data(args, section)
    lines = [("ensemble", accuracy(ensemble, data.images, data.labels))]
    lines += [(f"member{i}", accuracy(m, data.images, data.labels))
              for i, m in enumerate(ensemble.members)]
    for name, acc in lines:
        print(f"{name:>9}: {acc:6.2f}%")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("model", "n_examples", "clean_accuracy"))
            for name, acc in lines:
                w.writerow((name, len(data), repr(acc)))


def merge_results(paths, names=None):
    """Rows keyed by (family, epsilon); one accuracy column per run."""
    names = list(names) if names else [Path(p).stem for p in paths]
    if len(names) != len(paths):
        raise UsageError("--names must match the number of CSV files")
    seen = {}
    cols = []
    for n in names:
        seen[n] = seen.get(n, 0) + 1
        cols.append(n if seen[n] == 1 else f"{n}#{seen[n]}")
    table = {}
    order = {"clean": -1} | {f: i for i, f in enumerate(FAMILIES)}
    for col, path in zip(cols, paths):
        for r in read_results(path):
            table.setdefault((r["family"], r["epsilon"]), {})[col] = r["adversarial_accuracy"]
    keys = sorted(table, key=lambda k: (order.get(k[0], len(order)), k[0], k[1]))
    return cols, [(k[0], k[1], [table[k].get(c) for c in cols]) for k in keys]


def format_table(cols, rows):
    head = ["family", "epsilon"] + cols
    body = [[fam, f"{eps:g}"] + ["" if v is None else f"{v:.2f}" for v in vals]
            for fam, eps, vals in rows]
    widths = [max(len(str(r[i])) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: "  ".join(str(v).rjust(w) for v, w in zip(r, widths))
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in body])


def cmd_compare(args):
    try:
        cols, rows = merge_results(args.csvs, _csv_list(args.names) if args.names else None)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print("Classification accuracy (%)")
    print(format_table(cols, rows))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["family", "epsilon"] + cols)
            for fam, eps, vals in rows:
                w.writerow([fam, repr(eps)] + ["" if v is None else repr(v) for v in vals])


def build_parser():
    ap = argparse.ArgumentParser(prog="cldl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an ensemble (CLDL or cross-entropy) from an INI config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default runs/<config stem>)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    def data_flags(p):
        p.add_argument("--config", help="INI file with [data] eval paths and [attack] defaults")
        p.add_argument("--images")
        p.add_argument("--labels")
        p.add_argument("--n-examples", type=int, dest="n_examples")

    p = sub.add_parser("attack", help="black-box transfer sweep: craft on --surrogate, score --target")
    p.add_argument("--target", required=True)
    p.add_argument("--surrogate", required=True)
    data_flags(p)
    p.add_argument("--families")
    p.add_argument("--epsilons")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="clean accuracy of an ensemble and its members")
    p.add_argument("--target", required=True)
    data_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="merge result CSVs into one table")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--names", help="comma-separated column names (default: file stems)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalAbort as exc:
        print(f"cldl: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, UsageError, checkpoint.CheckpointError, IdxFormatError,
            FileNotFoundError, ValueError) as exc:
        print(f"cldl: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
