"""Desk-scale experiment: CLDL vs control under black-box transfer attacks."""

from dataclasses import dataclass, field
from pathlib import Path

from . import checkpoint
from .attacks import AttackConfig
from .cli import format_table, merge_results
from .config import load_train_config
from .data import load_idx
from .evaluation import blackbox_transfer_eval, write_results
from .trainer import train


@dataclass
class ExperimentSpec:
    train_configs: dict            # run id -> INI path
    surrogate_config: str
    out_dir: str
    families: tuple = ("bim", "fgsm", "mim", "pgd")
    epsilons: tuple = (0.1, 0.15, 0.2, 0.25)
    run_id: str = "desk"
    n_eval: int = 0
    overrides: dict = field(default_factory=dict)

    def validate(self):
        paths = list(self.train_configs.values()) + [self.surrogate_config]
        missing = [p for p in paths if not Path(p).is_file()]
        if missing:
            raise FileNotFoundError(f"missing config files: {missing}")
        if not self.epsilons:
            raise ValueError("epsilon list is empty")


def _train_from(path, overrides):
    cfg = load_train_config(path)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    data = load_idx(cfg.train_images, cfg.train_labels)
    ensemble, lcm, log = train(cfg, data)
    return cfg, ensemble, lcm, log


def run_experiment(spec):
    """Train every run and the surrogate, sweep attacks, write CSVs and a merged table.

    Returns ``{"results": {run: rows}, "models": {run: (ensemble, lcm)}, "table": str}``.
    """
    spec.validate()
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scfg, surrogate, _, _ = _train_from(spec.surrogate_config, spec.overrides)
    checkpoint.save(out / "surrogate.cldl", surrogate)
    eval_data = load_idx(scfg.extra["eval_images"], scfg.extra["eval_labels"], split="eval")
    if spec.n_eval:
        eval_data = eval_data.take(range(spec.n_eval))
    configs = [AttackConfig(f, e) for f in spec.families for e in spec.epsilons]

    results, models, paths = {}, {}, []
    for run, path in spec.train_configs.items():
        _, ens, lcm, _ = _train_from(path, spec.overrides)
        checkpoint.save(out / f"{run}.cldl", ens, lcm)
        rows = blackbox_transfer_eval(ens, surrogate, eval_data, configs)
        write_results(out / f"{run}.csv", rows)
        results[run], models[run] = rows, (ens, lcm)
        paths.append(out / f"{run}.csv")
    cols, merged = merge_results(paths, list(spec.train_configs))
    table = format_table(cols, merged)
    (out / f"{spec.run_id}_table.txt").write_text(table + "\n")
    return {"results": results, "models": models, "table": table, "eval": eval_data}
