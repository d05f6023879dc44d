"""INI configuration files.

``[train]`` keys map one-to-one onto :class:`~cldl.trainer.TrainConfig`
fields; ``[data]`` holds dataset paths (relative paths resolve against the
config file's directory); ``[attack]`` holds sweep defaults for ``cldl attack``.

    [data]
    dataset = mnist
    train_images = ../data/mnist/train-images-idx3-ubyte.gz
    train_labels = ../data/mnist/train-labels-idx1-ubyte.gz
    eval_images = ../data/mnist/eval-images-idx3-ubyte.gz
    eval_labels = ../data/mnist/eval-labels-idx1-ubyte.gz

    [train]
    objective = cldl        ; or cross-entropy (surrogate / plain ensemble)
    arch = mlp              ; or cnn-small
    n_members = 3
    rep_dim = 64
    gamma = 3
    alpha = 2
    beta = 1
    epochs = 20
    batch_size = 128
    lr_members = 1e-3
    lr_lcm = 1e-3
    weight_decay = 1e-4
    lr_drop_epochs = 10, 15
    lr_drop_factor = 0.1
    n_train = 0             ; 0 = whole training file
    seed = 1

    [attack]
    families = fgsm, bim, mim, pgd
    epsilons = 0.1, 0.15, 0.2, 0.25
    iterations = 10
    momentum = 1.0
    n_examples = 0          ; 0 = whole eval file
"""

import configparser
from dataclasses import fields
from pathlib import Path

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_INT = {"epochs", "batch_size", "seed", "n_members", "rep_dim", "n_train"}
_FLOAT = {"lr_members", "lr_lcm", "weight_decay", "lr_drop_factor", "gamma", "alpha", "beta"}
_STR = {"arch", "objective"}
_DATA = ("dataset", "train_images", "train_labels", "eval_images", "eval_labels")


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def read_ini(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cp


def _resolve(base, value):
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def data_paths(cp, base):
    out = {}
    if cp.has_section("data"):
        for key in _DATA:
            if cp.has_option("data", key):
                v = cp.get("data", key)
                out[key] = v if key == "dataset" else _resolve(base, v)
    return out


def load_train_config(path):
    """Parse ``path`` into a validated TrainConfig (plus eval paths in ``extra``)."""
    path = Path(path)
    cp = read_ini(path)
    if not cp.has_section("train"):
        raise ConfigError(f"{path}: missing [train] section")
    known = {f.name for f in fields(TrainConfig)}
    kw = {}
    try:
        for key, value in cp.items("train"):
            if key in _INT:
                kw[key] = int(value)
            elif key in _FLOAT:
                kw[key] = float(value)
            elif key in _STR:
                kw[key] = value.strip()
            elif key == "lr_drop_epochs":
                kw[key] = tuple(int(v) for v in _floats(value))
            elif key not in known:
                raise ConfigError(f"{path}: unknown key [train] {key}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    data = data_paths(cp, path.parent)
    kw["dataset"] = data.get("dataset", "mnist")
    kw["train_images"] = data.get("train_images", "")
    kw["train_labels"] = data.get("train_labels", "")
    kw["extra"] = {k: v for k, v in data.items() if k.startswith("eval_")}
    cfg = TrainConfig(**kw)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not cfg.train_images or not cfg.train_labels:
        raise ConfigError(f"{path}: [data] train_images and train_labels are required")
    for key in ("train_images", "train_labels"):
        if not Path(getattr(cfg, key)).is_file():
            raise ConfigError(f"{path}: {key} not found: {getattr(cfg, key)}")
    return cfg


def load_attack_section(path):
    """Sweep defaults from an ``[attack]`` section, plus ``[data]`` eval paths."""
    path = Path(path)
    cp = read_ini(path)
    out = data_paths(cp, path.parent)
    if cp.has_section("attack"):
        sec = cp["attack"]
        try:
            if "families" in sec:
                out["families"] = tuple(f.strip() for f in sec["families"].replace(",", " ").split())
            if "epsilons" in sec:
                out["epsilons"] = _floats(sec["epsilons"])
            for key in ("iterations", "n_examples", "seed"):
                if key in sec:
                    out[key] = int(sec[key])
            for key in ("momentum", "step_size"):
                if key in sec:
                    out[key] = float(sec[key])
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return out
