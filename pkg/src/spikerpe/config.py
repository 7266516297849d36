"""INI experiment configs: one section per module, unknown keys rejected."""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .tasks import Task
from .train import TrainConfig

OUT_ENV = "SPIKERPE_OUT"

_MODEL_KEYS = (
    "blocks",
    "d_model",
    "d_ffn",
    "time_steps",
    "pe_variant",
    "gray_bits",
    "grid_h",
    "grid_w",
    "gray_bits_h",
    "gray_bits_w",
    "sigma",
    "readout",
    "precision",
)
_NEURON_KEYS = ("tau", "u_thr", "u_reset", "surrogate_alpha")
_TASK_KEYS = tuple(f.name for f in fields(Task) if f.name != "seed")
_TRAIN_KEYS = ("epochs", "lr", "batch_size", "weight_decay", "min_lr", "target_accuracy")
_EXPERIMENT_KEYS = ("name", "seed", "seeds")

SECTIONS = {
    "experiment": _EXPERIMENT_KEYS,
    "task": _TASK_KEYS,
    "model": _MODEL_KEYS,
    "neuron": _NEURON_KEYS,
    "train": _TRAIN_KEYS,
}


def _coerce(value: str, like):
    v = value.strip()
    if v.lower() in ("none", ""):
        return None
    if isinstance(like, bool):
        return v.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(v)
    if isinstance(like, float):
        return float(v)
    return v


_TYPES = {
    **{k: 0 for k in ("blocks", "d_model", "d_ffn", "time_steps", "gray_bits", "grid_h", "grid_w", "gray_bits_h", "gray_bits_w")},
    **{k: "" for k in ("pe_variant", "sigma", "readout", "precision", "name")},
    **{k: 0.0 for k in _NEURON_KEYS},
    "length": 0,
    "vocab": 0,
    "k": 0,
    "horizon": 0,
    "n_channels": 0,
    "noise_std": 0.0,
    "n_train": 0,
    "n_val": 0,
    "epochs": 0,
    "lr": 0.0,
    "batch_size": 0,
    "weight_decay": 0.0,
    "min_lr": 0.0,
    "target_accuracy": 0.0,
    "seed": 0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seeds: tuple[int, ...]
    task: Task
    model: ModelConfig
    train: TrainConfig

    @property
    def seed(self) -> int:
        return self.seeds[0]

    def canonical(self) -> dict:
        return {
            "name": self.name,
            "seeds": list(self.seeds),
            "task": asdict(self.task),
            "model": asdict(self.model),
            "train": asdict(self.train),
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()[:16]

    def out_dir(self, root: str | Path | None = None) -> Path:
        root = Path(root or os.environ.get(OUT_ENV, "runs"))
        return root / f"{self.name}-{self.digest()}"

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(
            self,
            seeds=(seed,),
            task=replace(self.task, seed=seed),
            train=replace(self.train, seed=seed),
        )

    def with_variant(self, variant: str) -> ExperimentConfig:
        try:
            return replace(self, model=replace(self.model, pe_variant=variant))
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e
    raw: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        allowed = SECTIONS[section]
        raw[section] = {}
        for key, value in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            if key == "seeds":
                continue
            try:
                raw[section][key] = _coerce(value, _TYPES[key])
            except ValueError as e:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {value!r}") from e
    exp = raw.get("experiment", {})
    if exp.get("seed") is None:
        raise ConfigError(f"{source}: [experiment] seed is mandatory")
    seed = exp["seed"]
    seeds_raw = cp.get("experiment", "seeds", fallback=None) if cp.has_section("experiment") else None
    if seeds_raw:
        try:
            seeds = tuple(int(s) for s in seeds_raw.replace(",", " ").split())
        except ValueError as e:
            raise ConfigError(f"{source}: seeds must be integers") from e
    else:
        seeds = (seed,)
    task_kw = {k: v for k, v in raw.get("task", {}).items() if v is not None}
    if "name" not in task_kw or "length" not in task_kw:
        raise ConfigError(f"{source}: [task] needs name and length")
    try:
        task = Task(seed=seed, **task_kw)
        model_kw = {k: v for k, v in raw.get("model", {}).items() if v is not None}
        model_kw.update({k: v for k, v in raw.get("neuron", {}).items() if v is not None})
        if "sigma" in model_kw:
            model_kw["sigma"] = str(model_kw["sigma"])
        model = ModelConfig(
            length=task.length,
            in_features=task.features,
            n_outputs=task.n_outputs,
            head=task.kind,
            **model_kw,
        )
        train_kw = {k: v for k, v in raw.get("train", {}).items() if v is not None}
        train = TrainConfig(seed=seed, **train_kw)
        if task.name not in ("offset_copy", "sinusoid"):
            raise ConfigError(f"unknown task {task.name!r}")
        task._generate(1, 0)  # validates ranges
    except TypeError as e:
        raise ConfigError(f"{source}: {e}") from e
    return ExperimentConfig(exp.get("name") or "run", seeds, task, model, train)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, str(p))
