"""Run configuration: JSON documents validated against a published schema."""

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from .data import SyntheticSpec
from .losses import LossConfig, LossVariant
from .memory import MemVirConfig, Mode
from .model import OptimizerKind

OUTPUT_ROOT_ENV = "MEMVIR_OUTPUT_ROOT"

# Independent RNG streams; stream ids are part of the reproducibility contract.
RNG_STREAMS = {"data": 0, "init": 1, "sampler": 2, "subset": 3}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """PCG64 generator for a named stream, seeded by ``SeedSequence([seed, stream_id])``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), RNG_STREAMS[name]])))


_count = {"type": "integer", "minimum": 0}
_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "memvir run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "num_train_classes": _pos_int,
                        "num_test_classes": _pos_int,
                        "samples_per_class": {"type": "integer", "minimum": 2},
                        "input_dim": _pos_int,
                        "cluster_spread": _pos_num,
                        "center_scale": _pos_num,
                    },
                },
                "train_path": {"type": "string"},
                "test_path": {"type": "string"},
            },
            "oneOf": [
                {"required": ["synthetic"], "not": {"anyOf": [{"required": ["train_path"]}, {"required": ["test_path"]}]}},
                {"required": ["train_path", "test_path"], "not": {"required": ["synthetic"]}},
            ],
        },
        "class_ratio": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": "array", "items": _pos_int},
                "embedding_dim": _pos_int,
                "leaky_slope": {"type": "number", "minimum": 0},
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": [v.value for v in LossVariant]},
                "gamma": _pos_num,
                "margin": {"type": ["number", "null"], "minimum": 0},
                "curricular_momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "proxy_anchor_alpha": _pos_num,
                "proxy_anchor_delta": {"type": "number"},
            },
        },
        "memvir": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_steps": _count,
                "margin": _count,
                "warmup_epochs": _count,
                "warmup_steps": _count,
                "mode": {"enum": [m.value for m in Mode]},
            },
            "not": {"required": ["warmup_epochs", "warmup_steps"]},
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": [k.value for k in OptimizerKind]},
                "learning_rate": _pos_num,
                "lr_decay": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["factor", "every_steps"],
                    "properties": {"factor": _pos_num, "every_steps": _pos_int},
                },
            },
        },
        "batch_size": _pos_int,
        "classes_per_batch": _pos_int,
        "epochs": _pos_int,
        "steps_per_epoch": _pos_int,
        "eval_every": _pos_int,
        "recall_ks": {"type": "array", "items": _pos_int, "minItems": 1},
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = field(default_factory=SyntheticSpec)
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    class_ratio: float = 1.0
    hidden: List[int] = field(default_factory=lambda: [64])
    embedding_dim: int = 16
    leaky_slope: float = 0.01
    loss: LossConfig = field(default_factory=LossConfig)
    n_steps: int = 1
    margin: int = 10
    warmup_epochs: Optional[int] = None
    warmup_steps: Optional[int] = None
    mode: Mode = Mode.FULL
    optimizer: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 1e-3
    lr_decay: Optional[dict] = None
    batch_size: int = 40
    classes_per_batch: int = 10
    epochs: int = 10
    steps_per_epoch: Optional[int] = None
    eval_every: int = 50
    recall_ks: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    raw: dict = field(default_factory=dict, repr=False)

    def memvir_config(self, steps_per_epoch: int) -> MemVirConfig:
        return MemVirConfig(self.n_steps, self.margin, self.warmup_in_steps(steps_per_epoch), self.mode)

    def warmup_in_steps(self, steps_per_epoch: int) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        if self.warmup_epochs is not None:
            return self.warmup_epochs * steps_per_epoch
        return 0

    def resolve_output_dir(self, override=None) -> Path:
        out = override or self.output_dir or "runs/default"
        root = os.environ.get(OUTPUT_ROOT_ENV)
        path = Path(out)
        if root and not path.is_absolute():
            path = Path(root) / path
        return path


def parse_config(doc: dict) -> RunConfig:
    """Validate ``doc`` against :data:`CONFIG_SCHEMA` and build a RunConfig."""
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None

    kw = {"raw": copy.deepcopy(doc)}
    for key in ("seed", "output_dir", "class_ratio", "batch_size", "classes_per_batch", "epochs",
                "steps_per_epoch", "eval_every", "recall_ks"):
        if key in doc:
            kw[key] = doc[key]
    data = doc.get("data", {"synthetic": {}})
    if "synthetic" in data:
        kw["synthetic"] = SyntheticSpec(**data["synthetic"], seed=doc.get("seed", 0))
    else:
        kw["synthetic"] = None
        kw["train_path"] = data["train_path"]
        kw["test_path"] = data["test_path"]
    model = doc.get("model", {})
    for key in ("hidden", "embedding_dim", "leaky_slope"):
        if key in model:
            kw[key] = model[key]
    try:
        kw["loss"] = LossConfig(**doc.get("loss", {}))
    except ValueError as exc:
        raise ConfigError(f"invalid loss config: {exc}") from None
    mv = doc.get("memvir", {})
    for key in ("n_steps", "margin", "warmup_epochs", "warmup_steps"):
        if key in mv:
            kw[key] = mv[key]
    if "mode" in mv:
        kw["mode"] = Mode(mv["mode"])
    opt = doc.get("optimizer", {})
    if "kind" in opt:
        kw["optimizer"] = OptimizerKind(opt["kind"])
    if "learning_rate" in opt:
        kw["learning_rate"] = opt["learning_rate"]
    if "lr_decay" in opt:
        kw["lr_decay"] = opt["lr_decay"]
    cfg = RunConfig(**kw)
    if cfg.batch_size % cfg.classes_per_batch:
        raise ConfigError(f"batch_size {cfg.batch_size} not divisible by classes_per_batch {cfg.classes_per_batch}")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(doc)


def set_by_path(doc: dict, dotted: str, value):
    """Set ``doc['a']['b'] = value`` for ``dotted='a.b'``, creating dicts on the way."""
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
