"""One JSON experiment file drives every pipeline command.

Schema (unknown keys are rejected at every level):

    {
      "dataset": "path/to/manifest.json",
      "model_kind": "spiking" | "dense",
      "network": {"preset": "sew_tiny", "classes": 4, ...}
                 | full layer grammar (see nn.network.config_from_json),
      "train": {"epochs", "batch_size", "lr", "momentum", "early_stop_acc"},
      "augment": null | {"seed", "transforms": [{"kind", "prob", ...params}]},
      "folds": {"k", "seed"},
      "seed": 0,
      "out_dir": "runs/exp",
      "validation": "heldout" | "nested",
      "sweep": {"prob": 0.5},
      "energy": {"charging": "input" | "output"}
    }

Flags may override ``seed``, ``out_dir`` and the parallelism degree; every
override is reported as a provenance line so runs remain auditable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .augment import AugmentSpec
from .nn.network import NetworkConfig, config_from_json, config_to_json, sew18, sew_tiny
from .nn.train import TrainSettings


class SchemaError(ValueError):
    """Experiment file violates the schema."""


_PRESETS = {"sew_tiny": sew_tiny, "sew18": sew18}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where} must be a JSON object")
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")


def network_from_json(obj: dict) -> NetworkConfig:
    if not isinstance(obj, dict):
        raise SchemaError("network section must be a JSON object")
    if "preset" in obj:
        obj = dict(obj)
        name = obj.pop("preset")
        builder = _PRESETS.get(name)
        if builder is None:
            raise SchemaError(f"unknown network preset {name!r}; "
                              f"known: {sorted(_PRESETS)}")
        try:
            return builder(**obj)
        except TypeError as exc:
            raise SchemaError(f"preset {name}: {exc}") from exc
    return config_from_json(obj)


@dataclass(frozen=True)
class Experiment:
    dataset: str
    network: NetworkConfig
    train: TrainSettings = TrainSettings()
    model_kind: str = "spiking"
    augment: AugmentSpec | None = None
    folds_k: int = 10
    folds_seed: int = 0
    seed: int = 0
    out_dir: str = "runs/out"
    validation: str = "heldout"
    sweep_prob: float = 0.5
    energy_charging: str = "input"

    def __post_init__(self):
        if self.model_kind not in ("spiking", "dense"):
            raise SchemaError(f"model_kind must be spiking or dense, "
                              f"got {self.model_kind!r}")
        if self.validation not in ("heldout", "nested"):
            raise SchemaError(f"validation must be heldout or nested, "
                              f"got {self.validation!r}")
        if self.energy_charging not in ("input", "output"):
            raise SchemaError(f"energy charging must be input or output, "
                              f"got {self.energy_charging!r}")
        if self.folds_k < 2:
            raise SchemaError(f"folds.k must be >= 2, got {self.folds_k}")
        if not 0.0 <= self.sweep_prob <= 1.0:
            raise SchemaError(f"sweep.prob must lie in [0, 1], got {self.sweep_prob}")

    def to_json_dict(self) -> dict:
        out = {"dataset": self.dataset, "model_kind": self.model_kind,
               "network": config_to_json(self.network),
               "train": {"epochs": self.train.epochs,
                         "batch_size": self.train.batch_size,
                         "lr": self.train.lr, "momentum": self.train.momentum,
                         "early_stop_acc": self.train.early_stop_acc},
               "augment": None if self.augment is None
               else json.loads(self.augment.to_json()),
               "folds": {"k": self.folds_k, "seed": self.folds_seed},
               "seed": self.seed, "out_dir": self.out_dir,
               "validation": self.validation,
               "sweep": {"prob": self.sweep_prob},
               "energy": {"charging": self.energy_charging}}
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


_TOP_KEYS = {"dataset", "model_kind", "network", "train", "augment", "folds",
             "seed", "out_dir", "validation", "sweep", "energy"}
_TRAIN_KEYS = {"epochs", "batch_size", "lr", "momentum", "early_stop_acc"}


def experiment_from_json(obj: dict) -> Experiment:
    _check_keys(obj, _TOP_KEYS, "experiment")
    for key in ("dataset", "network"):
        if key not in obj:
            raise SchemaError(f"experiment: missing required key {key!r}")
    network = network_from_json(obj["network"])

    train_obj = obj.get("train", {})
    _check_keys(train_obj, _TRAIN_KEYS, "train")
    try:
        settings = TrainSettings(**train_obj)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"train: {exc}") from exc

    aug_obj = obj.get("augment")
    if aug_obj is None:
        augment = None
    else:
        try:
            augment = AugmentSpec.from_json(json.dumps(aug_obj))
        except ValueError as exc:
            raise SchemaError(f"augment: {exc}") from exc

    folds_obj = obj.get("folds", {})
    _check_keys(folds_obj, {"k", "seed"}, "folds")
    sweep_obj = obj.get("sweep", {})
    _check_keys(sweep_obj, {"prob"}, "sweep")
    energy_obj = obj.get("energy", {})
    _check_keys(energy_obj, {"charging"}, "energy")

    return Experiment(
        dataset=obj["dataset"], network=network, train=settings,
        model_kind=obj.get("model_kind", "spiking"), augment=augment,
        folds_k=folds_obj.get("k", 10), folds_seed=folds_obj.get("seed", 0),
        seed=obj.get("seed", 0), out_dir=obj.get("out_dir", "runs/out"),
        validation=obj.get("validation", "heldout"),
        sweep_prob=sweep_obj.get("prob", 0.5),
        energy_charging=energy_obj.get("charging", "input"))


def load_experiment(path: str | Path,
                    overrides: dict | None = None) -> tuple[Experiment, list[str]]:
    """Parse an experiment file; apply flag overrides with provenance lines."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    exp = experiment_from_json(obj)
    provenance: list[str] = []
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        old = getattr(exp, key)
        if old != value:
            exp = replace(exp, **{key: value})
            provenance.append(f"provenance: {key} = {value!r} "
                              f"(flag override; file had {old!r})")
    # dataset paths are resolved relative to the experiment file
    if not Path(exp.dataset).is_absolute():
        exp = replace(exp, dataset=str((path.parent / exp.dataset)))
    return exp, provenance
