"""Cross-validated benchmark harness and the augmentation sweep.

Protocol notes, fixed here:
  - folds come from a seeded shuffle followed by contiguous slicing; the
    first (n mod k) folds take the extra sample;
  - the held-out fold doubles as the validation set for best-epoch selection
    (optimistic; reports carry the flag). A nested mode that reserves a
    separate validation fold is available;
  - every seed a cell needs is derived from (sweep seed, combination mask,
    fold) with SeedSequence, so results do not depend on execution order and
    sweep cells can run in parallel workers;
  - the 32 common-augmentation combinations are enumerated by bitmask with
    bit 0 = crop, 1 = hflip, 2 = noise, 3 = polflip, 4 = reverse;
  - ties for the best combination break toward fewer augmentations, then
    lower mask.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import COMMON_EDAS, AugmentSpec, TransformSpec
from .events import EventStream, voxelize
from .evio import DatasetManifest, load_events
from .nn.network import NetworkConfig, config_to_json, init_params
from .nn.train import TrainingDiverged, TrainSettings, accuracy, train, voxelize_set


class BenchError(RuntimeError):
    """A fold failed; message carries the cell diagnostics."""


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer coordinates."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def load_dataset(manifest: DatasetManifest) -> tuple[list[EventStream], np.ndarray]:
    streams = [load_events(manifest.path(entry)) for entry in manifest.entries]
    labels = np.asarray([entry.label for entry in manifest.entries], dtype=np.int64)
    return streams, labels


# ---------------------------------------------------------------------------
# folds

@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        flat = sorted(i for fold in self.folds for i in fold)
        if flat != list(range(len(flat))):
            raise ValueError("folds must partition range(n)")
        sizes = {len(fold) for fold in self.folds}
        if len(sizes) > 2 or (len(sizes) == 2 and max(sizes) - min(sizes) != 1):
            raise ValueError("fold sizes must differ by at most 1")

    def train_indices(self, fold: int) -> tuple[int, ...]:
        return tuple(i for j, f in enumerate(self.folds) if j != fold for i in f)


def kfold_split(n_samples: int, k: int, seed: int) -> FoldPlan:
    if n_samples < k:
        raise ValueError(f"need at least k={k} samples, got {n_samples}")
    perm = np.random.default_rng(np.random.SeedSequence([seed])).permutation(n_samples)
    base, extra = divmod(n_samples, k)
    folds, pos = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(tuple(int(j) for j in perm[pos:pos + size]))
        pos += size
    return FoldPlan(k=k, seed=seed, folds=tuple(folds))


# ---------------------------------------------------------------------------
# single-fold work unit (shared by run_cv and the sweep queue)

_DATA: tuple[list[EventStream], np.ndarray] | None = None


def _init_worker(streams: list[EventStream], labels: np.ndarray,
                 limit_threads: bool) -> None:
    global _DATA
    _DATA = (streams, labels)
    if limit_threads:
        try:
            import threadpoolctl
            threadpoolctl.threadpool_limits(1)
        except ImportError:
            pass


@dataclass(frozen=True)
class FoldTask:
    """Everything one (combination, fold) cell needs besides the dataset."""

    config: NetworkConfig
    settings: TrainSettings
    augment: AugmentSpec | None
    kind: str
    fold: int
    train_idx: tuple[int, ...]
    val_idx: tuple[int, ...]
    param_seed: int
    train_seed: int
    shuffled_eval_seed: int | None = None
    mask: int | None = None


def _run_fold(task: FoldTask) -> dict:
    streams, labels = _DATA
    config = task.config
    train_streams = [streams[i] for i in task.train_idx]
    train_labels = labels[list(task.train_idx)]
    val_tensors = voxelize_set([streams[i] for i in task.val_idx],
                               config.time_steps)
    val_labels = labels[list(task.val_idx)]
    params = init_params(config, task.param_seed, kind=task.kind)
    settings = replace(task.settings, seed=task.train_seed)
    try:
        result = train(config, params, train_streams, train_labels,
                       val_tensors, val_labels, settings,
                       augment=task.augment, kind=task.kind)
    except TrainingDiverged as exc:
        raise BenchError(
            f"fold {task.fold}"
            + (f" (combination mask {task.mask})" if task.mask is not None else "")
            + f" failed: {exc}") from exc
    if result.best_epoch < 0:  # zero-epoch run: report the initial parameters
        acc = accuracy(config, result.params, val_tensors, val_labels, task.kind)
    else:
        acc = result.best_val_acc
    out = {"fold": task.fold, "accuracy": float(acc),
           "best_epoch": result.best_epoch, "epochs_run": len(result.history),
           "train_size": len(task.train_idx), "val_size": len(task.val_idx)}
    if task.mask is not None:
        out["mask"] = task.mask
    if task.shuffled_eval_seed is not None:
        rng = np.random.default_rng(np.random.SeedSequence([task.shuffled_eval_seed]))
        shuffled = np.stack([s[rng.permutation(config.time_steps)]
                             for s in val_tensors])
        out["shuffled_accuracy"] = accuracy(config, result.params, shuffled,
                                            val_labels, task.kind)
    return out


def _execute(tasks: list[FoldTask], streams, labels, jobs: int) -> list[dict]:
    global _DATA
    if jobs <= 1 or len(tasks) <= 1:
        _DATA = (streams, labels)
        try:
            return [_run_fold(t) for t in tasks]
        finally:
            _DATA = None
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(streams, labels, True)) as pool:
        return list(pool.map(_run_fold, tasks))


# ---------------------------------------------------------------------------
# cross-validation

@dataclass
class FoldReport:
    k: int
    model_kind: str
    validation: str            # "heldout" (optimistic) or "nested"
    fold_acc: list[float]
    mean_acc: float
    per_fold: list[dict]
    echo: dict = field(default_factory=dict)
    shuffled_fold_acc: list[float] | None = None
    shuffled_mean_acc: float | None = None

    def __post_init__(self):
        if abs(self.mean_acc - float(np.mean(self.fold_acc))) > 1e-12:
            raise ValueError("stored mean does not match fold accuracies")
        if not all(0.0 <= a <= 1.0 for a in self.fold_acc):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        out = {"version": 1, "k": self.k, "model_kind": self.model_kind,
               "validation": self.validation,
               "validation_note": "best epoch selected on the reported fold "
                                  "(optimistic)" if self.validation == "heldout"
                                  else "separate validation fold",
               "fold_accuracies": self.fold_acc, "mean_accuracy": self.mean_acc,
               "folds": self.per_fold, "config": self.echo}
        if self.shuffled_fold_acc is not None:
            out["shuffled_bins_fold_accuracies"] = self.shuffled_fold_acc
            out["shuffled_bins_mean_accuracy"] = self.shuffled_mean_acc
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def run_cv(streams: list[EventStream], labels: np.ndarray, config: NetworkConfig,
           settings: TrainSettings, *, augment: AugmentSpec | None = None,
           kind: str = "spiking", k: int = 10, split_seed: int = 0,
           base_seed: int = 0, validation: str = "heldout",
           eval_shuffled_bins: bool = False, jobs: int = 1,
           echo: dict | None = None) -> FoldReport:
    """Train on k-1 folds, score the held-out fold at its best epoch.

    Training data is augmented per epoch; the evaluation fold never is.
    """
    if kind not in ("spiking", "dense"):
        raise ValueError(f"model kind must be spiking or dense, got {kind!r}")
    if validation not in ("heldout", "nested"):
        raise ValueError(f"validation must be heldout or nested, got {validation!r}")
    plan = kfold_split(len(streams), k, split_seed)
    tasks = []
    for fold in range(k):
        if validation == "nested":
            val_fold = (fold + 1) % k
            train_idx = tuple(i for j, f in enumerate(plan.folds)
                              if j not in (fold, val_fold) for i in f)
        else:
            train_idx = plan.train_indices(fold)
        tasks.append(FoldTask(
            config=config, settings=settings, augment=augment, kind=kind,
            fold=fold, train_idx=train_idx, val_idx=plan.folds[fold],
            param_seed=derive_seed(base_seed, fold, 0),
            train_seed=derive_seed(base_seed, fold, 1),
            shuffled_eval_seed=derive_seed(base_seed, fold, 2)
            if eval_shuffled_bins else None))
    if validation == "nested":
        # train on k-2 folds, select the best epoch on the spare fold, then
        # report the untouched fold
        results = _run_nested(tasks, plan, streams, labels, jobs)
    else:
        results = _execute(tasks, streams, labels, jobs)
    fold_acc = [r["accuracy"] for r in results]
    report = FoldReport(
        k=k, model_kind=kind, validation=validation, fold_acc=fold_acc,
        mean_acc=float(np.mean(fold_acc)),
        per_fold=[{key: r[key] for key in
                   ("fold", "best_epoch", "epochs_run", "train_size", "val_size")}
                  for r in results],
        echo=echo if echo is not None else {"network": config_to_json(config)})
    if eval_shuffled_bins:
        report.shuffled_fold_acc = [r["shuffled_accuracy"] for r in results]
        report.shuffled_mean_acc = float(np.mean(report.shuffled_fold_acc))
    return report


def _run_nested(tasks: list[FoldTask], plan: FoldPlan, streams, labels,
                jobs: int) -> list[dict]:
    global _DATA
    _DATA = (streams, labels)
    try:
        results = []
        for task in tasks:
            val_fold = (task.fold + 1) % plan.k
            config = task.config
            params = init_params(config, task.param_seed, kind=task.kind)
            settings = replace(task.settings, seed=task.train_seed)
            sel_tensors = voxelize_set([streams[i] for i in plan.folds[val_fold]],
                                       config.time_steps)
            sel_labels = labels[list(plan.folds[val_fold])]
            try:
                fit = train(config, params, [streams[i] for i in task.train_idx],
                            labels[list(task.train_idx)], sel_tensors, sel_labels,
                            replace(settings, seed=task.train_seed),
                            augment=task.augment, kind=task.kind)
            except TrainingDiverged as exc:
                raise BenchError(f"fold {task.fold} failed: {exc}") from exc
            test_tensors = voxelize_set([streams[i] for i in task.val_idx],
                                        config.time_steps)
            acc = accuracy(config, fit.params, test_tensors,
                           labels[list(task.val_idx)], task.kind)
            results.append({"fold": task.fold, "accuracy": float(acc),
                            "best_epoch": fit.best_epoch,
                            "epochs_run": len(fit.history),
                            "train_size": len(task.train_idx),
                            "val_size": len(task.val_idx)})
        return results
    finally:
        _DATA = None


# ---------------------------------------------------------------------------
# the 32-combination sweep

def spec_for_mask(mask: int, extra: tuple[str, ...] = (), seed: int = 0,
                  prob: float = 0.5) -> AugmentSpec | None:
    """Pipeline for one combination: active common transforms in canonical
    order, then any specific ones; None when nothing is active."""
    kinds = [name for j, name in enumerate(COMMON_EDAS) if mask >> j & 1]
    kinds += list(extra)
    if not kinds:
        return None
    return AugmentSpec(transforms=tuple(TransformSpec(kind=k, prob=prob)
                                        for k in kinds), seed=seed)


@dataclass
class SweepResult:
    k: int
    seed: int
    split_seed: int
    eda_names: tuple[str, ...]
    records: list[dict]        # mask, fold, accuracy, model_kind, best_epoch
    echo: dict = field(default_factory=dict)

    def __post_init__(self):
        want = 32 * self.k
        for kind in {r["model_kind"] for r in self.records}:
            got = sum(r["model_kind"] == kind for r in self.records)
            if got != want:
                raise ValueError(f"{kind}: expected {want} records, got {got}")
        self.records.sort(key=lambda r: (r["model_kind"], r["mask"], r["fold"]))

    def kinds(self) -> list[str]:
        return sorted({r["model_kind"] for r in self.records})

    def mean_by_mask(self, kind: str) -> dict[int, float]:
        acc: dict[int, list[float]] = {}
        for r in self.records:
            if r["model_kind"] == kind:
                acc.setdefault(r["mask"], []).append(r["accuracy"])
        return {m: float(np.mean(v)) for m, v in acc.items()}

    def best_mask(self, kind: str) -> int:
        means = self.mean_by_mask(kind)
        return min(means, key=lambda m: (-means[m], bin(m).count("1"), m))

    def arrays(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.records if r["model_kind"] == kind]
        return (np.array([r["mask"] for r in rows]),
                np.array([r["accuracy"] for r in rows]))

    def to_json_dict(self) -> dict:
        return {"version": 1, "k": self.k, "seed": self.seed,
                "split_seed": self.split_seed, "eda_names": list(self.eda_names),
                "records": self.records, "config": self.echo}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SweepResult":
        allowed = {"version", "k", "seed", "split_seed", "eda_names", "records",
                   "config"}
        unknown = set(obj) - allowed
        if unknown:
            raise ValueError(f"unknown sweep result keys: {sorted(unknown)}")
        return cls(k=obj["k"], seed=obj["seed"], split_seed=obj["split_seed"],
                   eda_names=tuple(obj["eda_names"]), records=list(obj["records"]),
                   echo=obj.get("config", {}))


def format_sweep_text(result: SweepResult) -> str:
    lines = [f"sweep: k={result.k}, {len(result.records)} records, "
             f"bit order {', '.join(result.eda_names)}"]
    for kind in result.kinds():
        means = result.mean_by_mask(kind)
        best = result.best_mask(kind)
        lines.append(f"[{kind}]")
        lines.append(f"{'mask':>5s} {'combination':<40s} {'mean acc':>9s}")
        for mask in sorted(means):
            combo = [n for j, n in enumerate(result.eda_names) if mask >> j & 1]
            name = "+".join(combo) if combo else "(none)"
            star = " <- best" if mask == best else ""
            lines.append(f"{mask:>5d} {name:<40s} {means[mask]:>9.4f}{star}")
    return "\n".join(lines) + "\n"


def sweep_common_eda(streams: list[EventStream], labels: np.ndarray,
                     config: NetworkConfig, settings: TrainSettings, *,
                     kind: str = "spiking", k: int = 10, split_seed: int = 0,
                     sweep_seed: int = 0, prob: float = 0.5, jobs: int = 1,
                     echo: dict | None = None) -> SweepResult:
    """All 2^5 common-augmentation subsets x k folds; 32k score records."""
    plan = kfold_split(len(streams), k, split_seed)
    tasks = []
    for mask in range(32):
        cell_seed = derive_seed(sweep_seed, mask)
        augment = spec_for_mask(mask, seed=cell_seed, prob=prob)
        for fold in range(k):
            tasks.append(FoldTask(
                config=config, settings=settings, augment=augment, kind=kind,
                fold=fold, train_idx=plan.train_indices(fold),
                val_idx=plan.folds[fold],
                param_seed=derive_seed(cell_seed, fold, 0),
                train_seed=derive_seed(cell_seed, fold, 1), mask=mask))
    results = _execute(tasks, streams, labels, jobs)
    records = [{"mask": r["mask"], "fold": r["fold"], "accuracy": r["accuracy"],
                "best_epoch": r["best_epoch"], "model_kind": kind}
               for r in results]
    return SweepResult(k=k, seed=sweep_seed, split_seed=split_seed,
                       eda_names=COMMON_EDAS, records=records,
                       echo=echo if echo is not None
                       else {"network": config_to_json(config)})


def run_specific_eda(streams: list[EventStream], labels: np.ndarray,
                     config: NetworkConfig, settings: TrainSettings,
                     sweep: SweepResult, which: str = "none", *,
                     kind: str = "spiking", jobs: int = 1) -> FoldReport:
    """Re-run CV on the sweep's best combination with specific augmentations
    appended; which = none | eventdrop | eventdrop+mirror."""
    extras = {"none": (), "eventdrop": ("eventdrop",),
              "eventdrop+mirror": ("eventdrop", "mirror")}
    if which not in extras:
        raise ValueError(f"which must be one of {sorted(extras)}, got {which!r}")
    mask = sweep.best_mask(kind)
    cell_seed = derive_seed(sweep.seed, mask)
    augment = spec_for_mask(mask, extra=extras[which], seed=cell_seed)
    pipeline = [n for j, n in enumerate(sweep.eda_names) if mask >> j & 1]
    pipeline += list(extras[which])
    report = run_cv(streams, labels, config, settings, augment=augment,
                    kind=kind, k=sweep.k, split_seed=sweep.split_seed,
                    base_seed=cell_seed, jobs=jobs,
                    echo={"best_mask": mask, "pipeline": pipeline,
                          "which": which, "network": config_to_json(config)})
    return report
