# -*- coding: utf-8 -*-

"""
Runs every (method, seed) cell of an experiment on a shared task stream and a shared pretrained
backbone per seed, and gathers the per-run records and the across-seed statistics.
"""

import copy
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from ..errors import TrainingError
from ..model import BackboneModel
from ..projector import SpectrumTrace
from ..rng import SeedTree
from .metrics import AccuracyMatrix, final_metrics, seed_statistics
from .stream import SyntheticTaskSpec, TaskStream, generate_task_stream
from .trainer import (
    MethodConfig,
    PretrainSpec,
    ProjectionState,
    end_of_task_update,
    evaluate,
    pretrain_backbone,
    task_local_loss,
    train_task,
)

log = logging.getLogger("experiment")

# tasks whose training loss is recomputed after every later task
DRIFT_TASKS = (0, 1)


@dataclass(frozen=True)
class ModelSpec:
    dim: int = 32
    heads: int = 4
    layers: int = 2
    prompts: int = 4
    mlp_ratio: int = 4
    ln_eps: float = 1e-6
    prompt_scale: float = 0.1


@dataclass
class RunRecord:
    """
    Everything measured in one (method, seed) run.
    """

    label: str
    method: MethodConfig
    seed: int
    accuracy: AccuracyMatrix
    final_accuracy: Optional[float] = None
    final_forgetting: Optional[float] = None
    # (after_task, task, loss), 0-based tasks
    loss_drift: List[Tuple[int, int, float]] = field(default_factory=list)
    # (task, layer) -> worst relative residuals of the applied updates
    residuals: Dict[Tuple[int, int], Tuple[float, float]] = field(default_factory=dict)
    spectrum: SpectrumTrace = field(default_factory=SpectrumTrace)
    fingerprint: str = ""
    wall_clock: float = 0.0

    def loss_increase(self, task: int = 0) -> Optional[float]:
        """
        Training loss of `task` after the last task minus its loss right after its own training.
        """
        series = [(after, loss) for after, t, loss in self.loss_drift if t == task]
        if len(series) < 2:
            return None
        return series[-1][1] - series[0][1]

    def max_residuals(self) -> Tuple[float, float]:
        if not self.residuals:
            return 0.0, 0.0
        return max(r[0] for r in self.residuals.values()), max(r[1] for r in self.residuals.values())

    def zero_nullity_warnings(self) -> List[str]:
        return [
            f"task {r.task + 1}, layer {r.layer}, {r.covariance}: nullity 0"
            for r in self.spectrum.zero_nullities()
        ]


@dataclass
class MethodSummary:
    label: str
    accuracy_mean: Optional[float]
    accuracy_std: Optional[float]
    forgetting_mean: Optional[float]
    forgetting_std: Optional[float]
    loss_increase_mean: Optional[float]
    runs: int


@dataclass
class ExperimentReport:
    runs: List[RunRecord] = field(default_factory=list)

    def labels(self) -> List[str]:
        return list(dict.fromkeys(r.label for r in self.runs))

    def by_label(self, label: str) -> List[RunRecord]:
        return [r for r in self.runs if r.label == label]

    def summary(self) -> List[MethodSummary]:
        result = []
        for label in self.labels():
            runs = self.by_label(label)
            acc_mean, acc_std = seed_statistics([r.final_accuracy for r in runs])
            fgt_mean, fgt_std = seed_statistics([r.final_forgetting for r in runs])
            drift_mean, _ = seed_statistics([r.loss_increase(0) for r in runs])
            result.append(MethodSummary(label, acc_mean, acc_std, fgt_mean, fgt_std, drift_mean, len(runs)))
        return result


class BackboneCache:
    """
    One initialized (and optionally pretrained) frozen backbone per seed; every run receives a deep
    copy so all methods of a seed start from identical weights.
    """

    def __init__(self, model_spec: ModelSpec, stream_spec: SyntheticTaskSpec, pretrain: PretrainSpec, silent: bool = True):
        self.model_spec = model_spec
        self.stream_spec = stream_spec
        self.pretrain = pretrain
        self.silent = silent
        self._models: Dict[int, BackboneModel] = {}

    def _build(self, stream: TaskStream) -> BackboneModel:
        seeds = SeedTree(stream.seed)
        m = self.model_spec
        model = BackboneModel(
            dim=m.dim,
            heads=m.heads,
            layers=m.layers,
            prompts=m.prompts,
            patch_dim=self.stream_spec.patch_dim,
            num_patches=self.stream_spec.num_patches,
            mlp_ratio=m.mlp_ratio,
            ln_eps=m.ln_eps,
            prompt_scale=m.prompt_scale,
            generator=seeds.generator("backbone", purpose="init"),
        )
        if self.pretrain.enabled and stream.pretext is not None:
            log.info(f"Pretraining the backbone for seed {stream.seed} on {stream.pretext.num_classes} pretext classes.")
            pretrain_backbone(model, stream.pretext, self.pretrain, seeds, silent=self.silent)
        else:
            model.freeze_backbone()
        return model

    def get(self, stream: TaskStream) -> BackboneModel:
        if stream.seed not in self._models:
            self._models[stream.seed] = self._build(stream)
        return copy.deepcopy(self._models[stream.seed])


def run_method(
    stream: TaskStream, model: BackboneModel, method: MethodConfig, label: str = None, silent: bool = True
) -> RunRecord:
    """
    Train all tasks of the stream in order and record accuracies, loss drift, residuals and
    spectra. The backbone fingerprint is verified after every task.
    """
    seeds = SeedTree(stream.seed)
    record = RunRecord(
        label=label or method.method,
        method=method,
        seed=stream.seed,
        accuracy=AccuracyMatrix(len(stream)),
        fingerprint=model.fingerprint(),
    )
    start = time.perf_counter()
    state = ProjectionState.initial(model, method)
    for task in tqdm(stream.tasks, desc=f"{record.label} seed {stream.seed}", unit="task", disable=silent, leave=False):
        result = train_task(model, state, task, method, seeds, silent=silent)
        for layer, res in result.residuals.items():
            record.residuals[(task.index, layer)] = res
        end_of_task_update(model, task, state, method, seeds)

        if model.fingerprint() != record.fingerprint:
            raise TrainingError("The frozen backbone changed during training", dict(task=task.index))
        record.accuracy.set_row(task.index, evaluate(model, stream, task.index))
        for t in DRIFT_TASKS:
            if t <= task.index:
                record.loss_drift.append((task.index, t, task_local_loss(model, stream.tasks[t], method.temperature)))
        log.info(
            f"{record.label} seed {stream.seed}, task {task.index + 1}/{len(stream)}: "
            f"accuracies {', '.join(f'{a:.3f}' for a in record.accuracy.row(task.index))}"
        )

    record.spectrum = state.trace
    record.final_accuracy, record.final_forgetting = final_metrics(record.accuracy)
    record.wall_clock = time.perf_counter() - start
    return record


def run_experiment(
    stream_spec: SyntheticTaskSpec,
    model_spec: ModelSpec,
    pretrain: PretrainSpec,
    methods: Sequence[Tuple[str, MethodConfig]],
    seeds: Sequence[int],
    on_run: Callable[[RunRecord], None] = None,
    silent: bool = True,
) -> ExperimentReport:
    """
    Run every (label, method) pair for every seed. All methods of a seed share the task stream and
    the backbone. `on_run` is called with each finished record, before the next run starts.
    """
    report = ExperimentReport()
    cache = BackboneCache(model_spec, stream_spec, pretrain, silent=silent)
    cells = [(seed, label, method) for seed in seeds for label, method in methods]
    stream = None
    for seed, label, method in tqdm(cells, desc="runs", unit="run", disable=silent):
        if stream is None or stream.seed != seed:
            stream = generate_task_stream(replace(stream_spec, seed=seed))
        record = run_method(stream, cache.get(stream), method, label=label, silent=silent)
        report.runs.append(record)
        if on_run is not None:
            on_run(record)
    return report
