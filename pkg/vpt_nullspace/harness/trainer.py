# -*- coding: utf-8 -*-

"""
The per-task training loop: candidate prompt updates from the optimizer, projection of the
candidate into the null spaces of the finished tasks, condition audit of every applied update,
and the end-of-task covariance and projector refresh.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from torch.optim.lr_scheduler import MultiStepLR
from tqdm import tqdm

from ..errors import ConfigError, ContractViolation, TrainingError
from ..lnconstraint import PromptDistributionTarget, report_drift
from ..model import BackboneModel, ClassifierHead, LossSpec, collect_projection_inputs, head_offset, prompt_gradients
from ..numeric import eye
from ..optim import OPTIMIZERS, ProjectedPromptOptimizer
from ..projector import CovariancePair, NullityPolicy, ProjectorPair, SpectrumTrace, pgp_projector, project_update
from ..rng import SeedTree
from .stream import Task, TaskStream

log = logging.getLogger("trainer")


@dataclass(frozen=True)
class MethodFlags:
    b1: bool
    b2: bool
    ln_loss: bool
    pgp: bool = False

    @property
    def projects(self) -> bool:
        return self.b1 or self.b2 or self.pgp


# one row per ablation variant
METHODS: Dict[str, MethodFlags] = {
    "seq": MethodFlags(b1=False, b2=False, ln_loss=False),
    "nsp2": MethodFlags(b1=True, b2=True, ln_loss=True),
    "nsp2_b1_only": MethodFlags(b1=True, b2=False, ln_loss=False),
    "nsp2_b2_only": MethodFlags(b1=False, b2=True, ln_loss=False),
    "nsp2_no_lnloss": MethodFlags(b1=True, b2=True, ln_loss=False),
    "nsp2_b1_lnloss": MethodFlags(b1=True, b2=False, ln_loss=True),
    "nsp2_b2_lnloss": MethodFlags(b1=False, b2=True, ln_loss=True),
    "pgp": MethodFlags(b1=False, b2=False, ln_loss=True, pgp=True),
}


@dataclass(frozen=True)
class MethodConfig:
    method: str = "nsp2"
    eta1: float = 1.0
    eta2: float = 1.0
    nullity: NullityPolicy = field(default_factory=NullityPolicy)
    lnloss_coeff: float = 1.0
    optimizer: str = "sgd"
    lr: float = 0.1
    head_lr: float = 0.01
    weight_decay: float = 0.0
    betas: Tuple[float, float] = (0.9, 0.999)
    epochs: int = 20
    batch_size: int = 32
    lr_milestones: Tuple[float, ...] = (0.5, 0.8)
    lr_gamma: float = 0.1
    temperature: float = 10.0
    collect_subsample: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}', use one of {', '.join(METHODS)}.", key="method.names")
        for key, eta in (("method.eta1", self.eta1), ("method.eta2", self.eta2)):
            if not 0.0 <= eta <= 1.0:
                raise ConfigError(f"The projection weight must be in [0, 1], got {eta}.", key=key)
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer '{self.optimizer}'.", key="train.optimizer")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("Epochs and batch size must be positive.", key="train.epochs")
        if self.temperature <= 0:
            raise ConfigError(f"The temperature must be positive, got {self.temperature}.", key="train.temperature")
        if any(not 0.0 < m <= 1.0 for m in self.lr_milestones):
            raise ConfigError("Learning-rate milestones are fractions of the epochs in (0, 1].", key="train.lr_milestones")
        if self.optimizer == "sgd" and self.head_lr * self.temperature**2 > 2.0:
            # the shared logit offset of a head over near-parallel features is only stable below this
            log.warning(
                f"head_lr {self.head_lr} at temperature {self.temperature} exceeds 2 / temperature^2, "
                "the head logits will oscillate under SGD."
            )

    @property
    def flags(self) -> MethodFlags:
        return METHODS[self.method]

    def milestones(self) -> List[int]:
        return sorted({max(1, int(round(m * self.epochs))) for m in self.lr_milestones})


@dataclass(frozen=True)
class PretrainSpec:
    enabled: bool = True
    epochs: int = 3
    lr: float = 1e-3
    batch_size: int = 32
    temperature: float = 10.0


@dataclass
class ProjectionState:
    """
    Everything that is carried from one task to the next: accumulated covariances and projectors
    per layer, the prompt statistics target and the spectrum trace.
    """

    covariances: List[CovariancePair]
    projectors: List[ProjectorPair]
    pgp: List[torch.Tensor]
    target: Optional[PromptDistributionTarget] = None
    trace: SpectrumTrace = field(default_factory=SpectrumTrace)
    tasks_done: int = 0

    @classmethod
    def initial(cls, model: BackboneModel, method: MethodConfig) -> "ProjectionState":
        L, D, M = len(model.layers), model.dim, model.num_prompts
        return cls(
            covariances=[CovariancePair.zeros(D, M) for _ in range(L)],
            projectors=[ProjectorPair.identity(D, M, method.eta1, method.eta2, method.nullity) for _ in range(L)],
            pgp=[eye(D) for _ in range(L)],
        )


@dataclass
class TaskTrainingResult:
    task: int
    epoch_losses: List[float] = field(default_factory=list)
    steps: int = 0
    # layer -> worst relative residuals over all steps of the task
    residuals: Dict[int, Tuple[float, float]] = field(default_factory=dict)

    def audit(self, layer: int, r1: float, r2: float) -> None:
        w1, w2 = self.residuals.get(layer, (0.0, 0.0))
        self.residuals[layer] = (max(w1, r1), max(w2, r2))


def _batches(n: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def pretrain_backbone(model: BackboneModel, pretext: Task, spec: PretrainSpec, seeds: SeedTree, silent: bool = True) -> None:
    """
    Train the embeddings and layer weights on the pretext classes with a throwaway head, then
    freeze them. The prompts keep their initial values.
    """
    head = ClassifierHead(model.dim, pretext.num_classes)
    model.prompts.requires_grad_(False)
    params = list(model.frozen_parameters().values()) + list(head.parameters())
    optimizer = torch.optim.Adam(params, lr=spec.lr)
    generator = seeds.generator("pretrain", purpose="shuffle")
    x, y = pretext.train()
    for epoch in tqdm(range(spec.epochs), desc="pretrain", unit="epoch", disable=silent, leave=False):
        total = 0.0
        for inx in _batches(x.shape[0], spec.batch_size, generator):
            features, _ = model.encode(model.embed(x[inx]))
            loss = F.cross_entropy(head(features) * spec.temperature, y[inx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += float(loss) * len(inx)
        log.debug(f"Pretrain epoch {epoch + 1}/{spec.epochs}: loss {total / x.shape[0]:.4f}")
    model.prompts.requires_grad_(True)
    model.freeze_backbone()


def _projection(state: ProjectionState, flags: MethodFlags):
    def project(layer: int, P_G: torch.Tensor) -> torch.Tensor:
        if flags.pgp:
            return project_update(P_G, state.pgp[layer], eye(P_G.shape[0]))
        return state.projectors[layer].project(P_G, use_b1=flags.b1, use_b2=flags.b2)

    return project


def train_task(
    model: BackboneModel,
    state: ProjectionState,
    task: Task,
    method: MethodConfig,
    seeds: SeedTree,
    silent: bool = True,
) -> TaskTrainingResult:
    """
    Train the prompts and a new head on `task`. The first task uses the raw candidate updates and
    no prompt distribution loss; later tasks project the candidates according to the method.
    """
    if task.index != state.tasks_done:
        raise ContractViolation(f"Task {task.index} trained out of order, expected task {state.tasks_done}.")
    flags = method.flags
    first = task.index == 0
    project = flags.projects and not first

    head = model.add_head(task.num_classes)
    optimizer = ProjectedPromptOptimizer(
        [
            dict(params=list(model.prompts), project=project),
            dict(params=list(head.parameters()), lr=method.head_lr),
        ],
        lr=method.lr,
        kind=method.optimizer,
        betas=method.betas,
        weight_decay=method.weight_decay,
    )
    optimizer.set_projection(_projection(state, flags) if project else None)
    scheduler = MultiStepLR(optimizer, milestones=method.milestones(), gamma=method.lr_gamma)

    loss_spec = LossSpec(
        temperature=method.temperature,
        ln_coeff=method.lnloss_coeff,
        ln_target=state.target if (flags.ln_loss and not first) else None,
    )
    result = TaskTrainingResult(task=task.index)
    generator = seeds.generator("train", task.index, "shuffle")
    x, y = task.train()
    prompt_params = list(model.prompts)
    head_params = dict(head.named_parameters())

    for epoch in tqdm(range(method.epochs), desc=f"task {task.index + 1}", unit="epoch", disable=silent, leave=False):
        total = 0.0
        for inx in _batches(x.shape[0], method.batch_size, generator):
            try:
                grads = prompt_gradients((x[inx], y[inx]), model, loss_spec)
            except TrainingError as e:
                e.diagnostics.update(task=task.index, epoch=epoch, step=result.steps)
                raise
            for p, g in zip(prompt_params, grads.prompts):
                p.grad = g
            for name, g in grads.head.items():
                head_params[name].grad = g
            optimizer.step()
            result.steps += 1
            total += grads.loss * len(inx)
            if project:
                for layer, dP in optimizer.applied.items():
                    result.audit(layer, *state.projectors[layer].residuals(dP))
        scheduler.step()
        result.epoch_losses.append(total / x.shape[0])
        log.debug(f"Task {task.index + 1}, epoch {epoch + 1}/{method.epochs}: loss {result.epoch_losses[-1]:.6f}")

    for p in prompt_params + list(head_params.values()):
        p.grad = None
    return result


def end_of_task_update(
    model: BackboneModel, task: Task, state: ProjectionState, method: MethodConfig, seeds: SeedTree
) -> ProjectionState:
    """
    Accumulate the covariances of the finished task, rebuild the projectors of every layer and
    capture the prompt statistics the next tasks must keep.
    """
    x, _ = task.train()
    if 0 < method.collect_subsample < x.shape[0]:
        inx = torch.randperm(x.shape[0], generator=seeds.generator("collect", task.index, "subsample"))
        x = x[inx[: method.collect_subsample]]

    if state.target is not None:
        drifts = report_drift(list(model.prompts), state.target, model.ln_eps)
        log.info(f"Task {task.index + 1}: prompt distribution drift per layer {', '.join(f'{d:.3e}' for d in drifts)}")

    if method.flags.projects:
        inputs = collect_projection_inputs(x, model)
        for layer in range(len(model.layers)):
            cov = state.covariances[layer]
            cov.accumulate(inputs.j1[layer], inputs.j2[layer], inputs.tokens[layer])
            pair, s1, s2 = ProjectorPair.build(cov, method.nullity, method.eta1, method.eta2)
            state.projectors[layer] = pair
            state.trace.add(task.index, layer, "C1", s1, pair.r1)
            state.trace.add(task.index, layer, "C2", s2, pair.r2)
            if method.flags.pgp:
                b, r, s = pgp_projector(cov.tokens, method.nullity, method.eta1)
                state.pgp[layer] = b
                state.trace.add(task.index, layer, "X", s, r)

    state.target = PromptDistributionTarget.capture(list(model.prompts), model.ln_eps)
    state.tasks_done += 1
    return state


def task_accuracy(model: BackboneModel, task: Task, batch_size: int = 512) -> float:
    x, y = task.test()
    correct = 0
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            logits = model(x[start : start + batch_size])
            correct += int((logits.argmax(dim=-1) == y[start : start + batch_size]).sum())
    return correct / x.shape[0]


def evaluate(model: BackboneModel, stream: TaskStream, upto_task: int) -> List[float]:
    """
    Class-incremental accuracies after task `upto_task` on the test sets of tasks 0..upto_task,
    with the prediction taken over the union of all heads.
    """
    if len(model.heads) < upto_task + 1:
        raise ContractViolation(f"Evaluating through task {upto_task} needs {upto_task + 1} heads, the model has {len(model.heads)}.")
    return [task_accuracy(model, stream.tasks[i]) for i in range(upto_task + 1)]


def task_local_loss(model: BackboneModel, task: Task, temperature: float) -> float:
    """
    Cross-entropy of the task's own head on its training set, the quantity tracked for loss drift.
    """
    x, y = task.train()
    head = model.heads[task.index]
    offset = head_offset(model, task.index)
    with torch.no_grad():
        features, _ = model.encode(model.embed(x))
        return float(F.cross_entropy(head(features) * temperature, y - offset))
