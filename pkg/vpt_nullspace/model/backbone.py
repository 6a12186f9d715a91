# -*- coding: utf-8 -*-

"""
The desk-scale prompted transformer: a fixed linear patchifier, a class token, L prompted layers
and one classifier head per task. Only the prompts and the head of the current task are trained.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ContractViolation, TrainingError
from ..lnconstraint import PromptDistributionTarget, prompt_distribution_loss
from ..numeric import DTYPE, DEFAULT_LN_EPS
from .layer import AttentionTrace, LayerParams, layer_forward

log = logging.getLogger("backbone")


class ClassifierHead(nn.Module):
    """
    Linear head `f @ W + b` over the L2-normalized class-token embedding.
    """

    def __init__(self, dim: int, num_classes: int) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(dim, num_classes, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(num_classes, dtype=DTYPE))

    @property
    def num_classes(self) -> int:
        return self.bias.shape[0]

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return features @ self.weight + self.bias


class BackboneModel(nn.Module):
    def __init__(
        self,
        dim: int,
        heads: int,
        layers: int,
        prompts: int,
        patch_dim: int,
        num_patches: int,
        mlp_ratio: int = 4,
        ln_eps: float = DEFAULT_LN_EPS,
        prompt_scale: float = 1.0,
        generator: torch.Generator = None,
    ) -> None:
        super().__init__()
        if prompts < 1:
            raise ContractViolation(f"Every layer needs at least one prompt, got {prompts}.")
        self.dim = dim
        self.ln_eps = ln_eps
        self.num_prompts = prompts

        def randn(*shape, std=1.0):
            return torch.randn(*shape, generator=generator, dtype=DTYPE) * std

        self.patch_embedding = nn.Parameter(randn(patch_dim, dim, std=patch_dim**-0.5))
        self.position_embedding = nn.Parameter(randn(num_patches + 1, dim, std=0.1))
        self.class_token = nn.Parameter(randn(dim, std=1.0))
        self.layers = nn.ModuleList([LayerParams(dim, heads, mlp_ratio, generator) for _ in range(layers)])
        self.prompts = nn.ParameterList([nn.Parameter(randn(prompts, dim, std=prompt_scale)) for _ in range(layers)])
        self.heads = nn.ModuleList()

    @property
    def num_tokens(self) -> int:
        return self.position_embedding.shape[0]

    def frozen_parameters(self) -> Dict[str, torch.Tensor]:
        return {
            name: p
            for name, p in self.named_parameters()
            if not name.startswith("prompts.") and not name.startswith("heads.")
        }

    def freeze_backbone(self) -> None:
        for p in self.frozen_parameters().values():
            p.requires_grad_(False)
        log.debug("The backbone is frozen.")

    def fingerprint(self) -> str:
        """
        SHA-256 over the bytes of every frozen tensor (embeddings and layer weights).
        """
        h = hashlib.sha256()
        for name, p in sorted(self.frozen_parameters().items()):
            h.update(name.encode("utf-8"))
            h.update(p.detach().contiguous().numpy().tobytes())
        return h.hexdigest()

    def add_head(self, num_classes: int) -> ClassifierHead:
        """
        Append the head of a new task; the heads of previous tasks are frozen.
        """
        for head in self.heads:
            head.requires_grad_(False)
        head = ClassifierHead(self.dim, num_classes)
        self.heads.append(head)
        return head

    @property
    def current_head(self) -> ClassifierHead:
        if len(self.heads) == 0:
            raise ContractViolation("The model has no classifier head yet.")
        return self.heads[-1]

    @property
    def num_classes(self) -> int:
        return sum(h.num_classes for h in self.heads)

    def embed(self, patches: torch.Tensor) -> torch.Tensor:
        """
        Patches (..., P, patch_dim) to tokens (..., 1 + P, D) with the class token in row 0.
        """
        x = patches @ self.patch_embedding
        cls = self.class_token.expand(*x.shape[:-2], 1, self.dim)
        return torch.cat([cls, x], dim=-2) + self.position_embedding

    def encode(
        self, tokens: torch.Tensor, capture: bool = False, ln_bypass: bool = False
    ) -> Tuple[torch.Tensor, List[AttentionTrace]]:
        traces = []
        x = tokens
        for params, P in zip(self.layers, self.prompts):
            x, trace = layer_forward(x, P, params, capture=capture, ln_bypass=ln_bypass, eps=self.ln_eps)
            if capture:
                traces.append(trace)
        return F.normalize(x[..., 0, :], dim=-1), traces

    def forward(self, patches: torch.Tensor) -> torch.Tensor:
        logits, _ = model_forward(self.embed(patches), self)
        return logits


def model_forward(
    image_tokens: torch.Tensor, model: BackboneModel, capture: bool = False, ln_bypass: bool = False
) -> Tuple[torch.Tensor, List[AttentionTrace]]:
    """
    Logits of all heads seen so far, concatenated in task order, plus the per-layer traces when
    `capture` is set.
    """
    if len(model.heads) == 0:
        raise ContractViolation("The model has no classifier head yet.")
    features, traces = model.encode(image_tokens, capture=capture, ln_bypass=ln_bypass)
    logits = torch.cat([head(features) for head in model.heads], dim=-1)
    return logits, traces


@dataclass
class LossSpec:
    """
    Cross-entropy over the current head's logits scaled by `temperature`, plus `ln_coeff` times
    the prompt distribution loss when `ln_target` is set.
    """

    temperature: float = 10.0
    ln_coeff: float = 1.0
    ln_target: Optional[PromptDistributionTarget] = None


@dataclass
class PromptGradients:
    loss: float
    prompts: List[torch.Tensor]
    head: Dict[str, torch.Tensor] = field(default_factory=dict)


def head_offset(model: BackboneModel, index: int) -> int:
    """
    First class-incremental label of the head at `index`.
    """
    return sum(h.num_classes for h in list(model.heads)[:index])


def total_loss(patches: torch.Tensor, labels: torch.Tensor, model: BackboneModel, loss_spec: LossSpec) -> torch.Tensor:
    """
    Task-local cross-entropy: only the current head scores the batch, against labels shifted into
    its own range. Old heads take no part in training.
    """
    head = model.current_head
    offset = head_offset(model, len(model.heads) - 1)
    local = labels - offset
    if bool((local < 0).any()) or bool((local >= head.num_classes).any()):
        raise ContractViolation(
            f"Training labels must belong to the current head (labels {offset}..{offset + head.num_classes - 1})."
        )
    features, _ = model.encode(model.embed(patches))
    loss = F.cross_entropy(head(features) * loss_spec.temperature, local)
    if loss_spec.ln_target is not None and loss_spec.ln_coeff != 0:
        loss = loss + loss_spec.ln_coeff * prompt_distribution_loss(list(model.prompts), loss_spec.ln_target, model.ln_eps)
    return loss


def prompt_gradients(batch: Tuple[torch.Tensor, torch.Tensor], model: BackboneModel, loss_spec: LossSpec) -> PromptGradients:
    """
    Reverse-mode gradients of the total loss with respect to every layer's prompts and the current
    head. Frozen tensors are not differentiated at all.
    """
    patches, labels = batch
    head = model.current_head
    prompts = list(model.prompts)
    head_params = dict(head.named_parameters())
    loss = total_loss(patches, labels, model, loss_spec)
    if not bool(torch.isfinite(loss)):
        raise TrainingError(
            "The training loss is not finite",
            dict(loss=float(loss), prompt_norms=[float(p.detach().norm()) for p in prompts]),
        )
    grads = torch.autograd.grad(loss, prompts + list(head_params.values()))
    return PromptGradients(
        loss=float(loss),
        prompts=list(grads[: len(prompts)]),
        head=dict(zip(head_params.keys(), grads[len(prompts) :])),
    )


@dataclass
class ProjectionInputs:
    """
    Per layer: J1 rows Q_{X,h} W_{k,h}^T (D columns), J2 rows S_{P,h} (M columns) and the raw layer
    input tokens X. Rows are ordered by sample, then head, then token.
    """

    j1: List[torch.Tensor]
    j2: List[torch.Tensor]
    tokens: List[torch.Tensor]


def collect_projection_inputs(
    patches: torch.Tensor, model: BackboneModel, batch_size: int = 256, ln_bypass: bool = False
) -> ProjectionInputs:
    L = len(model.layers)
    j1 = [[] for _ in range(L)]
    j2 = [[] for _ in range(L)]
    tokens = [[] for _ in range(L)]
    with torch.no_grad():
        for start in range(0, patches.shape[0], batch_size):
            _, traces = model.encode(model.embed(patches[start : start + batch_size]), capture=True, ln_bypass=ln_bypass)
            for inx, (params, trace) in enumerate(zip(model.layers, traces)):
                omega1 = torch.einsum("bhnd,hDd->bhnD", trace.q_x, params.key_head_blocks())
                j1[inx].append(omega1.reshape(-1, model.dim))
                j2[inx].append(trace.s_p.reshape(-1, model.num_prompts))
                tokens[inx].append(trace.tokens.reshape(-1, model.dim))

    def _stack(blocks, cols):
        return torch.cat(blocks) if blocks else torch.zeros(0, cols, dtype=DTYPE)

    return ProjectionInputs(
        j1=[_stack(b, model.dim) for b in j1],
        j2=[_stack(b, model.num_prompts) for b in j2],
        tokens=[_stack(b, model.dim) for b in tokens],
    )
