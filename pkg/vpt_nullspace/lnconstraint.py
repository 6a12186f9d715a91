# -*- coding: utf-8 -*-

"""
Invariant prompt distribution: the LayerNorm in front of the attention only turns into a linear
function of the prompt update when the prompt row statistics stay fixed. The constraint is relaxed
into an L1 penalty on the drift of the row means and standard deviations.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch

from .errors import ContractViolation, LnShiftPreconditionError
from .numeric import DEFAULT_LN_EPS, RowStats, frobenius_norm, layer_norm, row_stats

log = logging.getLogger("ln-constraint")

STATS_TOLERANCE = 1e-12


@dataclass(frozen=True)
class PromptDistributionTarget:
    """
    Row statistics of every layer's prompts, frozen at the end of a task.
    """

    stats: Tuple[RowStats, ...]

    @classmethod
    def capture(cls, prompts: Sequence[torch.Tensor], eps: float = DEFAULT_LN_EPS) -> "PromptDistributionTarget":
        with torch.no_grad():
            captured = []
            for P in prompts:
                s = prompt_row_stats(P.detach(), eps)
                captured.append(RowStats(mean=s.mean.clone(), std=s.std.clone()))
        return cls(stats=tuple(captured))

    def __len__(self):
        return len(self.stats)


def prompt_row_stats(P: torch.Tensor, eps: float = DEFAULT_LN_EPS) -> RowStats:
    if P.dim() != 2 or P.shape[0] < 1:
        raise ContractViolation(f"Prompts must be a non-empty M x D matrix, got shape {tuple(P.shape)}.")
    return row_stats(P, eps)


def ln_drift_loss(current: RowStats, target: RowStats) -> torch.Tensor:
    """
    L1 drift of the row means plus L1 drift of the row standard deviations. Gradients flow through
    `current` into the prompts; the subgradient at an exact tie is 0.
    """
    if current.mean.shape != target.mean.shape or current.std.shape != target.std.shape:
        raise ContractViolation(
            f"Prompt statistics of {tuple(current.mean.shape)} rows cannot be compared to a target of "
            f"{tuple(target.mean.shape)} rows."
        )
    return (current.mean - target.mean).abs().sum() + (current.std - target.std).abs().sum()


def prompt_distribution_loss(
    prompts: Sequence[torch.Tensor], target: PromptDistributionTarget, eps: float = DEFAULT_LN_EPS
) -> torch.Tensor:
    if len(prompts) != len(target):
        raise ContractViolation(f"{len(prompts)} prompt matrices for a target of {len(target)} layers.")
    return sum(ln_drift_loss(prompt_row_stats(P, eps), t) for P, t in zip(prompts, target.stats))


def ln_drift_loss_and_grad(
    P: torch.Tensor, target: RowStats, eps: float = DEFAULT_LN_EPS
) -> Tuple[float, torch.Tensor]:
    P = P.detach().requires_grad_(True)
    loss = ln_drift_loss(prompt_row_stats(P, eps), target)
    (grad,) = torch.autograd.grad(loss, P)
    return float(loss), grad


def stats_drift(before: RowStats, after: RowStats) -> float:
    return max(
        float((before.mean - after.mean).abs().max()),
        float((before.std - after.std).abs().max()),
    )


def ln_shift_check(
    P: torch.Tensor,
    dP: torch.Tensor,
    alpha: torch.Tensor,
    eps: float = DEFAULT_LN_EPS,
    beta: torch.Tensor = None,
) -> float:
    """
    Residual of LN(P + dP) = LN(P) + dP / sigma_P * alpha. Raises when P + dP does not keep the row
    statistics of P, in which case the identity does not apply.
    """
    if P.shape != dP.shape:
        raise ContractViolation(f"Prompt shape {tuple(P.shape)} does not match update shape {tuple(dP.shape)}.")
    beta = torch.zeros_like(alpha) if beta is None else beta
    ln_before, before = layer_norm(P, alpha, beta, eps)
    ln_after, after = layer_norm(P + dP, alpha, beta, eps)
    drift = stats_drift(before, after)
    scale = max(1.0, float(before.mean.abs().max()), float(before.std.max()))
    if drift > STATS_TOLERANCE * scale:
        raise LnShiftPreconditionError(drift)
    predicted = ln_before + dP / before.std.unsqueeze(-1) * alpha
    return frobenius_norm(ln_after - predicted)


def permutation_shift(P: torch.Tensor, generator: torch.Generator = None) -> torch.Tensor:
    """
    An update that permutes the entries within every row of `P`, which keeps the row statistics.
    """
    rows = [row[torch.randperm(P.shape[1], generator=generator)] for row in P]
    return torch.stack(rows) - P


def report_drift(prompts: Sequence[torch.Tensor], target: PromptDistributionTarget, eps: float) -> List[float]:
    drifts = []
    with torch.no_grad():
        for inx, (P, t) in enumerate(zip(prompts, target.stats)):
            drift = stats_drift(t, prompt_row_stats(P, eps))
            drifts.append(drift)
            log.debug(f"Prompt distribution drift in layer {inx}: {drift:.3e}")
    return drifts
