# -*- coding: utf-8 -*-

from typing import Callable, Dict, Iterable, Optional

import torch
from torch.optim import Optimizer

from .errors import ContractViolation

OPTIMIZERS = ("sgd", "adam")


class ProjectedPromptOptimizer(Optimizer):
    """
    First-order optimizer that produces a candidate update P_G for every parameter and, for the
    parameter groups flagged with `project=True`, hands P_G to a projection callable before it is
    applied: p <- p - lr * projection(layer, P_G). The applied updates of the projected groups
    are kept in `applied` by layer index until the next step.

    `kind="sgd"` uses the (weight-decayed) gradient as P_G. `kind="adam"` rescales it adaptively
    first, so the projection acts on the final step direction.
    """

    def __init__(
        self,
        params: Iterable,
        lr: float = 0.01,
        kind: str = "sgd",
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        if kind not in OPTIMIZERS:
            raise ContractViolation(f"Unknown optimizer '{kind}', use one of {', '.join(OPTIMIZERS)}.")
        defaults = dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay, project=False)
        super().__init__(params, defaults)
        self.kind = kind
        self.projection: Optional[Callable[[int, torch.Tensor], torch.Tensor]] = None
        self.applied: Dict[int, torch.Tensor] = {}

    def set_projection(self, projection: Optional[Callable[[int, torch.Tensor], torch.Tensor]]) -> None:
        self.projection = projection

    def _candidate(self, p: torch.Tensor, group: dict) -> torch.Tensor:
        grad = p.grad
        if group["weight_decay"] != 0:
            grad = grad.add(p, alpha=group["weight_decay"])
        if self.kind == "sgd":
            return grad

        beta1, beta2 = group["betas"]
        state = self.state[p]
        if len(state) == 0:
            state["step"] = 0
            state["exp_avg"] = torch.zeros_like(p)
            state["exp_avg_sq"] = torch.zeros_like(p)
        state["step"] += 1
        state["exp_avg"].mul_(beta1).add_(grad, alpha=1 - beta1)
        state["exp_avg_sq"].mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
        m_hat = state["exp_avg"] / (1 - beta1 ** state["step"])
        v_hat = state["exp_avg_sq"] / (1 - beta2 ** state["step"])
        return m_hat / (v_hat.sqrt() + group["eps"])

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        self.applied = {}
        for group in self.param_groups:
            for layer, p in enumerate(group["params"]):
                if p.grad is None:
                    continue
                delta = self._candidate(p, group)
                if group["project"] and self.projection is not None:
                    delta = self.projection(layer, delta)
                    # the update as applied to the prompts, lr included
                    self.applied[layer] = delta * -group["lr"]
                p.add_(delta, alpha=-group["lr"])
        return loss
