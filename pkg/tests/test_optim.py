# -*- coding: utf-8 -*-

import pytest
import torch

from vpt_nullspace.errors import ContractViolation
from vpt_nullspace.optim import ProjectedPromptOptimizer


def _param(values):
    return torch.nn.Parameter(torch.tensor(values, dtype=torch.float64))


def test_sgd_step_without_projection():
    p = _param([[1.0, 2.0]])
    p.grad = torch.tensor([[0.5, -1.0]], dtype=torch.float64)
    opt = ProjectedPromptOptimizer([p], lr=0.1)
    opt.step()
    assert torch.allclose(p.data, torch.tensor([[0.95, 2.1]], dtype=torch.float64), atol=1e-15)
    assert opt.applied == {}


def test_projection_applies_to_flagged_groups_only():
    prompts = [_param([[1.0, 1.0]]), _param([[2.0, 2.0]])]
    head = _param([1.0])
    for p in prompts:
        p.grad = torch.ones_like(p)
    head.grad = torch.ones_like(head)
    opt = ProjectedPromptOptimizer([dict(params=prompts, project=True), dict(params=[head], lr=0.5)], lr=1.0)
    calls = []

    def project(layer, P_G):
        calls.append(layer)
        return P_G * torch.tensor([0.0, 1.0], dtype=torch.float64)

    opt.set_projection(project)
    opt.step()
    assert calls == [0, 1]
    assert torch.equal(prompts[0].data, torch.tensor([[1.0, 0.0]], dtype=torch.float64))
    assert torch.equal(prompts[1].data, torch.tensor([[2.0, 1.0]], dtype=torch.float64))
    assert torch.equal(head.data, torch.tensor([0.5], dtype=torch.float64))
    assert set(opt.applied) == {0, 1}
    assert torch.equal(opt.applied[1], torch.tensor([[0.0, -1.0]], dtype=torch.float64))


def test_applied_update_is_the_parameter_change():
    p = _param([[1.0, -2.0, 0.5]])
    p.grad = torch.tensor([[4.0, 2.0, -8.0]], dtype=torch.float64)
    before = p.data.clone()
    opt = ProjectedPromptOptimizer([dict(params=[p], project=True)], lr=0.25)
    opt.set_projection(lambda layer, P_G: P_G * torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64))
    opt.step()
    assert torch.equal(opt.applied[0], torch.tensor([[-1.0, 0.0, 2.0]], dtype=torch.float64))
    assert torch.equal(opt.applied[0], p.data - before)


def test_weight_decay_enters_the_candidate():
    p = _param([[2.0]])
    p.grad = torch.zeros_like(p)
    ProjectedPromptOptimizer([p], lr=0.5, weight_decay=0.1).step()
    assert float(p) == pytest.approx(1.9, abs=1e-15)


def test_adam_first_step_is_sign_of_gradient():
    p = _param([[0.0, 0.0]])
    p.grad = torch.tensor([[3.0, -0.02]], dtype=torch.float64)
    ProjectedPromptOptimizer([p], lr=0.1, kind="adam", eps=1e-12).step()
    assert torch.allclose(p.data, torch.tensor([[-0.1, 0.1]], dtype=torch.float64), atol=1e-10)


def test_skips_parameters_without_gradient():
    p = _param([[1.0]])
    ProjectedPromptOptimizer([p], lr=1.0).step()
    assert float(p) == 1.0


def test_unknown_kind():
    with pytest.raises(ContractViolation):
        ProjectedPromptOptimizer([_param([1.0])], kind="rmsprop")
