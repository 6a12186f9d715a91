# -*- coding: utf-8 -*-

import math

import pytest
import torch

from vpt_nullspace.errors import ContractViolation, LnShiftPreconditionError
from vpt_nullspace.lnconstraint import (
    PromptDistributionTarget,
    ln_drift_loss,
    ln_drift_loss_and_grad,
    ln_shift_check,
    permutation_shift,
    prompt_distribution_loss,
    prompt_row_stats,
)
from vpt_nullspace.numeric import RowStats, as_matrix


@pytest.mark.parametrize(
    "rows, mean, std",
    [
        ([[1.0, 3.0]], 2.0, 1.0),
        ([[0.0, 0.0, 0.0, 4.0]], 1.0, math.sqrt(3.0)),
    ],
)
def test_prompt_row_stats(rows, mean, std):
    stats = prompt_row_stats(as_matrix(rows), eps=0.0)
    assert float(stats.mean[0]) == pytest.approx(mean, abs=1e-15)
    assert float(stats.std[0]) == pytest.approx(std, abs=1e-15)


def test_prompt_row_stats_constant_row():
    stats = prompt_row_stats(as_matrix([[5.0, 5.0, 5.0]]), eps=1e-6)
    assert float(stats.std[0]) == pytest.approx(1e-3, rel=1e-12)


def test_prompt_row_stats_rejects_empty():
    with pytest.raises(ContractViolation):
        prompt_row_stats(torch.zeros(0, 4, dtype=torch.float64))


def test_ln_drift_loss_single_row():
    current = RowStats(mean=as_matrix([1.5]), std=as_matrix([1.25]))
    target = RowStats(mean=as_matrix([1.0]), std=as_matrix([1.0]))
    assert float(ln_drift_loss(current, target)) == pytest.approx(0.75, abs=1e-15)


def test_ln_drift_loss_is_symmetric_and_zero_at_target(generator):
    a = prompt_row_stats(torch.randn(3, 8, generator=generator, dtype=torch.float64))
    b = prompt_row_stats(torch.randn(3, 8, generator=generator, dtype=torch.float64))
    assert float(ln_drift_loss(a, a)) == 0.0
    assert float(ln_drift_loss(a, b)) == float(ln_drift_loss(b, a))


def test_ln_drift_loss_rejects_row_mismatch(generator):
    a = prompt_row_stats(torch.randn(3, 8, generator=generator, dtype=torch.float64))
    b = prompt_row_stats(torch.randn(2, 8, generator=generator, dtype=torch.float64))
    with pytest.raises(ContractViolation):
        ln_drift_loss(a, b)


def test_ln_drift_gradient_is_zero_at_target(generator):
    P = torch.randn(3, 8, generator=generator, dtype=torch.float64)
    loss, grad = ln_drift_loss_and_grad(P, prompt_row_stats(P))
    assert loss == 0.0
    assert torch.equal(grad, torch.zeros_like(P))


def test_target_capture_is_a_snapshot(generator):
    P = torch.randn(2, 8, generator=generator, dtype=torch.float64)
    target = PromptDistributionTarget.capture([P])
    mean = target.stats[0].mean.clone()
    P.add_(3.0)
    assert torch.equal(target.stats[0].mean, mean)
    assert float(prompt_distribution_loss([P], target)) == pytest.approx(6.0, rel=1e-12)


def test_prompt_distribution_loss_rejects_layer_mismatch(generator):
    P = torch.randn(2, 8, generator=generator, dtype=torch.float64)
    with pytest.raises(ContractViolation):
        prompt_distribution_loss([P, P], PromptDistributionTarget.capture([P]))


def test_ln_shift_check_zero_update(generator):
    P = torch.randn(3, 8, generator=generator, dtype=torch.float64)
    alpha = torch.ones(8, dtype=torch.float64)
    assert ln_shift_check(P, torch.zeros_like(P), alpha) == 0.0


def test_ln_shift_check_permutation(generator):
    P = torch.randn(4, 8, generator=generator, dtype=torch.float64)
    alpha = torch.rand(8, generator=generator, dtype=torch.float64) + 0.5
    dP = permutation_shift(P, generator)
    assert ln_shift_check(P, dP, alpha) <= 1e-10


def test_ln_shift_check_rejects_statistics_drift(generator):
    P = torch.randn(3, 8, generator=generator, dtype=torch.float64)
    dP = torch.randn(3, 8, generator=generator, dtype=torch.float64) * 1e-3
    with pytest.raises(LnShiftPreconditionError) as e:
        ln_shift_check(P, dP, torch.ones(8, dtype=torch.float64))
    assert e.value.drift > 0


def test_ln_shift_check_rejects_shape_mismatch(generator):
    P = torch.randn(3, 8, generator=generator, dtype=torch.float64)
    with pytest.raises(ContractViolation):
        ln_shift_check(P, P[:2], torch.ones(8, dtype=torch.float64))
