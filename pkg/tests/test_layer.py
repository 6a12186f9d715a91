# -*- coding: utf-8 -*-

import math

import pytest
import torch

from vpt_nullspace.errors import ContractViolation
from vpt_nullspace.model import LayerParams, affinity, aggregate, layer_forward, qkv_transform
from vpt_nullspace.numeric import as_matrix


@pytest.fixture
def params2(generator):
    params = LayerParams(dim=2, heads=1, generator=generator)
    with torch.no_grad():
        params.W_q.copy_(torch.eye(2, dtype=torch.float64))
        params.W_k.copy_(torch.eye(2, dtype=torch.float64))
        params.W_v.copy_(torch.eye(2, dtype=torch.float64))
        params.b_q.zero_()
        params.b_k.zero_()
        params.b_v.zero_()
    return params


def test_qkv_identity_query(params2):
    normed = as_matrix([[1.0, 2.0], [3.0, -1.0]])
    q, k, v = qkv_transform(normed, params2, num_prompts=0)
    assert torch.equal(q[0], normed)
    assert k.shape == v.shape == (1, 2, 2)


def test_qkv_key_bias(params2):
    with torch.no_grad():
        params2.b_k.fill_(1.0)
    _, k, _ = qkv_transform(torch.zeros(3, 2, dtype=torch.float64), params2, num_prompts=1)
    assert torch.equal(k[0], torch.ones(3, 2, dtype=torch.float64))


def test_qkv_key_swap(params2):
    with torch.no_grad():
        params2.W_k.copy_(as_matrix([[0.0, 1.0], [1.0, 0.0]]))
    _, k, _ = qkv_transform(as_matrix([[1.0, 2.0]]), params2, num_prompts=0)
    assert torch.equal(k[0], as_matrix([[2.0, 1.0]]))


def test_qkv_queries_only_for_image_tokens(params2):
    q, k, _ = qkv_transform(torch.ones(5, 2, dtype=torch.float64), params2, num_prompts=2)
    assert q.shape == (1, 3, 2)
    assert k.shape == (1, 5, 2)


def test_qkv_rejects_too_many_prompts(params2):
    with pytest.raises(ContractViolation):
        qkv_transform(torch.ones(2, 2, dtype=torch.float64), params2, num_prompts=3)


def test_affinity_scaling():
    q = as_matrix([[math.sqrt(2.0), 0.0]])
    k = as_matrix([[1.0, 0.0], [0.0, 1.0]])
    assert torch.allclose(affinity(q, k), as_matrix([[1.0, 0.0]]), atol=1e-15)


def test_affinity_rejects_width_mismatch():
    with pytest.raises(ContractViolation):
        affinity(torch.ones(1, 2, dtype=torch.float64), torch.ones(2, 3, dtype=torch.float64))


def test_aggregate():
    out = aggregate(as_matrix([[0.25, 0.75]]), as_matrix([[4.0, 0.0], [0.0, 4.0]]))
    assert torch.equal(out, as_matrix([[1.0, 3.0]]))


def test_aggregate_rejects_shape_mismatch():
    with pytest.raises(ContractViolation):
        aggregate(torch.ones(1, 3, dtype=torch.float64), torch.ones(2, 2, dtype=torch.float64))


def test_layer_params_rejects_indivisible_heads(generator):
    with pytest.raises(ContractViolation):
        LayerParams(dim=6, heads=4, generator=generator)


def test_layer_forward_shapes_and_trace(generator):
    params = LayerParams(dim=8, heads=2, generator=generator)
    X = torch.randn(5, 8, generator=generator, dtype=torch.float64)
    for m in (1, 3):
        P = torch.randn(m, 8, generator=generator, dtype=torch.float64)
        out, trace = layer_forward(X, P, params, capture=True)
        assert out.shape == (5, 8)
        assert trace.q_x.shape == (2, 5, 4)
        assert trace.s_x.shape == (2, 5, 5)
        assert trace.s_p.shape == (2, 5, m)
        rows = torch.cat([trace.s_x, trace.s_p], dim=-1).sum(dim=-1)
        assert torch.allclose(rows, torch.ones_like(rows), atol=1e-14)


def test_layer_forward_is_pure_and_deterministic(generator):
    params = LayerParams(dim=8, heads=2, generator=generator)
    X = torch.randn(5, 8, generator=generator, dtype=torch.float64)
    P = torch.randn(2, 8, generator=generator, dtype=torch.float64)
    X0, P0 = X.clone(), P.clone()
    out1, _ = layer_forward(X, P, params)
    out2, _ = layer_forward(X, P, params)
    assert torch.equal(out1, out2)
    assert torch.equal(X, X0) and torch.equal(P, P0)


def test_layer_forward_batch_matches_single_samples(generator):
    params = LayerParams(dim=8, heads=2, generator=generator)
    X = torch.randn(3, 5, 8, generator=generator, dtype=torch.float64)
    P = torch.randn(2, 8, generator=generator, dtype=torch.float64)
    batched, _ = layer_forward(X, P, params)
    for i in range(3):
        single, _ = layer_forward(X[i], P, params)
        assert torch.allclose(batched[i], single, atol=1e-13)


def test_layer_forward_rejects_mismatched_prompts(generator):
    params = LayerParams(dim=8, heads=2, generator=generator)
    with pytest.raises(ContractViolation):
        layer_forward(torch.ones(5, 8, dtype=torch.float64), torch.ones(2, 4, dtype=torch.float64), params)


def test_ln_bypass_changes_prompt_keys_only(generator):
    params = LayerParams(dim=8, heads=2, generator=generator)
    X = torch.randn(5, 8, generator=generator, dtype=torch.float64)
    P = torch.randn(2, 8, generator=generator, dtype=torch.float64) * 3
    _, normal = layer_forward(X, P, params, capture=True)
    _, bypass = layer_forward(X, P, params, capture=True, ln_bypass=True)
    assert torch.equal(normal.q_x, bypass.q_x)
    assert torch.equal(normal.k_z[..., :5, :], bypass.k_z[..., :5, :])
    assert not torch.allclose(normal.k_z[..., 5:, :], bypass.k_z[..., 5:, :])
