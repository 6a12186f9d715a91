# -*- coding: utf-8 -*-

import math

import pytest
import torch

from vpt_nullspace.errors import ContractViolation
from vpt_nullspace.numeric import (
    add,
    as_matrix,
    eig_sym_psd,
    frobenius_norm,
    layer_norm,
    matmul,
    row_stats,
    scale,
    softmax_rows,
    transpose,
)


def _ln(rows, eps=0.0):
    rows = as_matrix(rows)
    D = rows.shape[-1]
    out, _ = layer_norm(rows, torch.ones(D, dtype=rows.dtype), torch.zeros(D, dtype=rows.dtype), eps)
    return out


def test_layer_norm_two_values():
    assert torch.allclose(_ln([[1.0, 3.0]]), as_matrix([[-1.0, 1.0]]), atol=1e-15)


def test_layer_norm_constant_row_is_zero():
    assert torch.equal(_ln([[2.0, 2.0]], eps=1e-6), as_matrix([[0.0, 0.0]]))


def test_layer_norm_single_spike():
    s = math.sqrt(3.0)
    expected = as_matrix([[-1 / s, -1 / s, -1 / s, 3 / s]])
    assert torch.allclose(_ln([[0.0, 0.0, 0.0, 4.0]]), expected, atol=1e-14)


def test_layer_norm_affine_and_stats():
    rows = as_matrix([[1.0, 3.0], [0.0, 4.0]])
    out, stats = layer_norm(rows, as_matrix([2.0, 2.0]), as_matrix([1.0, 1.0]), 0.0)
    assert torch.allclose(out, as_matrix([[-1.0, 3.0], [-1.0, 3.0]]), atol=1e-15)
    assert torch.allclose(stats.mean, as_matrix([2.0, 2.0]))
    assert torch.allclose(stats.std, as_matrix([1.0, 2.0]))


def test_layer_norm_rejects_wrong_affine_length():
    with pytest.raises(ContractViolation):
        layer_norm(as_matrix([[1.0, 2.0, 3.0]]), torch.ones(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64))


def test_row_stats_rejects_negative_eps():
    with pytest.raises(ContractViolation):
        row_stats(as_matrix([[1.0, 2.0]]), eps=-1.0)


@pytest.mark.parametrize(
    "logits, expected",
    [
        ([[0.0, 0.0]], [[0.5, 0.5]]),
        ([[math.log(2.0), 0.0]], [[2 / 3, 1 / 3]]),
        ([[1000.0, 0.0]], [[1.0, 0.0]]),
    ],
)
def test_softmax_rows(logits, expected):
    out = softmax_rows(as_matrix(logits))
    assert torch.isfinite(out).all()
    assert torch.allclose(out, as_matrix(expected), atol=1e-15)


def test_softmax_rows_sum_to_one():
    g = torch.Generator().manual_seed(0)
    out = softmax_rows(torch.randn(5, 7, generator=g, dtype=torch.float64) * 50)
    assert (out >= 0).all()
    assert torch.allclose(out.sum(dim=-1), torch.ones(5, dtype=torch.float64), atol=1e-14)


def test_eig_diagonal():
    s = eig_sym_psd(as_matrix([[4.0, 0.0], [0.0, 0.0]]))
    assert torch.allclose(s.singular_values, as_matrix([4.0, 0.0]), atol=1e-15)
    assert torch.allclose(s.right_vectors.abs(), torch.eye(2, dtype=torch.float64))


def test_eig_two_by_two():
    C = as_matrix([[2.0, 1.0], [1.0, 2.0]])
    s = eig_sym_psd(C)
    assert torch.allclose(s.singular_values, as_matrix([3.0, 1.0]), atol=1e-14)
    v = s.right_vectors[:, 0]
    assert torch.allclose(v.abs(), torch.full((2,), 1 / math.sqrt(2), dtype=torch.float64), atol=1e-14)
    U = s.right_vectors
    assert frobenius_norm(U @ torch.diag(s.singular_values) @ U.T - C) <= 1e-12


def test_eig_zero_matrix():
    s = eig_sym_psd(torch.zeros(3, 3, dtype=torch.float64))
    assert torch.equal(s.singular_values, torch.zeros(3, dtype=torch.float64))
    assert torch.allclose(s.right_vectors.T @ s.right_vectors, torch.eye(3, dtype=torch.float64), atol=1e-14)


def test_eig_descending_and_orthonormal():
    g = torch.Generator().manual_seed(3)
    A = torch.randn(20, 6, generator=g, dtype=torch.float64)
    s = eig_sym_psd(A.T @ A)
    values = s.singular_values.tolist()
    assert values == sorted(values, reverse=True)
    assert frobenius_norm(s.right_vectors.T @ s.right_vectors - torch.eye(6, dtype=torch.float64)) <= 1e-12


@pytest.mark.parametrize(
    "matrix",
    [
        [[1.0, 2.0], [0.0, 1.0]],
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        [[-1.0, 0.0], [0.0, 1.0]],
        [[float("nan"), 0.0], [0.0, 1.0]],
    ],
)
def test_eig_rejects_invalid_input(matrix):
    with pytest.raises(ContractViolation):
        eig_sym_psd(as_matrix(matrix))


@pytest.mark.parametrize(
    "matrix, expected",
    [
        ([[3.0, 4.0]], 5.0),
        (torch.eye(4, dtype=torch.float64), 2.0),
        (torch.zeros(2, 3, dtype=torch.float64), 0.0),
    ],
)
def test_frobenius_norm(matrix, expected):
    assert frobenius_norm(as_matrix(matrix)) == pytest.approx(expected, abs=1e-15)


def test_matmul():
    out = matmul(as_matrix([[1.0, 2.0], [3.0, 4.0]]), as_matrix([[1.0], [1.0]]))
    assert torch.equal(out, as_matrix([[3.0], [7.0]]))


def test_matmul_rejects_shape_mismatch():
    with pytest.raises(ContractViolation):
        matmul(as_matrix([[1.0, 2.0]]), as_matrix([[1.0, 2.0]]))


def test_elementwise_helpers():
    a = as_matrix([[1.0, 2.0], [3.0, 4.0]])
    assert torch.equal(transpose(a), as_matrix([[1.0, 3.0], [2.0, 4.0]]))
    assert torch.equal(add(a, a), scale(a, 2.0))
    with pytest.raises(ContractViolation):
        add(a, as_matrix([[1.0, 2.0]]))
