# -*- coding: utf-8 -*-

"""
Dense float64 matrix substrate shared by the model, the projector and the checks.

Every function here is pure: it never mutates its arguments and returns new tensors, so it is
safe to call from several threads.
"""

from dataclasses import dataclass
from typing import Tuple

import torch

from .errors import ContractViolation

DTYPE = torch.float64

# default epsilon inside the LayerNorm standard deviation
DEFAULT_LN_EPS = 1e-6

SYMMETRY_TOLERANCE = 1e-8
PSD_TOLERANCE = 1e-10


@dataclass(frozen=True)
class RowStats:
    """
    Per-row mean and standard deviation; `std` is sqrt(var + eps) with the population variance.
    """

    mean: torch.Tensor
    std: torch.Tensor


@dataclass(frozen=True)
class Spectrum:
    """
    Eigen/singular values in descending order with the matching orthonormal vectors as columns.
    """

    singular_values: torch.Tensor
    right_vectors: torch.Tensor

    def __len__(self):
        return self.singular_values.shape[0]


def as_matrix(data) -> torch.Tensor:
    return torch.as_tensor(data, dtype=DTYPE)


def check_finite(name: str, *tensors: torch.Tensor) -> None:
    for t in tensors:
        if not bool(torch.isfinite(t).all()):
            raise ContractViolation(f"The argument '{name}' contains non-finite entries.")


def _check_rank2(name: str, m: torch.Tensor) -> None:
    if m.dim() != 2:
        raise ContractViolation(f"The argument '{name}' must be a matrix, got shape {tuple(m.shape)}.")


def row_stats(rows: torch.Tensor, eps: float = DEFAULT_LN_EPS) -> RowStats:
    if eps < 0:
        raise ContractViolation(f"The LayerNorm epsilon must not be negative, got {eps}.")
    var, mean = torch.var_mean(rows, dim=-1, correction=0)
    return RowStats(mean=mean, std=torch.sqrt(var + eps))


def layer_norm(
    rows: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor, eps: float = DEFAULT_LN_EPS
) -> Tuple[torch.Tensor, RowStats]:
    """
    Normalize every row over its D columns and apply the affine map `alpha`, `beta`.
    Returns the normalized rows together with the statistics that were used.
    """
    D = rows.shape[-1]
    if alpha.shape != (D,) or beta.shape != (D,):
        raise ContractViolation(
            f"LayerNorm affine vectors must have length {D}, got {tuple(alpha.shape)} and {tuple(beta.shape)}."
        )
    stats = row_stats(rows, eps)
    out = (rows - stats.mean.unsqueeze(-1)) / stats.std.unsqueeze(-1) * alpha + beta
    return out, stats


def softmax_rows(logits: torch.Tensor) -> torch.Tensor:
    # torch subtracts the row maximum internally
    return torch.softmax(logits, dim=-1)


def eig_sym_psd(C: torch.Tensor) -> Spectrum:
    """
    Eigendecomposition of a symmetric positive semi-definite matrix. For such matrices it coincides
    with the SVD, so the eigenvectors are the right singular vectors. Round-off negative eigenvalues
    are clamped to zero.
    """
    _check_rank2("C", C)
    if C.shape[0] != C.shape[1]:
        raise ContractViolation(f"The matrix must be square, got shape {tuple(C.shape)}.")
    check_finite("C", C)
    if C.shape[0] == 0:
        return Spectrum(C.new_zeros(0), C.new_zeros((0, 0)))

    scale = max(1.0, frobenius_norm(C))
    if frobenius_norm(C - C.T) > SYMMETRY_TOLERANCE * scale:
        raise ContractViolation("The matrix is not symmetric.")

    values, vectors = torch.linalg.eigh((C + C.T) / 2)
    values, vectors = values.flip(0), vectors.flip(1)
    if values[-1] < -PSD_TOLERANCE * max(1.0, float(values.abs().max())):
        raise ContractViolation(f"The matrix is not positive semi-definite (eigenvalue {float(values[-1]):.3e}).")
    return Spectrum(values.clamp(min=0.0), vectors)


def frobenius_norm(M: torch.Tensor) -> float:
    if M.numel() == 0:
        return 0.0
    return float(torch.linalg.norm(M))


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"Cannot multiply shapes {tuple(a.shape)} and {tuple(b.shape)}.")
    return a @ b


def transpose(a: torch.Tensor) -> torch.Tensor:
    return a.transpose(-1, -2)


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ContractViolation(f"Cannot add shapes {tuple(a.shape)} and {tuple(b.shape)}.")
    return a + b


def scale(a: torch.Tensor, s: float) -> torch.Tensor:
    return a * s


def eye(n: int) -> torch.Tensor:
    return torch.eye(n, dtype=DTYPE)
