# -*- coding: utf-8 -*-

"""
Null-space projection of prompt updates.

For every layer two uncentered covariances are accumulated over all finished tasks: C1 = sum J1^T J1
(D x D, J1 = Q_X W_k^T rows) and C2 = sum J2^T J2 (M x M, J2 = S_P rows). Updates are projected as
dP = B2 P_G B1, where B1 and B2 are normalized projectors onto the (approximate) null spaces of C1
and C2, blended with the identity by eta.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch

from .errors import ContractViolation
from .numeric import DTYPE, Spectrum, eig_sym_psd, eye, frobenius_norm, matmul

log = logging.getLogger("projector")

# eigenvalues at or below this fraction of max(lambda_max, 1) count as exact zeros
EXACT_ZERO_RTOL = 1e-10
# short curves in adaptive mode: eigenvalues at or below this fraction of lambda_max
SHORT_CURVE_RTOL = 1e-10

NULLITY_MODES = ("adaptive", "gamma", "exact")


@dataclass(frozen=True)
class NullityPolicy:
    mode: str = "adaptive"
    gamma: float = 10.0

    def __post_init__(self):
        if self.mode not in NULLITY_MODES:
            raise ContractViolation(f"Unknown nullity mode '{self.mode}', use one of {', '.join(NULLITY_MODES)}.")
        if self.mode == "gamma" and self.gamma < 1:
            raise ContractViolation(f"The gamma multiple must be at least 1, got {self.gamma}.")

    def nullity(self, singular_values) -> int:
        if self.mode == "adaptive":
            return adaptive_nullity(singular_values)
        if self.mode == "gamma":
            return gamma_nullity(singular_values, self.gamma)
        return exact_nullity(singular_values)

    def __str__(self):
        return f"gamma({self.gamma})" if self.mode == "gamma" else self.mode


def _values(singular_values) -> np.ndarray:
    if isinstance(singular_values, torch.Tensor):
        return singular_values.detach().cpu().numpy().astype(np.float64)
    return np.asarray(singular_values, dtype=np.float64)


def exact_nullity(singular_values) -> int:
    lam = _values(singular_values)
    if lam.size == 0:
        return 0
    return int(np.count_nonzero(lam <= EXACT_ZERO_RTOL * max(lam.max(), 1.0)))


def adaptive_nullity(singular_values, dim: int = None) -> int:
    """
    Split the descending curve where its second difference is largest:
    R = dim - argmax_j (l[j-1] - 2 l[j] + l[j+1]) for 1-based j in [2, dim-1]. Ties go to the
    smallest j. Curves shorter than 3 points have no second difference; there R counts the values at
    or below 1e-10 lambda_max.
    """
    lam = _values(singular_values)
    dim = lam.size if dim is None else dim
    if dim != lam.size:
        raise ContractViolation(f"Expected {dim} singular values, got {lam.size}.")
    if dim < 3:
        if lam.size == 0:
            return 0
        return int(np.count_nonzero(lam <= SHORT_CURVE_RTOL * lam.max()))
    second = lam[:-2] - 2 * lam[1:-1] + lam[2:]
    j = int(np.argmax(second)) + 2
    return dim - j


def gamma_nullity(singular_values, gamma: float) -> int:
    """
    Number of singular values at most `gamma` times the smallest one (inclusive).
    """
    lam = _values(singular_values)
    if lam.size == 0:
        raise ContractViolation("The singular values must not be empty.")
    smallest = lam.min()
    if smallest == 0:
        return int(np.count_nonzero(lam == 0))
    # relative slack absorbs the rounding of gamma * smallest
    return int(np.count_nonzero(lam <= gamma * smallest * (1 + 1e-12)))


def accumulate_covariance(C: torch.Tensor, J: torch.Tensor) -> torch.Tensor:
    if J.dim() != 2 or J.shape[1] != C.shape[0]:
        raise ContractViolation(f"Rows of width {J.shape[-1]} cannot update a {tuple(C.shape)} covariance.")
    return C + J.T @ J


def build_projector(C: torch.Tensor, policy: NullityPolicy, eta: float = 1.0) -> Tuple[torch.Tensor, int, Spectrum]:
    """
    Normalized null-space projector of `C` blended with the identity: B = eta * U0 U0^T / ||U0 U0^T||_F
    + (1 - eta) I, where U0 holds the eigenvectors of the R smallest eigenvalues. With R = 0 the
    projector part is the zero matrix.
    """
    if not 0.0 <= eta <= 1.0:
        raise ContractViolation(f"The projection weight eta must be in [0, 1], got {eta}.")
    spectrum = eig_sym_psd(C)
    D = C.shape[0]
    R = policy.nullity(spectrum.singular_values)
    if R > 0:
        U0 = spectrum.right_vectors[:, D - R :]
        raw = U0 @ U0.T
        raw = (raw + raw.T) / (2 * frobenius_norm(raw))
    else:
        raw = torch.zeros(D, D, dtype=DTYPE)
    return eta * raw + (1 - eta) * eye(D), R, spectrum


def pgp_projector(C_tokens: torch.Tensor, policy: NullityPolicy, eta: float = 1.0) -> Tuple[torch.Tensor, int, Spectrum]:
    """
    Projector for the simplified condition X dP^T = 0, built from the covariance of the raw tokens
    entering the layer. Applied on the right only.
    """
    return build_projector(C_tokens, policy, eta)


def project_update(P_G: torch.Tensor, B1: torch.Tensor, B2: torch.Tensor) -> torch.Tensor:
    if B2.shape != (P_G.shape[0], P_G.shape[0]) or B1.shape != (P_G.shape[1], P_G.shape[1]):
        raise ContractViolation(
            f"Projectors {tuple(B2.shape)} and {tuple(B1.shape)} do not fit an update of shape {tuple(P_G.shape)}."
        )
    return matmul(matmul(B2, P_G), B1)


def _root_factor(spectrum: Spectrum) -> torch.Tensor:
    # F with F^T F = C; ||F x|| equals ||Omega x|| for every Omega with Omega^T Omega = C
    return torch.sqrt(spectrum.singular_values).unsqueeze(1) * spectrum.right_vectors.T


@dataclass
class CovariancePair:
    c1: torch.Tensor
    c2: torch.Tensor
    tokens: torch.Tensor

    @classmethod
    def zeros(cls, dim: int, prompts: int) -> "CovariancePair":
        return cls(
            c1=torch.zeros(dim, dim, dtype=DTYPE),
            c2=torch.zeros(prompts, prompts, dtype=DTYPE),
            tokens=torch.zeros(dim, dim, dtype=DTYPE),
        )

    def accumulate(self, j1: torch.Tensor, j2: torch.Tensor, tokens: torch.Tensor = None) -> None:
        self.c1 = accumulate_covariance(self.c1, j1)
        self.c2 = accumulate_covariance(self.c2, j2)
        if tokens is not None:
            self.tokens = accumulate_covariance(self.tokens, tokens)


@dataclass
class ProjectorPair:
    """
    The (already eta-blended) projectors of one layer together with the covariance root factors used
    to audit the consistency conditions of applied updates.
    """

    b1: torch.Tensor
    b2: torch.Tensor
    r1: int = 0
    r2: int = 0
    eta1: float = 1.0
    eta2: float = 1.0
    policy: NullityPolicy = field(default_factory=NullityPolicy)
    factor1: Optional[torch.Tensor] = None
    factor2: Optional[torch.Tensor] = None
    omega1_norm: float = 0.0
    omega2_norm: float = 0.0

    @classmethod
    def identity(cls, dim: int, prompts: int, eta1: float = 1.0, eta2: float = 1.0, policy: NullityPolicy = None) -> "ProjectorPair":
        return cls(
            b1=eye(dim),
            b2=eye(prompts),
            eta1=eta1,
            eta2=eta2,
            policy=policy or NullityPolicy(),
            factor1=torch.zeros(dim, dim, dtype=DTYPE),
            factor2=torch.zeros(prompts, prompts, dtype=DTYPE),
        )

    @classmethod
    def build(
        cls, covariance: CovariancePair, policy: NullityPolicy, eta1: float = 1.0, eta2: float = 1.0
    ) -> Tuple["ProjectorPair", Spectrum, Spectrum]:
        b1, r1, s1 = build_projector(covariance.c1, policy, eta1)
        b2, r2, s2 = build_projector(covariance.c2, policy, eta2)
        pair = cls(
            b1=b1,
            b2=b2,
            r1=r1,
            r2=r2,
            eta1=eta1,
            eta2=eta2,
            policy=policy,
            factor1=_root_factor(s1),
            factor2=_root_factor(s2),
            omega1_norm=float(torch.sqrt(s1.singular_values.sum())),
            omega2_norm=float(torch.sqrt(s2.singular_values.sum())),
        )
        return pair, s1, s2

    def project(self, P_G: torch.Tensor, use_b1: bool = True, use_b2: bool = True) -> torch.Tensor:
        B1 = self.b1 if use_b1 else eye(self.b1.shape[0])
        B2 = self.b2 if use_b2 else eye(self.b2.shape[0])
        return project_update(P_G, B1, B2)

    def residuals(self, dP: torch.Tensor) -> Tuple[float, float]:
        """
        Relative residuals ||Omega1 dP^T|| / ((1 + ||Omega1||)(1 + ||dP||)) and the same for
        ||Omega2 dP||, with Omega the stacked rows of all finished tasks.
        """
        dp_norm = frobenius_norm(dP)
        res1 = frobenius_norm(self.factor1 @ dP.T) / ((1 + self.omega1_norm) * (1 + dp_norm))
        res2 = frobenius_norm(self.factor2 @ dP) / ((1 + self.omega2_norm) * (1 + dp_norm))
        return res1, res2


@dataclass
class SpectrumRecord:
    task: int
    layer: int
    covariance: str
    singular_values: List[float]
    nullity: int


@dataclass
class SpectrumTrace:
    records: List[SpectrumRecord] = field(default_factory=list)

    def add(self, task: int, layer: int, covariance: str, spectrum: Spectrum, nullity: int) -> None:
        values = [float(v) for v in spectrum.singular_values]
        self.records.append(SpectrumRecord(task, layer, covariance, values, nullity))
        if nullity == 0:
            log.warning(
                f"Task {task}, layer {layer}: the covariance {covariance} has nullity 0, "
                "its side of the prompt update is reduced to the (1 - eta) identity part."
            )

    def rows(self):
        for r in self.records:
            for inx, value in enumerate(r.singular_values):
                yield dict(
                    task=r.task,
                    layer=r.layer,
                    covariance=r.covariance,
                    index=inx,
                    singular_value=value,
                    chosen_nullity=r.nullity,
                )

    def zero_nullities(self) -> List[SpectrumRecord]:
        return [r for r in self.records if r.nullity == 0]
