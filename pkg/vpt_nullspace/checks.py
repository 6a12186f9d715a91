# -*- coding: utf-8 -*-

"""
The property suite behind `vptns check`. Every property measures one residual on seeded random
inputs and passes when the residual is within its tolerance.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
import torch

from .harness.metrics import AccuracyMatrix, final_metrics
from .lnconstraint import (
    PromptDistributionTarget,
    ln_drift_loss,
    ln_drift_loss_and_grad,
    ln_shift_check,
    permutation_shift,
    prompt_row_stats,
)
from .model import BackboneModel, LayerParams, LossSpec, layer_forward, prompt_gradients, total_loss
from .numeric import DTYPE, eig_sym_psd, frobenius_norm, layer_norm, softmax_rows
from .projector import CovariancePair, NullityPolicy, ProjectorPair, build_projector
from .rng import SeedTree

log = logging.getLogger("checks")

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    description: str

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


@dataclass(frozen=True)
class Property:
    name: str
    tolerance: float
    description: str
    measure: Callable


PROPERTIES: List[Property] = []


def prop(name, tolerance, description):
    def decorator(fn):
        PROPERTIES.append(Property(name, tolerance, description, fn))
        return fn

    return decorator


def _randn(g, *shape, std=1.0):
    return torch.randn(*shape, generator=g, dtype=DTYPE) * std


@prop("softmax_row_sums", 1e-14, "softmax rows are non-negative and sum to one")
def softmax_row_sums(g, fault):
    S = softmax_rows(_randn(g, 50, 4, 7, 11, std=5.0))
    return max(float((S.sum(-1) - 1).abs().max()), float((-S).clamp(min=0).max()))


@prop("eig_reconstruction", 1e-12, "symmetric eigen-decomposition reconstructs the matrix, descending order")
def eig_reconstruction(g, fault):
    worst = 0.0
    for n in (1, 5, 32):
        A = _randn(g, n, max(1, n // 2))
        C = A @ A.T
        s = eig_sym_psd(C)
        U, lam = s.right_vectors, s.singular_values
        rec = frobenius_norm(U @ torch.diag(lam) @ U.T - C) / max(1.0, frobenius_norm(C))
        order = float((lam[1:] - lam[:-1]).clamp(min=0).max()) if n > 1 else 0.0
        worst = max(worst, rec, order)
    return worst


@prop("layer_norm_stats", 1e-12, "normalized rows have zero mean and variance var / (var + eps)")
def layer_norm_stats(g, fault):
    D, eps = 32, 1e-6
    rows = _randn(g, 20, D, std=3.0) + 1.5
    out, stats = layer_norm(rows, torch.ones(D, dtype=DTYPE), torch.zeros(D, dtype=DTYPE), eps)
    var_in = stats.std**2 - eps
    var_out = out.var(dim=-1, correction=0)
    return max(float(out.mean(-1).abs().max()), float((var_out - var_in / (var_in + eps)).abs().max()))


@prop("ln_shift_identity", 1e-10, "LN(P + dP) = LN(P) + dP / sigma * alpha for 100 row-permutation updates")
def ln_shift_identity(g, fault):
    worst = 0.0
    D = 32
    for _ in range(100):
        P = _randn(g, 4, D, std=2.0)
        alpha = _randn(g, D) + 1.0
        worst = max(worst, ln_shift_check(P, permutation_shift(P, g), alpha, beta=_randn(g, D)))
    return worst


def _null_space_update(X, P, params, g):
    # dP with Omega1 dP^T = 0 and Omega2 dP = 0 for one sample in LN-bypass mode
    _, trace = layer_forward(X, P, params, capture=True, ln_bypass=True)
    omega1 = torch.einsum("hnd,hDd->hnD", trace.q_x, params.key_head_blocks()).reshape(-1, params.dim)
    omega2 = trace.s_p.reshape(-1, P.shape[0])
    cov = CovariancePair.zeros(params.dim, P.shape[0])
    cov.accumulate(omega1, omega2)
    pair, _, _ = ProjectorPair.build(cov, NullityPolicy("exact"))
    dP = pair.project(_randn(g, *P.shape))
    return dP / max(frobenius_norm(dP), 1e-300) * frobenius_norm(P), trace


@prop("ln_bypass_consistency", 1e-8, "null-space prompt updates leave the attention output of 100 inputs unchanged")
def ln_bypass_consistency(g, fault):
    worst = 0.0
    for inx in range(100):
        D, H, N, M = (8, 2, 3, 8) if inx % 2 == 0 else (8, 1, 3, 5)
        params = LayerParams(D, H, generator=g)
        X, P = _randn(g, N, D), _randn(g, M, D)
        dP, trace = _null_space_update(X, P, params, g)
        _, after = layer_forward(X, P + dP, params, capture=True, ln_bypass=True)
        worst = max(worst, frobenius_norm(after.f_z - trace.f_z) / frobenius_norm(trace.f_z))
    return worst


@prop("prompt_query_omission", 1e-13, "image-token outputs equal the full attention with prompt queries dropped afterwards")
def prompt_query_omission(g, fault):
    D, H, N, M, eps = 16, 4, 6, 3, 1e-6
    params = LayerParams(D, H, generator=g)
    X, P = _randn(g, N, D), _randn(g, M, D)
    _, trace = layer_forward(X, P, params, capture=True, eps=eps)

    Z, _ = layer_norm(torch.cat([X, P]), params.ln1_alpha, params.ln1_beta, eps)
    d = D // H
    heads = []
    for h in range(H):
        cols = slice(h * d, (h + 1) * d)
        q = Z @ params.W_q[:, cols] + params.b_q[cols]
        k = Z @ params.W_k[:, cols] + params.b_k[cols]
        v = Z @ params.W_v[:, cols] + params.b_v[cols]
        heads.append(torch.softmax(q @ k.T / math.sqrt(d), dim=-1) @ v)
    full = torch.cat(heads, dim=-1)[:N]
    return frobenius_norm(trace.f_z - full) / frobenius_norm(full)


def _fd_relative_error(loss_fn, tensor, grad):
    """
    Norm-wise relative error between `grad` and central differences of `loss_fn` over every
    coordinate of `tensor`.
    """
    fd = torch.zeros_like(grad)
    with torch.no_grad():
        flat = tensor.view(-1)
        for i in range(flat.numel()):
            old = float(flat[i])
            flat[i] = old + FD_STEP
            plus = float(loss_fn())
            flat[i] = old - FD_STEP
            minus = float(loss_fn())
            flat[i] = old
            fd.view(-1)[i] = (plus - minus) / (2 * FD_STEP)
    return frobenius_norm(grad - fd) / max(frobenius_norm(grad), frobenius_norm(fd), 1e-12)


@prop("gradient_finite_differences", 1e-4, "prompt and head gradients match central differences on a D=8 model")
def gradient_finite_differences(g, fault):
    model = BackboneModel(dim=8, heads=2, layers=2, prompts=3, patch_dim=4, num_patches=4, generator=g)
    model.freeze_backbone()
    head = model.add_head(3)
    with torch.no_grad():
        head.weight.copy_(_randn(g, 8, 3))
        head.bias.copy_(_randn(g, 3, std=0.1))
        shifted = [P + _randn(g, *P.shape, std=0.5) for P in model.prompts]
    target = PromptDistributionTarget.capture(shifted, model.ln_eps)
    patches, labels = _randn(g, 6, 4, 4), torch.randint(0, 3, (6,), generator=g)
    spec = LossSpec(temperature=2.0, ln_coeff=0.5, ln_target=target)

    grads = prompt_gradients((patches, labels), model, spec)
    loss_fn = lambda: total_loss(patches, labels, model, spec)
    worst = 0.0
    for P, grad in zip(model.prompts, grads.prompts):
        worst = max(worst, _fd_relative_error(loss_fn, P.data, grad))
    for name, p in head.named_parameters():
        worst = max(worst, _fd_relative_error(loss_fn, p.data, grads.head[name]))
    return worst


@prop("ln_loss_gradient", 1e-4, "gradient of the prompt distribution loss matches central differences")
def ln_loss_gradient(g, fault):
    P = _randn(g, 4, 8)
    target = prompt_row_stats(_randn(g, 4, 8, std=1.5) + 0.3)
    _, grad = ln_drift_loss_and_grad(P, target)
    return _fd_relative_error(lambda: ln_drift_loss(prompt_row_stats(P), target), P, grad)


def _low_rank_pair(g, D=32, M=4, rank=10):
    cov = CovariancePair.zeros(D, M)
    j1 = _randn(g, 40, rank) @ _randn(g, rank, D)
    j2 = _randn(g, 40, 2) @ _randn(g, 2, M)
    cov.accumulate(j1, j2)
    return cov


@prop("projector_residuals", 1e-8, "projected updates satisfy both consistency conditions (eta = 1, exact nullity)")
def projector_residuals(g, fault):
    cov = _low_rank_pair(g)
    pair, _, _ = ProjectorPair.build(cov, NullityPolicy("exact"))
    if fault:
        noise = _randn(g, *pair.b1.shape, std=1e-3)
        pair.b1 = pair.b1 + (noise + noise.T) / 2
        log.warning("Fault injected: the D x D projector was perturbed off the null space.")
    worst = 0.0
    for _ in range(10):
        worst = max(worst, *pair.residuals(pair.project(_randn(g, 4, 32))))
    return worst


@prop("eta_monotone", 1e-12, "condition residuals do not increase with the projection weight eta")
def eta_monotone(g, fault):
    cov = _low_rank_pair(g)
    P_G = _randn(g, 4, 32)
    previous, worst = None, 0.0
    for eta in (0.0, 0.25, 0.5, 0.75, 0.9, 1.0):
        pair, _, _ = ProjectorPair.build(cov, NullityPolicy("exact"), eta1=eta, eta2=eta)
        res = sum(pair.residuals(pair.project(P_G)))
        if previous is not None:
            worst = max(worst, res - previous)
        previous = res
    return worst


def _brute_force(a):
    T = len(a)
    acc = sum(a[T - 1][i] for i in range(T)) / T
    if T == 1:
        return acc, None
    drops = []
    for i in range(T - 1):
        best = max(a[j][i] for j in range(i, T - 1))
        drops.append(best - a[T - 1][i])
    return acc, sum(drops) / (T - 1)


@prop("metric_formulas", 1e-12, "final accuracy and forgetting match the hand case and a brute-force recomputation")
def metric_formulas(g, fault):
    acc, fgt = final_metrics(AccuracyMatrix.from_rows([[0.9], [0.8, 0.7]]))
    worst = max(abs(acc - 0.75), abs(fgt - 0.1))
    rng = np.random.default_rng(int(torch.randint(0, 2**31, (1,), generator=g)))
    for _ in range(20):
        rows = [rng.uniform(0, 1, j + 1).tolist() for j in range(5)]
        acc, fgt = final_metrics(AccuracyMatrix.from_rows(rows))
        b_acc, b_fgt = _brute_force(rows)
        worst = max(worst, abs(acc - b_acc), abs(fgt - b_fgt))
    single_acc, single_fgt = final_metrics(AccuracyMatrix.from_rows([[0.5]]))
    if single_fgt is not None or single_acc != 0.5:
        worst = math.inf
    return worst


@prop("exact_nullity_projector", 1e-12, "exact-zero nullity recovers the rank deficiency of a covariance")
def exact_nullity_projector(g, fault):
    D, rank = 16, 6
    A = _randn(g, 30, rank) @ _randn(g, rank, D)
    B, R, _ = build_projector(A.T @ A, NullityPolicy("exact"))
    return abs(R - (D - rank)) + frobenius_norm(A @ B) / frobenius_norm(A)


def run_checks(inject_fault: bool = False, seed: int = 0) -> List[CheckResult]:
    seeds = SeedTree(seed)
    results = []
    for p in PROPERTIES:
        value = float(p.measure(seeds.generator("check", purpose=p.name), inject_fault))
        if math.isnan(value):
            value = math.inf
        results.append(CheckResult(p.name, value, p.tolerance, p.description))
        log.debug(f"{p.name}: {value:.3e} (tolerance {p.tolerance:.0e})")
    return results
