"""Contrastive objectives of both training stages.

All losses take unit-norm embedding rows, so cosine similarity is a plain
dot product.
"""

from typing import Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from cpheno.errors import ParameterError, PreconditionError

Temperature = Union[float, torch.Tensor]


def _check_temperature(tau: Temperature, name: str) -> None:
    if float(tau) <= 0:
        raise ParameterError(f"{name} must be positive, got {float(tau)}")


def _as_pairing(pairing: Union[Sequence[int], torch.Tensor], n: int) -> torch.Tensor:
    pairing = torch.as_tensor(pairing, dtype=torch.long)
    if pairing.shape != (n,):
        raise PreconditionError(f"pairing must have {n} entries, got {tuple(pairing.shape)}")
    index = torch.arange(n)
    if (pairing < 0).any() or (pairing >= n).any():
        raise PreconditionError("pairing entries out of range")
    if (pairing == index).any() or not torch.equal(pairing[pairing], index):
        raise PreconditionError("pairing must be a fixed-point-free involution")
    return pairing


def knowledge_infonce_loss(
    Z: torch.Tensor,
    pairing: Union[Sequence[int], torch.Tensor],
    tau: Temperature = 0.07,
    norm_tol: float = 1e-4,
) -> torch.Tensor:
    """
    In-batch InfoNCE over 2B attribute embeddings

    Row i is pulled towards row pairing[i]; every other row except i itself
    is a negative.

    Parameters:
        Z (torch.Tensor): 2B x d unit-norm rows
        pairing: Fixed-point-free involution giving each row's positive
        tau (float): Temperature
        norm_tol (float): Allowed deviation of row norms from 1
    """
    _check_temperature(tau, "tau1")
    if Z.dim() != 2 or Z.shape[0] < 2 or Z.shape[0] % 2:
        raise PreconditionError(f"Z must be 2B x d with B >= 1, got {tuple(Z.shape)}")
    norms = Z.detach().norm(dim=1)
    if (norms - 1).abs().max() > norm_tol:
        raise PreconditionError("rows of Z must be unit-norm")
    targets = _as_pairing(pairing, Z.shape[0]).to(Z.device)

    logits = Z @ Z.T / tau
    self_mask = torch.eye(Z.shape[0], dtype=torch.bool, device=Z.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    return F.cross_entropy(logits, targets)


def _bidirectional(A: torch.Tensor, B: torch.Tensor, tau: Temperature) -> torch.Tensor:
    logits = A @ B.T / tau
    labels = torch.arange(A.shape[0], device=A.device)
    return F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels)


def multimodal_contrastive_loss(V: torch.Tensor, T: torch.Tensor, tau2: Temperature = 0.07) -> torch.Tensor:
    """Image-to-text plus text-to-image cross-entropy over a row-aligned batch"""
    _check_temperature(tau2, "tau2")
    if V.dim() != 2 or V.shape != T.shape:
        raise ParameterError(f"V and T must have equal B x d shapes, got {tuple(V.shape)} and {tuple(T.shape)}")
    return _bidirectional(V, T, tau2)


def knowledge_distillation_loss(
    T_student: torch.Tensor,
    K_teacher: torch.Tensor,
    tau3: Temperature = 0.07,
    projection: Optional[nn.Module] = None,
) -> torch.Tensor:
    """
    Text-knowledge contrastive loss against frozen teacher embeddings

    The teacher rows are detached; a projection, when given, maps student
    rows into the teacher space and is followed by re-normalisation.
    """
    _check_temperature(tau3, "tau3")
    if projection is not None:
        T_student = F.normalize(projection(T_student), dim=-1)
    if T_student.dim() != 2 or T_student.shape != K_teacher.shape:
        raise ParameterError(
            f"student and teacher shapes differ: {tuple(T_student.shape)} vs {tuple(K_teacher.shape)}"
        )
    return _bidirectional(T_student, K_teacher.detach(), tau3)


def vlp_loss_terms(
    V: torch.Tensor,
    T: torch.Tensor,
    K: Optional[torch.Tensor],
    tau2: Temperature = 0.07,
    tau3: Temperature = 0.07,
    alpha: float = 0.3,
    projection: Optional[nn.Module] = None,
) -> Tuple[torch.Tensor, torch.Tensor, Optional[torch.Tensor]]:
    """(total, multimodal, distillation); distillation is None without teacher rows"""
    if alpha < 0:
        raise ParameterError(f"alpha must be nonnegative, got {alpha}")
    l_m = multimodal_contrastive_loss(V, T, tau2)
    if K is None:
        return l_m, l_m, None
    l_kd = knowledge_distillation_loss(T, K, tau3, projection)
    if alpha == 0:
        return l_m, l_m, l_kd
    return l_m + alpha * l_kd, l_m, l_kd


def total_vlp_loss(
    V: torch.Tensor,
    T: torch.Tensor,
    K: Optional[torch.Tensor],
    tau2: Temperature = 0.07,
    tau3: Temperature = 0.07,
    alpha: float = 0.3,
    projection: Optional[nn.Module] = None,
) -> torch.Tensor:
    """L_M + alpha * L_KD"""
    return vlp_loss_terms(V, T, K, tau2, tau3, alpha, projection)[0]
