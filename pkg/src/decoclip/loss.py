"""Semantic matching loss and a hard-target InfoNCE baseline.

Logits are cosine similarities of unit embeddings. Predictions are a
temperature softmax taken along rows (image to text) or columns (text to
image); each direction is scored by cross entropy against the matching
soft-target matrix and the two are averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from decoclip.pairing import SimilarityBundle

TAU_INIT = 0.07
TAU_MAX = 100.0
LOG_CLAMP = 1e-30
UNIT_TOL = 1e-3

V2T = "v2t"
T2V = "t2v"


class ContractViolation(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


class Temperature(nn.Module):
    """Learnable positive temperature, stored as log tau."""

    def __init__(self, init: float = TAU_INIT, max_value: float | None = TAU_MAX):
        super().__init__()
        if init <= 0:
            raise ValueError("temperature must be positive")
        self.log_tau = nn.Parameter(torch.tensor(math.log(init), dtype=torch.get_default_dtype()))
        self.max_value = max_value

    def forward(self) -> torch.Tensor:
        return self.log_tau.exp()

    @torch.no_grad()
    def clamp_(self):
        if self.max_value is not None:
            self.log_tau.clamp_(max=math.log(self.max_value))

    @property
    def value(self) -> float:
        return self.log_tau.detach().exp().item()


@dataclass
class LossReport:
    l_v2t: torch.Tensor
    l_t2v: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"loss_v2t": self.l_v2t.item(), "loss_t2v": self.l_t2v.item(),
                "loss_total": self.total.item()}


def _check_direction(direction: str) -> int:
    if direction == V2T:
        return 1
    if direction == T2V:
        return 0
    raise ValueError(f"direction must be {V2T!r} or {T2V!r}, got {direction!r}")


def logits(v_tilde: torch.Tensor, t_tilde: torch.Tensor) -> torch.Tensor:
    """Cosine logits ``[i, j] = <v_i, t_j>`` for unit-norm rows."""
    for name, x in (("image", v_tilde), ("text", t_tilde)):
        dev = (x.detach().norm(dim=1) - 1).abs()
        if dev.numel() and float(dev.max()) > UNIT_TOL:
            raise ContractViolation(f"{name} embeddings are not unit-norm (max deviation {float(dev.max()):.3g})")
    return v_tilde @ t_tilde.T


def predict_distribution(s_hat: torch.Tensor, tau, direction: str) -> torch.Tensor:
    """Temperature softmax over columns (``v2t``) or rows (``t2v``)."""
    axis = _check_direction(direction)
    if not isinstance(tau, torch.Tensor):
        tau = torch.as_tensor(tau, dtype=s_hat.dtype)
    if float(tau.detach()) <= 0:
        raise ValueError("temperature must be positive")
    z = s_hat / tau
    z = z - z.max(dim=axis, keepdim=True).values
    e = z.exp()
    return e / e.sum(dim=axis, keepdim=True)


def cross_entropy(y: torch.Tensor, y_hat: torch.Tensor, direction: str) -> torch.Tensor:
    """``-(1/N) sum_ij y_ij log y_hat_ij``; direction selects the normalized axis."""
    _check_direction(direction)
    n = y.shape[0] if direction == V2T else y.shape[1]
    loss = -(y * y_hat.clamp_min(LOG_CLAMP).log()).sum() / n
    if not torch.isfinite(loss):
        raise NonFiniteLossError("cross entropy is not finite")
    return loss


def _as_tensor(x, like: torch.Tensor) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(dtype=like.dtype)
    return torch.as_tensor(np.asarray(x), dtype=like.dtype)


def semantic_matching_loss(v_tilde: torch.Tensor, t_tilde: torch.Tensor,
                           bundle: SimilarityBundle, tau) -> LossReport:
    n = v_tilde.shape[0]
    if t_tilde.shape[0] != n or bundle.y_v2t.shape != (n, n) or bundle.y_t2v.shape != (n, n):
        raise ValueError("inconsistent batch sizes")
    s_hat = logits(v_tilde, t_tilde)
    y_v2t = _as_tensor(bundle.y_v2t, s_hat)
    y_t2v = _as_tensor(bundle.y_t2v, s_hat)
    l_v2t = cross_entropy(y_v2t, predict_distribution(s_hat, tau, V2T), V2T)
    l_t2v = cross_entropy(y_t2v, predict_distribution(s_hat, tau, T2V), T2V)
    return LossReport(l_v2t, l_t2v, (l_v2t + l_t2v) / 2)


def hard_infonce_loss(v_tilde: torch.Tensor, t_tilde: torch.Tensor, tau) -> LossReport:
    """Symmetric InfoNCE where image i is paired only with text i."""
    s_hat = logits(v_tilde, t_tilde)
    z = s_hat / tau
    target = torch.arange(z.shape[0])
    l_v2t = F.cross_entropy(z, target)
    l_t2v = F.cross_entropy(z.T, target)
    total = (l_v2t + l_t2v) / 2
    if not torch.isfinite(total):
        raise NonFiniteLossError("InfoNCE loss is not finite")
    return LossReport(l_v2t, l_t2v, total)
