"""Reconstruction, classification, and supervised contrastive objectives.

All reductions are plain numpy sums over fixed axis orders, so repeated
evaluation on identical inputs is bit-reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

CE_CLAMP = 1e-12


def mse_loss(sigma_hat: np.ndarray, sigma: np.ndarray) -> float:
    """Squared Frobenius distance divided by the entry count."""
    sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma_hat.shape != sigma.shape:
        raise ValidationError(f"shape mismatch: {sigma_hat.shape} vs {sigma.shape}")
    return float(np.mean((sigma_hat - sigma) ** 2))


def ce_loss(y_hat: float, y: int) -> float:
    """Binary cross-entropy with predictions clamped away from {0, 1}."""
    if y not in (0, 1):
        raise ValidationError(f"label must be 0 or 1, got {y!r}")
    p = min(max(float(y_hat), CE_CLAMP), 1.0 - CE_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


@dataclass
class SupConBatch:
    """Embeddings (rows), their labels, and the temperature."""

    z: np.ndarray
    y: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.z.ndim != 2:
            raise ValidationError(f"embeddings must be 2-D, got shape {self.z.shape}")
        if self.y.shape != (self.z.shape[0],):
            raise ValidationError(
                f"labels shape {self.y.shape} does not match {self.z.shape[0]} embeddings"
            )
        if self.z.shape[0] < 2 or self.z.shape[0] % 2 != 0:
            raise ValidationError(f"batch must hold an even count >= 2, got {self.z.shape[0]}")
        if not (0.0 < self.tau <= 1.0):
            raise ValidationError(f"tau must be in (0, 1], got {self.tau}")


def _normalize_rows(z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.where(norms > 0, norms, 1.0)


def _supcon_parts(z: np.ndarray, y: np.ndarray, tau: float):
    """Loss plus the row-softmax, positive mask, and positive counts.

    Anchors without any same-label partner contribute zero and are reported
    via a warning; their softmax row is zeroed so downstream gradients vanish.
    """
    count = z.shape[0]
    s = (z @ z.T) / tau
    off_diag = ~np.eye(count, dtype=bool)
    pos_mask = (y[:, None] == y[None, :]) & off_diag
    pos_counts = pos_mask.sum(axis=1)
    has_pos = pos_counts > 0
    if not np.all(has_pos):
        lonely = np.nonzero(~has_pos)[0].tolist()
        warnings.warn(f"anchors without positives contribute zero loss: {lonely}", stacklevel=3)

    s_masked = np.where(off_diag, s, -np.inf)
    row_max = s_masked.max(axis=1)
    exp_shift = np.where(off_diag, np.exp(s - row_max[:, None]), 0.0)
    lse = row_max + np.log(exp_shift.sum(axis=1))
    softmax = exp_shift / exp_shift.sum(axis=1, keepdims=True)
    softmax[~has_pos, :] = 0.0

    log_prob = s - lse[:, None]
    per_anchor = np.where(
        has_pos,
        -(log_prob * pos_mask).sum(axis=1) / np.maximum(pos_counts, 1),
        0.0,
    )
    return float(per_anchor.sum()), softmax, pos_mask, pos_counts, has_pos


def supcon_loss(batch: SupConBatch, normalize: bool = False) -> float:
    """Supervised contrastive loss summed over all anchors in the batch."""
    z = _normalize_rows(batch.z) if normalize else batch.z
    loss, *_ = _supcon_parts(z, batch.y, batch.tau)
    return loss


def baseline_loss(
    sigma_hats: list[np.ndarray],
    sigmas: list[np.ndarray],
    y_hats: list[float] | np.ndarray,
    ys: list[int] | np.ndarray,
    lam: float,
) -> float:
    """Batch mean reconstruction error plus lam times batch mean cross-entropy."""
    if not (len(sigma_hats) == len(sigmas) == len(y_hats) == len(ys)):
        raise ValidationError("baseline_loss inputs must have equal lengths")
    if not sigma_hats:
        raise ValidationError("baseline_loss needs a non-empty batch")
    mse = np.mean([mse_loss(a, b) for a, b in zip(sigma_hats, sigmas)])
    ce = np.mean([ce_loss(p, t) for p, t in zip(y_hats, ys)])
    return float(mse + lam * ce)


def pretrain_loss(
    recon_pairs: list[tuple[np.ndarray, np.ndarray]],
    contrast: SupConBatch,
    lam: float,
) -> float:
    """Mean reconstruction error over clean graphs plus lam times the contrastive sum."""
    if 2 * len(recon_pairs) != contrast.z.shape[0]:
        raise ValidationError(
            f"{len(recon_pairs)} reconstruction pairs need {2 * len(recon_pairs)} "
            f"contrastive views, got {contrast.z.shape[0]}"
        )
    mse = np.mean([mse_loss(a, b) for a, b in recon_pairs])
    return float(mse + lam * supcon_loss(contrast))
