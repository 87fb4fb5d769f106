"""Graph views and stochastic augmentations for contrastive training.

A view pairs a normalized adjacency with a node-feature matrix. Clean views
use the identity as features. Attribute masking zeroes a random subset of
identity columns; edge dropping removes existing edges independently and
symmetrically. Both take an explicit Generator so callers control substreams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Connectome, normalize_adjacency
from .errors import ValidationError


@dataclass
class AugmentConfig:
    """Edge-drop probability and the masking ceiling (None: the full node count)."""

    edge_drop_prob: float = 0.2
    mask_count_max: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.edge_drop_prob <= 1.0):
            raise ValidationError(f"edge_drop_prob must be in [0, 1], got {self.edge_drop_prob}")
        if self.mask_count_max is not None:
            if self.mask_count_max < 0:
                raise ValidationError(f"mask_count_max must be >= 0, got {self.mask_count_max}")
            self.mask_count_max = int(self.mask_count_max)


@dataclass
class GraphView:
    """Normalized adjacency plus node features for one encoder pass."""

    a_norm: np.ndarray
    x0: np.ndarray


def clean_view(subject: Connectome) -> GraphView:
    return GraphView(normalize_adjacency(subject.sc), np.eye(subject.n))


def mask_attributes(n: int, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Identity with m columns zeroed; m uniform on {0..mask_count_max}, nodes without replacement."""
    limit = n if cfg.mask_count_max is None else cfg.mask_count_max
    if limit > n:
        raise ValidationError(f"mask_count_max {limit} exceeds node count {n}")
    m = int(rng.integers(0, limit + 1))
    idx = rng.choice(n, size=m, replace=False)
    x0 = np.eye(n)
    x0[:, idx] = 0.0
    return x0


def drop_edges(sc: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Remove each existing unordered edge independently with edge_drop_prob, symmetrically."""
    sc = np.asarray(sc, dtype=np.float64)
    n = sc.shape[0]
    iu = np.triu_indices(n, k=1)
    u = rng.random(iu[0].size)
    upper = np.where(u < cfg.edge_drop_prob, 0.0, sc[iu])
    out = np.zeros_like(sc)
    out[iu] = upper
    return out + out.T


def make_contrastive_batch(
    batch: list[Connectome], cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[list[GraphView], np.ndarray]:
    """Two augmented views per subject, adjacent and in input order.

    Odd positions carry the untouched adjacency with masked features; even
    positions carry the edge-dropped adjacency with intact identity features.
    Labels are duplicated accordingly.
    """
    views: list[GraphView] = []
    labels: list[int] = []
    for subj in batch:
        x0 = mask_attributes(subj.n, cfg, rng)
        views.append(GraphView(normalize_adjacency(subj.sc), x0))
        views.append(GraphView(normalize_adjacency(drop_edges(subj.sc, cfg, rng)), np.eye(subj.n)))
        labels.extend([subj.label, subj.label])
    return views, np.array(labels, dtype=np.int64)


def sample_baseline_augmentation(
    batch: list[Connectome], cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[list[GraphView], np.ndarray]:
    """One fair coin per batch picks masking or dropping; applies it to every subject."""
    use_masking = rng.random() < 0.5
    views: list[GraphView] = []
    for subj in batch:
        if use_masking:
            views.append(
                GraphView(normalize_adjacency(subj.sc), mask_attributes(subj.n, cfg, rng))
            )
        else:
            views.append(
                GraphView(normalize_adjacency(drop_edges(subj.sc, cfg, rng)), np.eye(subj.n))
            )
    return views, np.array([s.label for s in batch], dtype=np.int64)
