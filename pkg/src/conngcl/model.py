"""Graph convolutional encoder with inner-product decoder and linear readout.

Each layer applies the normalized adjacency, a weight matrix, and ReLU; no
biases. Layer outputs are concatenated into a node-by-width matrix whose
column means form the graph embedding. The decoder reconstructs a functional
matrix as ReLU of the concatenation's Gram matrix; the classifier is a
sigmoid over a single linear unit on the embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import GraphView
from .errors import DataError, ValidationError

CHECKPOINT_VERSION = 1

DEFAULT_LAYER_WIDTHS = (32, 16, 8)


def stable_sigmoid(t: np.ndarray | float) -> np.ndarray | float:
    """Sigmoid computed without overflow for large |t|."""
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


@dataclass
class ModelConfig:
    n: int
    layer_widths: tuple[int, ...] = DEFAULT_LAYER_WIDTHS

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if self.n < 1:
            raise ValidationError(f"node count must be >= 1, got {self.n}")
        if not self.layer_widths or any(w < 1 for w in self.layer_widths):
            raise ValidationError(f"layer widths must be positive, got {self.layer_widths}")

    @property
    def concat_dim(self) -> int:
        return sum(self.layer_widths)

    def theta_shapes(self) -> list[tuple[int, int]]:
        dims = (self.n,) + self.layer_widths
        return [(dims[i], dims[i + 1]) for i in range(len(self.layer_widths))]


@dataclass
class ModelParams:
    """Encoder weights (one matrix per layer) plus classifier weight and bias."""

    theta: list[np.ndarray]
    clf_w: np.ndarray
    clf_b: float

    def copy(self) -> "ModelParams":
        return ModelParams([t.copy() for t in self.theta], self.clf_w.copy(), float(self.clf_b))

    def validate_against(self, cfg: ModelConfig) -> None:
        shapes = [t.shape for t in self.theta]
        if shapes != cfg.theta_shapes():
            raise ValidationError(f"theta shapes {shapes} do not match config {cfg.theta_shapes()}")
        if self.clf_w.shape != (cfg.concat_dim,):
            raise ValidationError(
                f"classifier weight shape {self.clf_w.shape} != ({cfg.concat_dim},)"
            )


@dataclass
class ForwardCache:
    """Stacked forward pass over a list of views; kept for reverse mode."""

    a: np.ndarray            # (V, N, N)
    x0: np.ndarray           # (V, N, N)
    p: list[np.ndarray]      # per layer, adjacency-propagated input (V, N, d_in)
    s: list[np.ndarray]      # per layer, pre-activation (V, N, d_out)
    h: list[np.ndarray]      # per layer, post-ReLU (V, N, d_out)
    x_c: np.ndarray          # (V, N, D)
    z: np.ndarray            # (V, D)
    m: np.ndarray | None     # decoder pre-activation (V, N, N)
    sigma_hat: np.ndarray | None
    logits: np.ndarray       # (V,)
    y_hat: np.ndarray        # (V,)

    @property
    def n_views(self) -> int:
        return self.a.shape[0]


@dataclass
class EncoderOutput:
    x_layers: list[np.ndarray]
    x_c: np.ndarray
    z: np.ndarray
    sigma_hat: np.ndarray
    y_hat: float


def forward_batch(
    views: Sequence[GraphView], params: ModelParams, with_decoder: bool = True
) -> ForwardCache:
    if not views:
        raise ValidationError("forward_batch needs at least one view")
    a = np.stack([v.a_norm for v in views])
    x0 = np.stack([v.x0 for v in views])
    h_prev = x0
    p_list, s_list, h_list = [], [], []
    for theta in params.theta:
        p = np.matmul(a, h_prev)
        s = np.matmul(p, theta)
        h = np.maximum(s, 0.0)
        p_list.append(p)
        s_list.append(s)
        h_list.append(h)
        h_prev = h
    x_c = np.concatenate(h_list, axis=2)
    z = x_c.mean(axis=1)
    if with_decoder:
        m = np.matmul(x_c, x_c.transpose(0, 2, 1))
        sigma_hat = np.maximum(m, 0.0)
    else:
        m = sigma_hat = None
    logits = z @ params.clf_w + params.clf_b
    y_hat = stable_sigmoid(logits)
    return ForwardCache(a, x0, p_list, s_list, h_list, x_c, z, m, sigma_hat, logits, y_hat)


def encode(view: GraphView, params: ModelParams) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-layer outputs and their column-wise concatenation for one view."""
    cache = forward_batch([view], params, with_decoder=False)
    return [h[0] for h in cache.h], cache.x_c[0]


def decode(x_c: np.ndarray) -> np.ndarray:
    """ReLU of the Gram matrix of the concatenated representation."""
    return np.maximum(x_c @ x_c.T, 0.0)


def pool(x_c: np.ndarray) -> np.ndarray:
    """Column means: one embedding coordinate per concatenated unit."""
    return x_c.mean(axis=0)


def classify(z: np.ndarray, params: ModelParams) -> float:
    return float(stable_sigmoid(z @ params.clf_w + params.clf_b))


def forward_full(view: GraphView, params: ModelParams) -> EncoderOutput:
    cache = forward_batch([view], params, with_decoder=True)
    return EncoderOutput(
        x_layers=[h[0] for h in cache.h],
        x_c=cache.x_c[0],
        z=cache.z[0],
        sigma_hat=cache.sigma_hat[0],
        y_hat=float(cache.y_hat[0]),
    )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: ModelParams, cfg: ModelConfig, path: str | Path) -> None:
    params.validate_against(cfg)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": {"n": cfg.n, "layer_widths": list(cfg.layer_widths)},
        "theta": [t.tolist() for t in params.theta],
        "clf_w": params.clf_w.tolist(),
        "clf_b": float(params.clf_b),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", newline="\n")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelConfig]:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"checkpoint {path}: unsupported format_version {payload.get('format_version')!r}"
        )
    try:
        cfg = ModelConfig(payload["config"]["n"], tuple(payload["config"]["layer_widths"]))
        params = ModelParams(
            [np.array(t, dtype=np.float64) for t in payload["theta"]],
            np.array(payload["clf_w"], dtype=np.float64),
            float(payload["clf_b"]),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"checkpoint {path} missing or malformed fields: {exc}") from exc
    try:
        params.validate_against(cfg)
    except ValidationError as exc:
        raise DataError(f"checkpoint {path}: {exc}") from exc
    return params, cfg
