"""Manual reverse-mode gradients, Adam updates, and finite-difference checks.

Three objectives share one fused forward/backward over stacked views:

* ``baseline``     mean reconstruction error plus weighted mean cross-entropy
                   (cross-entropy alone when the decoder is disabled)
* ``pretrain``     mean reconstruction error over clean graphs plus weighted
                   contrastive loss over augmented views; classifier gradients
                   are structurally zero
* ``finetune-ce``  mean cross-entropy; ``freeze_encoder`` zeroes encoder
                   gradients

The finite-difference path recomputes every objective through the per-view
model ops and the losses module, so the check compares two independent routes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .augment import AugmentConfig, GraphView, clean_view, make_contrastive_batch
from .data import generate_synthetic
from .errors import NumericalError, ValidationError
from .model import (
    ForwardCache,
    ModelConfig,
    ModelParams,
    decode,
    encode,
    forward_batch,
    pool,
)

OBJECTIVES = ("baseline", "pretrain", "finetune-ce")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


@dataclass
class Gradients:
    d_theta: list[np.ndarray]
    d_clf_w: np.ndarray
    d_clf_b: float

    @staticmethod
    def zeros_for(params: ModelParams) -> "Gradients":
        return Gradients(
            [np.zeros_like(t) for t in params.theta],
            np.zeros_like(params.clf_w),
            0.0,
        )

    def blocks(self) -> list[tuple[str, np.ndarray | float]]:
        named = [(f"theta[{i}]", t) for i, t in enumerate(self.d_theta)]
        return named + [("clf_w", self.d_clf_w), ("clf_b", self.d_clf_b)]


@dataclass
class BatchInputs:
    """Everything one gradient evaluation needs besides the parameters.

    ``views``/``labels``/``fc_targets`` feed the forward passes that enter the
    reconstruction and classification terms. ``contrast_views`` and
    ``contrast_labels`` feed the contrastive term (pretrain only).
    """

    views: list[GraphView] | None = None
    labels: np.ndarray | None = None
    fc_targets: list[np.ndarray] | None = None
    contrast_views: list[GraphView] | None = None
    contrast_labels: np.ndarray | None = None
    lam: float = 0.0
    tau: float = 1.0
    use_decoder: bool = True


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Uniform Glorot draws for encoder weights; classifier starts at zero."""
    if seed < 0:
        raise ValidationError(f"seed must be nonnegative, got {seed}")
    rng = np.random.default_rng(seed)
    theta = []
    for d_in, d_out in cfg.theta_shapes():
        bound = math.sqrt(6.0 / (d_in + d_out))
        theta.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
    return ModelParams(theta, np.zeros(cfg.concat_dim), 0.0)


# ---------------------------------------------------------------------------
# fused forward/backward
# ---------------------------------------------------------------------------


def _encoder_backward(
    cache: ForwardCache, d_xc: np.ndarray, params: ModelParams
) -> list[np.ndarray]:
    widths = [t.shape[1] for t in params.theta]
    offsets = np.concatenate(([0], np.cumsum(widths)))
    n_layers = len(widths)
    d_theta: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    d_h = d_xc[:, :, offsets[n_layers - 1] : offsets[n_layers]]
    for l in range(n_layers - 1, -1, -1):
        d_s = d_h * (cache.s[l] > 0)
        d_theta[l] = np.tensordot(cache.p[l], d_s, axes=([0, 1], [0, 1]))
        if l > 0:
            # a_norm is symmetric, so the adjoint propagation reuses it directly
            d_h = d_xc[:, :, offsets[l - 1] : offsets[l]] + np.matmul(
                cache.a, np.matmul(d_s, params.theta[l].T)
            )
    return d_theta


def _decoder_backward(cache: ForwardCache, d_sigma_hat: np.ndarray) -> np.ndarray:
    g = d_sigma_hat * (cache.m > 0)
    return np.matmul(g + g.transpose(0, 2, 1), cache.x_c)


def _zip_add(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    return [x + y for x, y in zip(a, b)]


def _supcon_grad(z: np.ndarray, y: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    loss, softmax, pos_mask, pos_counts, has_pos = L._supcon_parts(z, y, tau)
    g = np.where(
        has_pos[:, None],
        (softmax - pos_mask / np.maximum(pos_counts, 1)[:, None]) / tau,
        0.0,
    )
    return loss, g @ z + g.T @ z


def compute_gradients(
    objective: str,
    inputs: BatchInputs,
    params: ModelParams,
    freeze_encoder: bool = False,
) -> tuple[float, Gradients]:
    """Loss value and exact gradients for one batch under the named objective."""
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}, expected one of {OBJECTIVES}")
    grads = Gradients.zeros_for(params)

    if objective == "pretrain":
        if not inputs.contrast_views:
            raise ValidationError("pretrain objective needs contrast_views")
        if inputs.contrast_labels is None or len(inputs.contrast_labels) != len(
            inputs.contrast_views
        ):
            raise ValidationError("contrast_labels must align with contrast_views")
        c_cache = forward_batch(inputs.contrast_views, params, with_decoder=False)
        sup_loss, d_z = _supcon_grad(
            c_cache.z, np.asarray(inputs.contrast_labels), inputs.tau
        )
        if inputs.use_decoder:
            if not inputs.views or inputs.fc_targets is None:
                raise ValidationError("pretrain with decoder needs clean views and fc_targets")
            if 2 * len(inputs.views) != len(inputs.contrast_views):
                raise ValidationError("contrastive batch must hold two views per clean graph")
            b = len(inputs.views)
            cache = forward_batch(inputs.views, params, with_decoder=True)
            targets = np.stack(inputs.fc_targets)
            diff = cache.sigma_hat - targets
            loss = float(np.mean(diff**2)) + inputs.lam * sup_loss
            d_sigma_hat = (2.0 / diff.size) * diff
            d_xc_clean = _decoder_backward(cache, d_sigma_hat)
            grads.d_theta = _zip_add(
                grads.d_theta, _encoder_backward(cache, d_xc_clean, params)
            )
            d_z = inputs.lam * d_z
        else:
            loss = sup_loss
        n = c_cache.x_c.shape[1]
        d_xc_contrast = np.broadcast_to(
            d_z[:, None, :] / n, c_cache.x_c.shape
        ).copy()
        grads.d_theta = _zip_add(
            grads.d_theta, _encoder_backward(c_cache, d_xc_contrast, params)
        )
    else:
        if not inputs.views:
            raise ValidationError(f"{objective} objective needs views")
        if inputs.labels is None or len(inputs.labels) != len(inputs.views):
            raise ValidationError("labels must align with views")
        b = len(inputs.views)
        labels = np.asarray(inputs.labels, dtype=np.float64)
        with_decoder = objective == "baseline" and inputs.use_decoder
        cache = forward_batch(inputs.views, params, with_decoder=with_decoder)
        ce_vals = [L.ce_loss(p, int(t)) for p, t in zip(cache.y_hat, labels)]
        ce_mean = float(np.mean(ce_vals))
        # classification weight: lam only when the reconstruction term is present
        ce_weight = inputs.lam if with_decoder else 1.0
        d_logit = ce_weight * (cache.y_hat - labels) / b
        d_z = d_logit[:, None] * params.clf_w[None, :]
        n = cache.x_c.shape[1]
        d_xc = np.broadcast_to(d_z[:, None, :] / n, cache.x_c.shape).copy()
        if with_decoder:
            if inputs.fc_targets is None:
                raise ValidationError("baseline with decoder needs fc_targets")
            targets = np.stack(inputs.fc_targets)
            diff = cache.sigma_hat - targets
            loss = float(np.mean(diff**2)) + inputs.lam * ce_mean
            d_sigma_hat = (2.0 / diff.size) * diff
            d_xc = d_xc + _decoder_backward(cache, d_sigma_hat)
        else:
            loss = ce_mean
        grads.d_clf_w = cache.z.T @ d_logit
        grads.d_clf_b = float(d_logit.sum())
        if not freeze_encoder:
            grads.d_theta = _zip_add(grads.d_theta, _encoder_backward(cache, d_xc, params))

    if freeze_encoder:
        grads.d_theta = [np.zeros_like(t) for t in params.theta]

    if not np.isfinite(loss):
        raise NumericalError(f"{objective}: non-finite loss {loss!r}")
    for name, block in grads.blocks():
        if not np.all(np.isfinite(block)):
            raise NumericalError(f"{objective}: non-finite gradient in {name}")
    return loss, grads


# ---------------------------------------------------------------------------
# independent loss route used by the finite-difference check
# ---------------------------------------------------------------------------


def _objective_loss(objective: str, inputs: BatchInputs, params: ModelParams) -> float:
    """Same objectives composed from per-view model ops and the losses module."""
    if objective == "pretrain":
        zs = np.stack([pool(encode(v, params)[1]) for v in inputs.contrast_views])
        batch = L.SupConBatch(zs, np.asarray(inputs.contrast_labels), inputs.tau)
        if inputs.use_decoder:
            pairs = [
                (decode(encode(v, params)[1]), t)
                for v, t in zip(inputs.views, inputs.fc_targets)
            ]
            return L.pretrain_loss(pairs, batch, inputs.lam)
        return L.supcon_loss(batch)
    from .model import forward_full  # local to keep the module graph flat

    outs = [forward_full(v, params) for v in inputs.views]
    ys = [int(t) for t in inputs.labels]
    if objective == "baseline" and inputs.use_decoder:
        return L.baseline_loss(
            [o.sigma_hat for o in outs], list(inputs.fc_targets),
            [o.y_hat for o in outs], ys, inputs.lam,
        )
    return float(np.mean([L.ce_loss(o.y_hat, y) for o, y in zip(outs, ys)]))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    learning_rate: float
    m: Gradients
    v: Gradients
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON


def init_optimizer_state(params: ModelParams, learning_rate: float) -> OptimizerState:
    if learning_rate <= 0:
        raise ValidationError(f"learning rate must be positive, got {learning_rate}")
    return OptimizerState(learning_rate, Gradients.zeros_for(params), Gradients.zeros_for(params))


def _adam_block(p, g, m, v, state: OptimizerState, t: int):
    m_new = state.beta1 * m + (1.0 - state.beta1) * g
    v_new = state.beta2 * v + (1.0 - state.beta2) * g * g
    m_hat = m_new / (1.0 - state.beta1**t)
    v_hat = v_new / (1.0 - state.beta2**t)
    p_new = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return p_new, m_new, v_new


def optimizer_step(
    params: ModelParams, grads: Gradients, state: OptimizerState
) -> tuple[ModelParams, OptimizerState]:
    """One bias-corrected adaptive update; returns fresh params and state.

    Blocks whose gradient is identically zero are left bit-untouched, moments
    included, which keeps frozen and structurally inactive parameters exact.
    """
    t = state.step_count + 1
    new_params = params.copy()
    new_m = Gradients(
        [x.copy() for x in state.m.d_theta], state.m.d_clf_w.copy(), state.m.d_clf_b
    )
    new_v = Gradients(
        [x.copy() for x in state.v.d_theta], state.v.d_clf_w.copy(), state.v.d_clf_b
    )
    for i, g in enumerate(grads.d_theta):
        if np.any(g):
            new_params.theta[i], new_m.d_theta[i], new_v.d_theta[i] = _adam_block(
                params.theta[i], g, state.m.d_theta[i], state.v.d_theta[i], state, t
            )
    if np.any(grads.d_clf_w):
        new_params.clf_w, new_m.d_clf_w, new_v.d_clf_w = _adam_block(
            params.clf_w, grads.d_clf_w, state.m.d_clf_w, state.v.d_clf_w, state, t
        )
    if grads.d_clf_b != 0.0:
        b_new, mb, vb = _adam_block(
            np.float64(params.clf_b), np.float64(grads.d_clf_b),
            np.float64(state.m.d_clf_b), np.float64(state.v.d_clf_b), state, t,
        )
        new_params.clf_b, new_m.d_clf_b, new_v.d_clf_b = float(b_new), float(mb), float(vb)
    return new_params, OptimizerState(
        state.learning_rate, new_m, new_v, t, state.beta1, state.beta2, state.epsilon
    )


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


@dataclass
class FDReport:
    objective: str
    step: float
    threshold: float
    block_errors: dict[str, float]
    max_rel_error: float
    passed: bool


def _block_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(num / scale)


def finite_difference_check(
    objective: str,
    inputs: BatchInputs,
    params: ModelParams,
    step: float = 1e-6,
    threshold: float = 1e-5,
) -> FDReport:
    """Central differences of the composed loss against the fused analytic gradients."""
    _, grads = compute_gradients(objective, inputs, params)
    analytic = {name: np.atleast_1d(np.asarray(block, dtype=np.float64)).copy()
                for name, block in grads.blocks()}

    def loss_at(p: ModelParams) -> float:
        return _objective_loss(objective, inputs, p)

    block_errors: dict[str, float] = {}
    for name, a_block in analytic.items():
        numeric = np.zeros_like(a_block)
        flat = numeric.reshape(-1)
        for j in range(flat.size):
            for sign in (1.0, -1.0):
                probe = params.copy()
                if name.startswith("theta["):
                    idx = int(name[6:-1])
                    probe.theta[idx].reshape(-1)[j] += sign * step
                elif name == "clf_w":
                    probe.clf_w.reshape(-1)[j] += sign * step
                else:
                    probe.clf_b += sign * step
                if sign > 0:
                    f_plus = loss_at(probe)
                else:
                    f_minus = loss_at(probe)
            flat[j] = (f_plus - f_minus) / (2.0 * step)
        block_errors[name] = _block_rel_error(a_block.reshape(-1), flat)
    max_rel = max(block_errors.values())
    return FDReport(objective, step, threshold, block_errors, max_rel, max_rel < threshold)


def sample_fd_instance(
    objective: str,
    seed: int,
    n: int = 8,
    widths: tuple[int, ...] = (4, 3),
    batch: int = 3,
    margin: float = 1e-4,
    max_attempts: int = 200,
) -> tuple[BatchInputs, ModelParams]:
    """Seeded random instance whose pre-activations all clear the given margin.

    ReLU derivatives are discontinuous at zero, so instances are redrawn until
    every encoder pre-activation sits at least ``margin`` away from the kink;
    central differences are then trustworthy at step sizes well below it.
    """
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}")
    ds = generate_synthetic(max(batch, 2), n, 0.3, 0.05, seed)
    subjects = ds.subjects[:batch]
    cfg = ModelConfig(n, widths)
    aug = AugmentConfig(edge_drop_prob=0.2, mask_count_max=n // 2)
    lam = 0.25 if objective == "pretrain" else 0.4

    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        theta = [rng.normal(0.0, 0.6, size=shape) for shape in cfg.theta_shapes()]
        params = ModelParams(theta, rng.normal(0.0, 0.5, cfg.concat_dim), float(rng.normal()))
        views = [clean_view(s) for s in subjects]
        labels = np.array([s.label for s in subjects], dtype=np.int64)
        if objective == "pretrain":
            c_views, c_labels = make_contrastive_batch(subjects, aug, rng)
            inputs = BatchInputs(
                views=views,
                fc_targets=[s.fc for s in subjects],
                contrast_views=c_views,
                contrast_labels=c_labels,
                lam=lam,
                tau=1.0,
                use_decoder=True,
            )
            all_views = views + c_views
        else:
            inputs = BatchInputs(
                views=views,
                labels=labels,
                fc_targets=[s.fc for s in subjects],
                lam=lam,
                use_decoder=True,
            )
            all_views = views
        cache = forward_batch(all_views, params, with_decoder=False)
        min_gap = min(np.min(np.abs(s)) for s in cache.s)
        if min_gap > margin:
            return inputs, params
    raise NumericalError(
        f"could not draw a kink-free instance in {max_attempts} attempts (margin {margin:g})"
    )
