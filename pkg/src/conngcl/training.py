"""Training protocols: joint baseline, contrastive pre-training, two-phase fine-tuning.

All shuffling and augmentation randomness derives from substreams of
(seed, phase, epoch, batch), so runs are bit-reproducible and independent of
wall-clock or platform scheduling. Validation and test data never pass
through augmentation, and the last incomplete batch of each epoch is kept.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, clean_view, make_contrastive_batch, sample_baseline_augmentation
from .data import Dataset
from .errors import NumericalError, ValidationError
from .model import DEFAULT_LAYER_WIDTHS, ModelConfig, ModelParams, forward_batch
from .optim import (
    BatchInputs,
    compute_gradients,
    init_optimizer_state,
    init_params,
    optimizer_step,
)

# rng stream tags, combined as [seed, phase, epoch, 0] for shuffling and
# [seed, phase, epoch, 1 + batch] for augmentation
PHASE_BASELINE = 0
PHASE_PRETRAIN = 1
PHASE_FINETUNE = 2

# batch-size schedule for reduced-training-data runs:
# proportion -> (baseline, pretrain, finetune)
PROPORTION_BATCH_SIZES = {
    0.1: (8, 16, 4),
    0.3: (16, 32, 8),
    0.5: (32, 64, 16),
    0.7: (64, 128, 16),
    1.0: (64, 128, 16),
}


@dataclass
class PretrainConfig:
    epochs: int = 3000
    batch_size: int = 128
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"pretrain epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"pretrain batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValidationError(f"pretrain learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class FinetuneConfig:
    total_epochs: int = 200
    frozen_epochs: int = 100
    lr_frozen: float = 1e-3
    lr_full: float = 1e-4
    batch_size: int = 16

    def __post_init__(self):
        if not (0 <= self.frozen_epochs < self.total_epochs):
            raise ValidationError(
                f"need 0 <= frozen_epochs < total_epochs, got "
                f"{self.frozen_epochs} and {self.total_epochs}"
            )
        if self.batch_size < 1:
            raise ValidationError(f"finetune batch_size must be >= 1, got {self.batch_size}")
        if self.lr_frozen <= 0 or self.lr_full <= 0:
            raise ValidationError("finetune learning rates must be > 0")


@dataclass
class TrainConfig:
    mode: str = "contrastive"
    use_decoder: bool = True
    use_augmentation: bool = True
    lam: float | None = None  # resolved per mode: 0.4 baseline, 0.25 contrastive
    tau: float = 1.0
    seed: int = 0
    baseline_epochs: int = 300
    batch_size_baseline: int = 64
    baseline_learning_rate: float = 1e-3
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.mode not in ("baseline", "contrastive"):
            raise ValidationError(f"mode must be 'baseline' or 'contrastive', got {self.mode!r}")
        if self.lam is None:
            self.lam = 0.4 if self.mode == "baseline" else 0.25
        if self.lam < 0:
            raise ValidationError(f"lambda must be >= 0, got {self.lam}")
        if not (0.0 < self.tau <= 1.0):
            raise ValidationError(f"tau must be in (0, 1], got {self.tau}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative integer, got {self.seed!r}")
        self.seed = int(self.seed)
        if self.baseline_epochs < 0:
            raise ValidationError(f"baseline_epochs must be >= 0, got {self.baseline_epochs}")
        if self.batch_size_baseline < 1:
            raise ValidationError(f"batch_size_baseline must be >= 1, got {self.batch_size_baseline}")
        if self.baseline_learning_rate <= 0:
            raise ValidationError("baseline_learning_rate must be > 0")


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainReport:
    records: list[EpochRecord]
    best_val_accuracy: float | None
    best_epoch: int | None
    final_val_accuracy: float | None
    final_params_ref: str | None = None
    wall_time: float = 0.0


def batch_sizes_for_proportion(proportion: float) -> tuple[int, int, int]:
    """Schedule of (baseline, pretrain, finetune) batch sizes for a train proportion."""
    for key, sizes in PROPORTION_BATCH_SIZES.items():
        if abs(proportion - key) < 1e-9:
            return sizes
    raise ValidationError(
        f"no batch-size schedule for proportion {proportion}; "
        f"known proportions: {sorted(PROPORTION_BATCH_SIZES)}"
    )


def apply_proportion_schedule(cfg: TrainConfig, proportion: float) -> TrainConfig:
    b_base, b_pre, b_fine = batch_sizes_for_proportion(proportion)
    return replace(
        cfg,
        batch_size_baseline=b_base,
        pretrain=replace(cfg.pretrain, batch_size=b_pre),
        finetune=replace(cfg.finetune, batch_size=b_fine),
    )


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _batch_slices(count: int, batch_size: int) -> list[slice]:
    return [slice(lo, min(lo + batch_size, count)) for lo in range(0, count, batch_size)]


def _accuracy(params: ModelParams, views, labels: np.ndarray) -> float:
    cache = forward_batch(views, params, with_decoder=False)
    preds = (cache.y_hat >= 0.5).astype(np.int64)
    return float(np.mean(preds == labels))


def _wrap_numerical(phase: str, epoch: int, batch_idx: int | None, exc: NumericalError):
    where = f"{phase} epoch {epoch}" + ("" if batch_idx is None else f" batch {batch_idx}")
    return NumericalError(f"{where}: {exc}")


def _best_record(records: list[EpochRecord]) -> tuple[float | None, int | None]:
    best_acc, best_epoch = None, None
    for rec in records:
        if best_acc is None or rec.val_accuracy > best_acc:
            best_acc, best_epoch = rec.val_accuracy, rec.epoch
    return best_acc, best_epoch


def _resolve_model_config(ds: Dataset, model_config: ModelConfig | None) -> ModelConfig:
    if model_config is None:
        return ModelConfig(ds.n, DEFAULT_LAYER_WIDTHS)
    if model_config.n != ds.n:
        raise ValidationError(f"model expects {model_config.n} nodes, dataset has {ds.n}")
    return model_config


# ---------------------------------------------------------------------------
# baseline joint training
# ---------------------------------------------------------------------------


def train_baseline(
    train: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    model_config: ModelConfig | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Joint reconstruction plus classification training; returns the best-validation params."""
    t0 = time.perf_counter()
    mc = _resolve_model_config(train, model_config)
    params = init_params(mc, cfg.seed)
    opt = init_optimizer_state(params, cfg.baseline_learning_rate)

    train_views = [clean_view(s) for s in train.subjects]
    train_labels = train.labels()
    val_views = [clean_view(s) for s in val.subjects]
    val_labels = val.labels()
    val_inputs = BatchInputs(
        views=val_views,
        labels=val_labels,
        fc_targets=[s.fc for s in val.subjects],
        lam=cfg.lam,
        use_decoder=cfg.use_decoder,
    )

    best_params = params.copy()
    best_acc = -np.inf
    records: list[EpochRecord] = []
    for epoch in range(1, cfg.baseline_epochs + 1):
        order = np.random.default_rng(
            [cfg.seed, PHASE_BASELINE, epoch, 0]
        ).permutation(len(train))
        batch_losses = []
        for b_idx, sl in enumerate(_batch_slices(len(train), cfg.batch_size_baseline)):
            idx = order[sl]
            subjects = [train.subjects[i] for i in idx]
            if cfg.use_augmentation:
                rng_b = np.random.default_rng([cfg.seed, PHASE_BASELINE, epoch, 1 + b_idx])
                views, labels = sample_baseline_augmentation(subjects, cfg.augment, rng_b)
            else:
                views = [train_views[i] for i in idx]
                labels = train_labels[idx]
            inputs = BatchInputs(
                views=views,
                labels=labels,
                fc_targets=[s.fc for s in subjects],
                lam=cfg.lam,
                use_decoder=cfg.use_decoder,
            )
            try:
                loss, grads = compute_gradients("baseline", inputs, params)
            except NumericalError as exc:
                raise _wrap_numerical("baseline", epoch, b_idx, exc) from exc
            params, opt = optimizer_step(params, grads, opt)
            batch_losses.append(loss)
        try:
            val_loss, _ = compute_gradients("baseline", val_inputs, params)
        except NumericalError as exc:
            raise _wrap_numerical("baseline", epoch, None, exc) from exc
        val_acc = _accuracy(params, val_views, val_labels)
        records.append(
            EpochRecord("baseline", epoch, float(np.mean(batch_losses)), val_loss, val_acc)
        )
        if val_acc > best_acc:
            best_params, best_acc = params.copy(), val_acc
    best_acc_rec, best_epoch = _best_record(records)
    return best_params, TrainReport(
        records,
        best_acc_rec,
        best_epoch,
        records[-1].val_accuracy if records else None,
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# contrastive pre-training
# ---------------------------------------------------------------------------


def _duplicate_views(views, labels: np.ndarray):
    doubled = []
    for v in views:
        doubled.extend([v, v])
    return doubled, np.repeat(labels, 2)


def pretrain_contrastive(
    train: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    model_config: ModelConfig | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Encoder-only contrastive pre-training; classifier parameters stay untouched.

    Returns the final-epoch parameters: the classifier never moves here, so
    validation accuracy carries no selection signal.
    """
    t0 = time.perf_counter()
    mc = _resolve_model_config(train, model_config)
    params = init_params(mc, cfg.seed)
    opt = init_optimizer_state(params, cfg.pretrain.learning_rate)

    train_views = [clean_view(s) for s in train.subjects]
    train_labels = train.labels()
    val_views = [clean_view(s) for s in val.subjects]
    val_labels = val.labels()
    val_dup_views, val_dup_labels = _duplicate_views(val_views, val_labels)
    val_inputs = BatchInputs(
        views=val_views if cfg.use_decoder else None,
        fc_targets=[s.fc for s in val.subjects] if cfg.use_decoder else None,
        contrast_views=val_dup_views,
        contrast_labels=val_dup_labels,
        lam=cfg.lam,
        tau=cfg.tau,
        use_decoder=cfg.use_decoder,
    )

    records: list[EpochRecord] = []
    for epoch in range(1, cfg.pretrain.epochs + 1):
        order = np.random.default_rng(
            [cfg.seed, PHASE_PRETRAIN, epoch, 0]
        ).permutation(len(train))
        batch_losses = []
        for b_idx, sl in enumerate(_batch_slices(len(train), cfg.pretrain.batch_size)):
            idx = order[sl]
            subjects = [train.subjects[i] for i in idx]
            if cfg.use_augmentation:
                rng_b = np.random.default_rng([cfg.seed, PHASE_PRETRAIN, epoch, 1 + b_idx])
                c_views, c_labels = make_contrastive_batch(subjects, cfg.augment, rng_b)
            else:
                c_views, c_labels = _duplicate_views(
                    [train_views[i] for i in idx], train_labels[idx]
                )
            inputs = BatchInputs(
                views=[train_views[i] for i in idx] if cfg.use_decoder else None,
                fc_targets=[s.fc for s in subjects] if cfg.use_decoder else None,
                contrast_views=c_views,
                contrast_labels=c_labels,
                lam=cfg.lam,
                tau=cfg.tau,
                use_decoder=cfg.use_decoder,
            )
            try:
                loss, grads = compute_gradients("pretrain", inputs, params)
            except NumericalError as exc:
                raise _wrap_numerical("pretrain", epoch, b_idx, exc) from exc
            params, opt = optimizer_step(params, grads, opt)
            batch_losses.append(loss)
        try:
            val_loss, _ = compute_gradients("pretrain", val_inputs, params)
        except NumericalError as exc:
            raise _wrap_numerical("pretrain", epoch, None, exc) from exc
        val_acc = _accuracy(params, val_views, val_labels)
        records.append(
            EpochRecord("pretrain", epoch, float(np.mean(batch_losses)), val_loss, val_acc)
        )
    best_acc, best_epoch = _best_record(records)
    return params, TrainReport(
        records,
        best_acc,
        best_epoch,
        records[-1].val_accuracy if records else None,
        wall_time=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


def finetune(
    pretrained: ModelParams,
    train: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    model_config: ModelConfig | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Classifier-only epochs with a frozen encoder, then full-model epochs.

    Cross-entropy is the objective throughout; no augmentation. The
    best-validation-accuracy checkpoint across both phases is returned, ties
    resolved toward the earliest epoch. Each phase starts a fresh optimizer.
    """
    t0 = time.perf_counter()
    mc = _resolve_model_config(train, model_config)
    params = pretrained.copy()
    params.validate_against(mc)

    train_views = [clean_view(s) for s in train.subjects]
    train_labels = train.labels()
    val_views = [clean_view(s) for s in val.subjects]
    val_labels = val.labels()
    val_inputs = BatchInputs(views=val_views, labels=val_labels, use_decoder=False)

    best_params = params.copy()
    best_acc = -np.inf
    records: list[EpochRecord] = []

    def run_phase(phase_name: str, epochs: range, lr: float, frozen: bool, params: ModelParams):
        nonlocal best_params, best_acc
        opt = init_optimizer_state(params, lr)
        for epoch in epochs:
            order = np.random.default_rng(
                [cfg.seed, PHASE_FINETUNE, epoch, 0]
            ).permutation(len(train))
            batch_losses = []
            for b_idx, sl in enumerate(_batch_slices(len(train), cfg.finetune.batch_size)):
                idx = order[sl]
                inputs = BatchInputs(
                    views=[train_views[i] for i in idx],
                    labels=train_labels[idx],
                    use_decoder=False,
                )
                try:
                    loss, grads = compute_gradients(
                        "finetune-ce", inputs, params, freeze_encoder=frozen
                    )
                except NumericalError as exc:
                    raise _wrap_numerical(phase_name, epoch, b_idx, exc) from exc
                params, opt = optimizer_step(params, grads, opt)
                batch_losses.append(loss)
            try:
                val_loss, _ = compute_gradients("finetune-ce", val_inputs, params)
            except NumericalError as exc:
                raise _wrap_numerical(phase_name, epoch, None, exc) from exc
            val_acc = _accuracy(params, val_views, val_labels)
            records.append(
                EpochRecord(phase_name, epoch, float(np.mean(batch_losses)), val_loss, val_acc)
            )
            if val_acc > best_acc:
                best_params, best_acc = params.copy(), val_acc
        return params

    m = cfg.finetune.frozen_epochs
    k = cfg.finetune.total_epochs
    params = run_phase("finetune_frozen", range(1, m + 1), cfg.finetune.lr_frozen, True, params)
    params = run_phase("finetune_full", range(m + 1, k + 1), cfg.finetune.lr_full, False, params)

    best_acc_rec, best_epoch = _best_record(records)
    return best_params, TrainReport(
        records,
        best_acc_rec,
        best_epoch,
        records[-1].val_accuracy if records else None,
        wall_time=time.perf_counter() - t0,
    )


def run_contrastive(
    train: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    model_config: ModelConfig | None = None,
) -> tuple[ModelParams, ModelParams, TrainReport, TrainReport]:
    """Pre-train then fine-tune; returns (final params, pretrained params, and both reports)."""
    pretrained, pre_report = pretrain_contrastive(train, val, cfg, model_config)
    final, fine_report = finetune(pretrained, train, val, cfg, model_config)
    return final, pretrained, pre_report, fine_report
