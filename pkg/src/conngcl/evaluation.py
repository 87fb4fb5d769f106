"""Model evaluation, embedding projection, CSV export, and the proportion sweep.

Predictions threshold the sigmoid output at 0.5 with ties going to class 1.
The principal-component projection diagonalizes the embedding covariance with
cyclic Jacobi rotations, so no external solver is involved.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import clean_view
from .data import CSV_FLOAT_FMT, Dataset, SplitSpec, split_dataset
from .errors import ValidationError
from .model import ModelConfig, ModelParams, forward_batch

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


@dataclass
class EvalResult:
    accuracy: float
    n_correct: int
    n_total: int
    per_subject: list[dict]


def predict(y_hat: np.ndarray) -> np.ndarray:
    return (np.asarray(y_hat) >= 0.5).astype(np.int64)


def evaluate(params: ModelParams, ds: Dataset) -> EvalResult:
    """Accuracy of thresholded predictions over clean views of a dataset."""
    views = [clean_view(s) for s in ds.subjects]
    cache = forward_batch(views, params, with_decoder=False)
    labels = ds.labels()
    preds = predict(cache.y_hat)
    correct = int(np.sum(preds == labels))
    per_subject = [
        {"id": s.subject_id, "label": int(y), "y_hat": float(p), "pred": int(q)}
        for s, y, p, q in zip(ds.subjects, labels, cache.y_hat, preds)
    ]
    return EvalResult(correct / len(ds), correct, len(ds), per_subject)


def subject_embeddings(params: ModelParams, ds: Dataset) -> np.ndarray:
    views = [clean_view(s) for s in ds.subjects]
    return forward_batch(views, params, with_decoder=False).z


# ---------------------------------------------------------------------------
# principal components via cyclic Jacobi
# ---------------------------------------------------------------------------


def _jacobi_eigh(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi sweeps.

    Each rotation annihilates one off-diagonal pair; sweeps repeat until the
    off-diagonal norm falls under the tolerance. Eigenvectors accumulate as
    columns of the rotation product.
    """
    a = a.copy()
    d = a.shape[0]
    vecs = np.eye(d)
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.sqrt(2.0 * np.sum(np.tril(a, -1) ** 2))
        if off <= JACOBI_TOL:
            break
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= JACOBI_TOL / (d * d):
                    continue
                rotated = True
                if a[q, q] == a[p, p]:
                    t = 1.0
                else:
                    theta = 0.5 * (a[q, q] - a[p, p]) / apq
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # plane rotation: block [[c, s], [-s, c]] at rows/cols (p, q),
                # applied as a <- R.T a R so that the (p, q) entry vanishes
                rot = np.array([[c, s], [-s, c]])
                a[[p, q], :] = rot.T @ a[[p, q], :]
                a[:, [p, q]] = a[:, [p, q]] @ rot
                vecs[:, [p, q]] = vecs[:, [p, q]] @ rot
        if not rotated:
            break
    return np.diag(a).copy(), vecs


def pca_project(embeddings: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k principal projection of row vectors plus per-component variances.

    Components are sorted by non-increasing variance; each eigenvector's
    largest-magnitude loading is made positive so signs are reproducible.
    Requesting more components than the covariance rank yields trailing
    zero-variance components and a warning.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValidationError(f"need a 2-D array with at least 2 rows, got shape {z.shape}")
    if not (1 <= k <= z.shape[1]):
        raise ValidationError(f"k must be in [1, {z.shape[1]}], got {k}")
    centered = z - z.mean(axis=0)
    cov = (centered.T @ centered) / z.shape[0]
    vals, vecs = _jacobi_eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.maximum(vals[order], 0.0)  # clip eigenvalue noise of the PSD matrix
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        lead = np.argmax(np.abs(vecs[:, j]))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    rank_tol = max(vals[0], 1.0) * 1e-12
    if np.sum(vals > rank_tol) < k:
        warnings.warn(f"requested {k} components but covariance rank is lower", stacklevel=2)
    return centered @ vecs[:, :k], vals[:k]


def export_embeddings(params: ModelParams, ds: Dataset, path: str | Path) -> Path:
    """CSV of per-subject embeddings with their first two principal coordinates.

    Rows are sorted by subject id; the header is
    ``subject_id,label,pc1,pc2,z_0,...``.
    """
    order = np.argsort([s.subject_id for s in ds.subjects])
    sorted_ds = Dataset([ds.subjects[i] for i in order])
    z = subject_embeddings(params, sorted_ds)
    proj, _ = pca_project(z, 2)
    dim = z.shape[1]
    header = "subject_id,label,pc1,pc2," + ",".join(f"z_{j}" for j in range(dim))
    lines = [header]
    for subj, p, row in zip(sorted_ds.subjects, proj, z):
        nums = ",".join(CSV_FLOAT_FMT % v for v in (p[0], p[1], *row))
        lines.append(f"{subj.subject_id},{subj.label},{nums}")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", newline="\n")
    return out


# ---------------------------------------------------------------------------
# proportion sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list[dict]


def _config_identity(cfg) -> tuple[str, str, str]:
    framework = cfg.mode
    architecture = "encoder-decoder" if cfg.use_decoder else "encoder"
    augmentation = "on" if cfg.use_augmentation else "off"
    return framework, architecture, augmentation


def _run_sweep_point(args):
    ds, cfg, proportion, seed, split_spec, model_config = args
    from . import training  # deferred to avoid a module cycle

    from dataclasses import replace

    run_cfg = training.apply_proportion_schedule(replace(cfg, seed=seed), proportion)
    spec = replace(split_spec, train_proportion=proportion)
    train, val, test = split_dataset(ds, spec)
    if run_cfg.mode == "baseline":
        params, _ = training.train_baseline(train, val, run_cfg, model_config)
    else:
        params, _, _, _ = training.run_contrastive(train, val, run_cfg, model_config)
    return evaluate(params, test).accuracy


def proportion_sweep(
    ds: Dataset,
    grid: list[float],
    configs: list,
    seeds: list[int],
    split_spec: SplitSpec | None = None,
    model_config: ModelConfig | None = None,
    out_path: str | Path | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Test accuracy for every (config, proportion, seed) against a fixed test split.

    The split seed never varies, so validation and test sets are shared by all
    runs; only the training portion is subsampled. A failing run records an
    error row and the sweep continues. Rows are sorted deterministically.
    """
    if not grid or not configs or not seeds:
        raise ValidationError("sweep needs non-empty grid, configs, and seeds")
    base_spec = split_spec or SplitSpec()
    tasks = []
    for cfg in configs:
        for proportion in grid:
            for seed in seeds:
                tasks.append((ds, cfg, proportion, seed, base_spec, model_config))

    accuracies: list[float | None] = [None] * len(tasks)
    errors: list[str | None] = [None] * len(tasks)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_sweep_point, t): i for i, t in enumerate(tasks)}
            for fut, i in futures.items():
                try:
                    accuracies[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - error rows keep the sweep alive
                    errors[i] = f"{type(exc).__name__}: {exc}"
    else:
        for i, task in enumerate(tasks):
            try:
                accuracies[i] = _run_sweep_point(task)
            except Exception as exc:  # noqa: BLE001
                errors[i] = f"{type(exc).__name__}: {exc}"

    rows = []
    for (ds_, cfg, proportion, seed, _, _), acc, err in zip(tasks, accuracies, errors):
        framework, architecture, augmentation = _config_identity(cfg)
        rows.append(
            {
                "framework": framework,
                "architecture": architecture,
                "augmentation": augmentation,
                "proportion": proportion,
                "seed": seed,
                "accuracy": acc,
                "status": "ok" if err is None else f"error: {err}",
            }
        )
    rows.sort(
        key=lambda r: (r["framework"], r["architecture"], r["augmentation"], r["proportion"], r["seed"])
    )
    result = SweepResult(rows)
    if out_path is not None:
        write_sweep_csv(result, out_path)
    return result


def write_sweep_csv(result: SweepResult, path: str | Path) -> Path:
    lines = ["framework,architecture,augmentation,proportion,seed,accuracy,status"]
    for r in result.rows:
        acc = "" if r["accuracy"] is None else CSV_FLOAT_FMT % r["accuracy"]
        status = r["status"].replace(",", ";")
        lines.append(
            f"{r['framework']},{r['architecture']},{r['augmentation']},"
            f"{r['proportion']:g},{r['seed']},{acc},{status}"
        )
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", newline="\n")
    return out
