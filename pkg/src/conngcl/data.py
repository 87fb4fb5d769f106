"""Connectivity dataset types, normalization, I/O, splitting, and a synthetic generator.

A subject is a pair of square matrices over the same node set: a structural
matrix (nonnegative weights, zero diagonal) and a functional matrix (entries
in [0, 1], unit diagonal), plus a binary label. Matrices are stored as
headerless CSV and indexed by a JSON manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError

# Absolute tolerance absorbing decimal-text round trips in symmetry and
# diagonal checks.
SYMMETRY_TOL = 1e-8
# Functional matrices may stray this far outside [0, 1] before rejection;
# anything inside the band is clamped.
FC_RANGE_SLACK = 1e-9

CSV_FLOAT_FMT = "%.17g"


def _check_square(mat: np.ndarray, name: str) -> None:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {mat.shape}")


def _check_symmetric(mat: np.ndarray, name: str, tol: float = SYMMETRY_TOL) -> None:
    dev = np.max(np.abs(mat - mat.T)) if mat.size else 0.0
    if dev > tol:
        raise ValidationError(f"{name} not symmetric (max deviation {dev:.3e} > {tol:g})")


@dataclass
class Connectome:
    """One subject: structural matrix, functional matrix, binary label."""

    subject_id: str
    sc: np.ndarray
    fc: np.ndarray
    label: int

    def __post_init__(self):
        self.sc = np.asarray(self.sc, dtype=np.float64)
        self.fc = np.asarray(self.fc, dtype=np.float64)
        _check_square(self.sc, "sc")
        _check_square(self.fc, "fc")
        if self.sc.shape != self.fc.shape:
            raise ValidationError(
                f"sc and fc disagree on node count: {self.sc.shape} vs {self.fc.shape}"
            )
        if not np.all(np.isfinite(self.sc)) or not np.all(np.isfinite(self.fc)):
            raise ValidationError(f"subject {self.subject_id}: non-finite matrix entries")
        _check_symmetric(self.sc, f"subject {self.subject_id}: sc")
        _check_symmetric(self.fc, f"subject {self.subject_id}: fc")
        if np.min(self.sc) < 0:
            raise ValidationError(f"subject {self.subject_id}: sc has negative entries")
        if np.max(np.abs(np.diag(self.sc))) > SYMMETRY_TOL:
            raise ValidationError(f"subject {self.subject_id}: sc diagonal not zero")
        if np.min(self.fc) < -FC_RANGE_SLACK or np.max(self.fc) > 1.0 + FC_RANGE_SLACK:
            raise ValidationError(f"subject {self.subject_id}: fc entries outside [0, 1]")
        if np.max(np.abs(np.diag(self.fc) - 1.0)) > SYMMETRY_TOL:
            raise ValidationError(f"subject {self.subject_id}: fc diagonal not one")
        if self.label not in (0, 1):
            raise ValidationError(f"subject {self.subject_id}: label must be 0 or 1")
        self.label = int(self.label)

    @property
    def n(self) -> int:
        return self.sc.shape[0]


@dataclass
class Dataset:
    """Ordered collection of subjects over a common node set."""

    subjects: list[Connectome]

    def __post_init__(self):
        if not self.subjects:
            raise ValidationError("dataset must contain at least one subject")
        n = self.subjects[0].n
        for s in self.subjects:
            if s.n != n:
                raise ValidationError(
                    f"subject {s.subject_id} has {s.n} nodes, expected {n}"
                )
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate subject ids in dataset")

    @property
    def n(self) -> int:
        return self.subjects[0].n

    def __len__(self) -> int:
        return len(self.subjects)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)


@dataclass
class SplitSpec:
    """Fractions and seed for a shuffled train/val/test split.

    ``train_proportion`` subsamples the training portion only; validation and
    test sets are unaffected by it.
    """

    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0
    train_proportion: float = 1.0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise ValidationError(f"split fractions must be nonnegative and sum to 1, got {fracs}")
        if not (0.0 < self.train_proportion <= 1.0):
            raise ValidationError(
                f"train_proportion must be in (0, 1], got {self.train_proportion}"
            )
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ValidationError(f"seed must be a nonnegative integer, got {self.seed!r}")
        self.seed = int(self.seed)


def normalize_adjacency(sc: np.ndarray) -> np.ndarray:
    """Symmetric renormalization with self-loops: D^{-1/2} (A + I) D^{-1/2}.

    D is the diagonal of row sums of A + I, so every row sum is positive and
    the result is symmetric with entries in [0, 1] and spectral radius <= 1.
    """
    sc = np.asarray(sc, dtype=np.float64)
    _check_square(sc, "adjacency")
    _check_symmetric(sc, "adjacency")
    if sc.size and np.min(sc) < 0:
        raise ValidationError("adjacency has negative entries")
    a_tilde = sc + np.eye(sc.shape[0])
    d = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a_tilde * np.outer(inv_sqrt, inv_sqrt)


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------


def _write_matrix(path: Path, mat: np.ndarray) -> None:
    lines = [",".join(CSV_FLOAT_FMT % v for v in row) for row in mat]
    path.write_text("\n".join(lines) + "\n", newline="\n")


def _read_matrix(path: Path) -> np.ndarray:
    try:
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([float(tok) for tok in line.split(",")])
    except OSError as exc:
        raise DataError(f"cannot read matrix file {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed matrix file {path}: {exc}") from exc
    if not rows or any(len(r) != len(rows) for r in rows):
        raise DataError(f"matrix file {path} is not square")
    return np.array(rows, dtype=np.float64)


def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    """Write one CSV pair per subject plus a manifest.json; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for subj in ds.subjects:
        sc_name = f"{subj.subject_id}_sc.csv"
        fc_name = f"{subj.subject_id}_fc.csv"
        _write_matrix(out / sc_name, subj.sc)
        _write_matrix(out / fc_name, subj.fc)
        entries.append(
            {"id": subj.subject_id, "label": subj.label, "sc_file": sc_name, "fc_file": fc_name}
        )
    manifest = {"n": ds.n, "subjects": entries}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", newline="\n")
    return manifest_path


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset from a manifest.json path (or the directory holding one)."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "n" not in manifest or "subjects" not in manifest:
        raise DataError(f"manifest {path} missing required keys 'n' and 'subjects'")
    n = manifest["n"]
    base = path.parent
    subjects = []
    for entry in manifest["subjects"]:
        for key in ("id", "label", "sc_file", "fc_file"):
            if key not in entry:
                raise DataError(f"manifest entry missing key {key!r}: {entry}")
        label = entry["label"]
        if label not in (0, 1):
            raise DataError(f"subject {entry['id']}: label must be 0 or 1, got {label!r}")
        sc = _read_matrix(base / entry["sc_file"])
        fc = _read_matrix(base / entry["fc_file"])
        if sc.shape != (n, n) or fc.shape != (n, n):
            raise DataError(
                f"subject {entry['id']}: expected {n}x{n} matrices, "
                f"got sc {sc.shape} and fc {fc.shape}"
            )
        if np.min(fc) < -FC_RANGE_SLACK or np.max(fc) > 1.0 + FC_RANGE_SLACK:
            raise DataError(f"subject {entry['id']}: fc entries outside [0, 1]")
        # In-band excursions are clamped; in-range values pass through bit-exactly.
        fc = np.clip(fc, 0.0, 1.0)
        try:
            subjects.append(Connectome(entry["id"], sc, fc, label))
        except ValidationError as exc:
            raise DataError(str(exc)) from exc
    try:
        return Dataset(subjects)
    except ValidationError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle, then size-rounded partition with the remainder to train.

    Validation and test sizes are round(frac * |ds|); train takes the rest and
    is then subsampled to ceil(train_proportion * train size). Changing only
    train_proportion leaves validation and test sets identical.
    """
    total = len(ds)
    n_val = round(spec.val_frac * total)
    n_test = round(spec.test_frac * total)
    n_train = total - n_val - n_test
    if n_train <= 0 or n_val <= 0 or n_test <= 0:
        raise ValidationError(
            f"split of {total} subjects yields empty portion "
            f"(train {n_train}, val {n_val}, test {n_test})"
        )
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(total)
    train_idx = order[:n_train]
    val_idx = order[n_train : n_train + n_val]
    test_idx = order[n_train + n_val :]
    n_keep = math.ceil(spec.train_proportion * n_train)
    train_idx = train_idx[:n_keep]
    pick = lambda idx: Dataset([ds.subjects[i] for i in idx])
    return pick(train_idx), pick(val_idx), pick(test_idx)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def generate_synthetic(
    n_subjects: int,
    n: int,
    class_gap: float,
    noise_sigma: float,
    seed: int,
) -> Dataset:
    """Two-block weighted stochastic-block-model subjects with derived functional matrices.

    Nodes split into two equal blocks. Intra-block edges appear with
    probability 0.6; inter-block edges with probability 0.1 + class_gap * label,
    so the label shifts inter-block density only. Edge weights are uniform on
    (0, 1]. The functional matrix is the normalized two-step propagation of the
    structural one (scaled to max 1) plus symmetric Gaussian noise, clamped to
    [0, 1] with unit diagonal. Each subject draws from its own substream of
    (seed, index), so generation is deterministic and order-independent.
    """
    if n_subjects < 2:
        raise ValidationError(f"need at least 2 subjects to form a dataset, got {n_subjects}")
    if n < 4 or n % 2 != 0:
        raise ValidationError(f"node count must be even and >= 4, got {n}")
    if not (0.0 <= class_gap <= 1.0):
        raise ValidationError(f"class_gap must be in [0, 1], got {class_gap}")
    if noise_sigma < 0:
        raise ValidationError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    if seed < 0:
        raise ValidationError(f"seed must be nonnegative, got {seed}")

    half = n // 2
    block = np.zeros((n, n), dtype=bool)
    block[:half, :half] = True
    block[half:, half:] = True
    iu = np.triu_indices(n, k=1)
    intra_upper = block[iu]

    subjects = []
    for i in range(n_subjects):
        label = i % 2
        rng = np.random.default_rng([seed, i])
        p_edge = np.where(intra_upper, 0.6, 0.1 + class_gap * label)
        present = rng.random(iu[0].size) < p_edge
        weights = 1.0 - rng.random(iu[0].size)  # uniform on (0, 1]
        sc = np.zeros((n, n))
        sc[iu] = np.where(present, weights, 0.0)
        sc = sc + sc.T

        two_step = normalize_adjacency(sc)
        two_step = two_step @ two_step
        fc = two_step / np.max(two_step)
        if noise_sigma > 0:
            # mirror strictly-upper draws so marginals stay N(0, sigma)
            noise = np.zeros((n, n))
            noise[iu] = rng.normal(0.0, noise_sigma, size=iu[0].size)
            fc = fc + noise + noise.T
        fc = np.clip(fc, 0.0, 1.0)
        np.fill_diagonal(fc, 1.0)
        subjects.append(Connectome(f"s{i:05d}", sc, fc, label))
    return Dataset(subjects)
