"""Synthetic data with planted contamination, CSV ingestion, detection scoring.

All generators are pure functions of their seed. Counts of planted outliers
use floor(frac * n). The over-estimation protocol used by the experiment
configs keeps h = n * (1 - (true_frac + 0.10)) examples, i.e. the outlier
share is over-estimated by ten percentage points.
"""

from __future__ import annotations

import csv
import math

import numpy as np

from .problems import TRIM_TOL, TrimmedLS


class CsvFormatError(ValueError):
    """Malformed CSV input; the message cites the offending line number."""


# ---------------------------------------------------------------------------
# Generators.
# ---------------------------------------------------------------------------


def overestimated_keep_count(n: int, true_frac: float) -> int:
    """h = n(1 - (true_frac + 0.10)): over-estimate the outlier share by 10 points."""
    return int(round(n * (1.0 - (true_frac + 0.10))))


def gen_trimmed_ls(
    n: int,
    p: int,
    outlier_frac: float,
    noise_sd: float,
    seed: int,
    h: int | None = None,
):
    """Planted regression instance: returns (TrimmedLS, outlier mask, true coefficients).

    Inliers follow b_i = <a_i, x_true> + N(0, noise_sd); outliers have the
    response shifted by +-10 ||x_true||. When h is not given it follows the
    over-estimation protocol.
    """
    if not 0.0 <= outlier_frac < 0.5:
        raise ValueError(f"outlier_frac must lie in [0, 0.5), got {outlier_frac}")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, p))
    x_true = rng.standard_normal(p)
    targets = features @ x_true + noise_sd * rng.standard_normal(n)
    mask = np.zeros(n, dtype=bool)
    n_out = int(outlier_frac * n)
    if n_out > 0:
        idx = rng.choice(n, size=n_out, replace=False)
        signs = rng.choice([-1.0, 1.0], size=n_out)
        targets[idx] += signs * 10.0 * np.linalg.norm(x_true)
        mask[idx] = True
    if h is None:
        h = overestimated_keep_count(n, outlier_frac)
    return TrimmedLS(features, targets, h=h), mask, x_true


def gen_softmax_classification(n: int, p: int, num_classes: int, seed: int, scale: float = 4.0):
    """Multiclass data drawn from a planted soft-max model.

    Features are unit-normalized rows (so every per-example curvature bound
    is 1); labels are sampled from the categorical distribution with logits
    of standard deviation ``scale``, so most examples are confidently
    classified and the planted matrix is the Bayes classifier. Returns
    (features, labels, planted matrix).
    """
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, p))
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    x_true = rng.standard_normal((p, num_classes)) * scale
    logits = features @ x_true
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    draws = rng.random(n)
    labels = (probs.cumsum(axis=1) < draws[:, None]).sum(axis=1)
    return features, labels, x_true


def contaminate_labels(labels: np.ndarray, frac: float, num_classes: int, seed: int):
    """Shift a uniformly chosen floor(frac*n) subset of labels by 1 mod num_classes."""
    if not 0.0 <= frac <= 1.0:
        raise ValueError(f"frac must lie in [0, 1], got {frac}")
    labels = np.asarray(labels, dtype=int).copy()
    n = labels.size
    mask = np.zeros(n, dtype=bool)
    count = int(frac * n)
    if count > 0:
        rng = np.random.default_rng(seed)
        idx = rng.choice(n, size=count, replace=False)
        labels[idx] = (labels[idx] + 1) % num_classes
        mask[idx] = True
    return labels, mask


def gen_pca_columns(
    m: int,
    n: int,
    rank: int,
    outlier_frac: float,
    seed: int,
    magnitude: float = 10.0,
    noise_sd: float = 0.05,
):
    """Rank-``rank`` column data with planted large-magnitude outlier columns.

    Inlier columns lie near a random rank-``rank`` subspace; each outlier
    column points in a random direction with ``magnitude`` times the median
    inlier norm. Returns (m x n matrix, outlier mask).
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((m, rank)))
    coeffs = rng.standard_normal((rank, n))
    cols = basis @ coeffs + noise_sd * rng.standard_normal((m, n))
    mask = np.zeros(n, dtype=bool)
    n_out = int(outlier_frac * n)
    if n_out > 0:
        idx = rng.choice(n, size=n_out, replace=False)
        typical = np.median(np.linalg.norm(cols, axis=0))
        direction = rng.standard_normal((m, n_out))
        direction /= np.linalg.norm(direction, axis=0)
        cols[:, idx] = magnitude * typical * direction
        mask[idx] = True
    return cols, mask


def gen_homography_scene(n: int, outlier_frac: float, seed: int, box: float = 10.0):
    """Synthetic correspondence scene with spurious matches.

    Inliers are exact projective transfers of points in [0, box]^2 under a
    mild random perspective map; spurious correspondences pair independent
    random points. Returns (b1, b2, unit-norm true map, outlier mask).
    """
    rng = np.random.default_rng(seed)
    h_true = np.eye(3)
    h_true[:2, :2] += rng.uniform(-0.2, 0.2, size=(2, 2))
    h_true[:2, 2] = rng.uniform(-1.0, 1.0, size=2)
    h_true[2, :2] = rng.uniform(-0.005, 0.005, size=2)
    pts = rng.uniform(0.0, box, size=(n, 2))
    b1 = np.column_stack([pts, np.ones(n)])
    mapped = b1 @ h_true.T
    b2 = mapped / mapped[:, 2:3]
    mask = np.zeros(n, dtype=bool)
    n_out = int(outlier_frac * n)
    if n_out > 0:
        idx = rng.choice(n, size=n_out, replace=False)
        b1[idx, :2] = rng.uniform(0.0, box, size=(n_out, 2))
        b2[idx, :2] = rng.uniform(0.0, box, size=(n_out, 2))
        b2[idx, 2] = 1.0
        mask[idx] = True
    h_unit = h_true / np.linalg.norm(h_true)
    top = np.argmax(np.abs(h_unit))
    if h_unit.flat[top] < 0:
        h_unit = -h_unit
    return b1, b2, h_unit, mask


# ---------------------------------------------------------------------------
# Detection scoring.
# ---------------------------------------------------------------------------


def _score_prediction(predicted: np.ndarray, truth_mask: np.ndarray):
    truth_mask = np.asarray(truth_mask, dtype=bool)
    n_truth = int(truth_mask.sum())
    n_pred = int(predicted.sum())
    detection = None if n_truth == 0 else float((predicted & truth_mask).sum() / n_truth)
    false_positive = None if n_pred == 0 else float((predicted & ~truth_mask).sum() / n_pred)
    return detection, false_positive


def score_detection(w: np.ndarray, truth_mask: np.ndarray, h: float):
    """Detection / false-positive rates of the zero-set of the weight vector.

    Predicted outliers are the examples with w_i <= the trimming tolerance.
    An empty truth set leaves the detection rate undefined (None), an empty
    prediction leaves the false-positive rate undefined.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != np.asarray(truth_mask).shape:
        raise ValueError("w and truth_mask must have the same length")
    return _score_prediction(w <= TRIM_TOL, truth_mask)


def score_loss_ranking(problem, state, truth_mask: np.ndarray, n_minus_h: int):
    """Baseline detection: flag the n-h examples with the largest losses.

    Ties are broken toward the lower index. Scored exactly like
    score_detection.
    """
    losses = problem.all_losses(state.x)
    order = np.argsort(-losses, kind="stable")
    predicted = np.zeros(problem.n, dtype=bool)
    predicted[order[:n_minus_h]] = True
    return _score_prediction(predicted, truth_mask)


# ---------------------------------------------------------------------------
# CSV ingestion / emission.  Cells are '.'-decimal floats, ',' delimited,
# with an optional header row auto-detected by a non-numeric first row.
# ---------------------------------------------------------------------------


def _parse_rows(path):
    with open(path, newline="") as fh:
        raw = [(ln, row) for ln, row in enumerate(csv.reader(fh), start=1) if row]
    if not raw:
        raise CsvFormatError(f"{path}: empty file")

    def numeric(row):
        try:
            [float(cell) for cell in row]
            return True
        except ValueError:
            return False

    start = 0 if numeric(raw[0][1]) else 1
    if start == 1 and len(raw) == 1:
        raise CsvFormatError(f"{path}: header-only file")
    width = len(raw[start][1])
    values = []
    for ln, row in raw[start:]:
        if len(row) != width:
            raise CsvFormatError(
                f"{path}: line {ln}: expected {width} cells, got {len(row)}"
            )
        try:
            values.append([float(cell) for cell in row])
        except ValueError as exc:
            raise CsvFormatError(f"{path}: line {ln}: non-numeric cell ({exc})") from None
        if not all(math.isfinite(v) for v in values[-1]):
            raise CsvFormatError(f"{path}: line {ln}: non-finite cell")
    return np.array(values), [ln for ln, _ in raw[start:]]


def load_csv(path, format: str, standardize_rows: bool = False):
    """Load problem inputs from CSV.

    format "regression": columns a_1..a_p, b -> (features, targets).
    format "classification": columns v_1..v_p, label -> (features, labels, K).
    format "matrix": raw numeric grid -> matrix (rows standardized to mean
    zero on request). format "homography": columns u1,v1,u2,v2 -> (b1, b2)
    homogeneous with third coordinate 1.
    """
    values, lines = _parse_rows(path)
    if format == "regression":
        if values.shape[1] < 2:
            raise CsvFormatError(f"{path}: regression needs >= 2 columns")
        return values[:, :-1], values[:, -1]
    if format == "classification":
        if values.shape[1] < 2:
            raise CsvFormatError(f"{path}: classification needs >= 2 columns")
        raw_labels = values[:, -1]
        for ln, lab in zip(lines, raw_labels):
            if lab != int(lab) or lab < 0:
                raise CsvFormatError(
                    f"{path}: line {ln}: label {lab} out of range (need integer >= 0)"
                )
        labels = raw_labels.astype(int)
        return values[:, :-1], labels, int(labels.max()) + 1
    if format == "matrix":
        if standardize_rows:
            values = values - values.mean(axis=1, keepdims=True)
        return values
    if format == "homography":
        if values.shape[1] != 4:
            raise CsvFormatError(f"{path}: homography needs columns u1,v1,u2,v2")
        ones = np.ones((values.shape[0], 1))
        return (
            np.hstack([values[:, 0:2], ones]),
            np.hstack([values[:, 2:4], ones]),
        )
    raise ValueError(f"unknown format {format!r}")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def save_regression_csv(path, features, targets):
    p = features.shape[1]
    header = [f"a_{j + 1}" for j in range(p)] + ["b"]
    _write_rows(path, header, np.column_stack([features, targets]))


def save_classification_csv(path, features, labels):
    p = features.shape[1]
    header = [f"v_{j + 1}" for j in range(p)] + ["label"]
    _write_rows(path, header, np.column_stack([features, labels]))


def save_matrix_csv(path, matrix):
    _write_rows(path, None, matrix)


def save_correspondences_csv(path, b1, b2):
    _write_rows(path, ["u1", "v1", "u2", "v2"], np.column_stack([b1[:, :2], b2[:, :2]]))


def save_mask_csv(path, mask):
    _write_rows(path, ["outlier"], [[float(v)] for v in np.asarray(mask, dtype=float)])


def load_mask_csv(path) -> np.ndarray:
    values, _ = _parse_rows(path)
    return values.ravel() != 0.0
