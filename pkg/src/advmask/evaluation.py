"""Biometric and image-quality metrics.

Identification: CMC rank-k rates over Euclidean embedding distances (lower is
more similar; ties broken by gallery index). Verification: ROC over distance
thresholds, TAR at fixed FAR targets, trapezoidal AUC (which equals the
Mann-Whitney U probability estimate with half-weight ties). Detection: the
fraction of images the detector calls masked. Similarity: PSNR (MAX = 1,
whole image) and mean local SSIM (11x11 Gaussian window, sigma 1.5, on the
Rec.601 luminance).

All metric computations are pure; score accumulation for verification can be
streamed in chunks (order-independent reductions only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.signal import convolve2d

from . import models
from .errors import (DimensionMismatch, EmptyScores, EmptySet, EmptyTemplates,
                     NoMateInGallery, TooSmall)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


# -- identification ----------------------------------------------------------

def cmc_curve(
    probe_embeddings: np.ndarray,
    gallery_embeddings: np.ndarray,
    gallery_labels,
    probe_labels,
    max_rank: int,
) -> dict[int, float]:
    """Rank-k identification rates for k = 1..max_rank.

    rate(k) is the fraction of probes whose k nearest gallery entries
    (Euclidean distance, ascending, ties broken by gallery index) contain a
    same-identity entry. Raises NoMateInGallery if a probe identity is absent
    from the gallery.
    """
    probe_embeddings = np.asarray(probe_embeddings, dtype=np.float64)
    gallery_embeddings = np.asarray(gallery_embeddings, dtype=np.float64)
    gallery_labels = np.asarray(gallery_labels)
    probe_labels = np.asarray(probe_labels)
    missing = set(probe_labels.tolist()) - set(gallery_labels.tolist())
    if missing:
        raise NoMateInGallery(f"probe identities without gallery mates: {sorted(missing)}")

    diffs = probe_embeddings[:, None, :] - gallery_embeddings[None, :, :]
    dists = np.sqrt((diffs ** 2).sum(axis=2))
    first_mate_rank = np.empty(len(probe_labels), dtype=np.int64)
    for i in range(len(probe_labels)):
        order = np.argsort(dists[i], kind="stable")  # stable: ties -> lower gallery index
        mate_positions = np.nonzero(gallery_labels[order] == probe_labels[i])[0]
        first_mate_rank[i] = mate_positions[0] + 1
    return {k: float((first_mate_rank <= k).mean()) for k in range(1, max_rank + 1)}


# -- verification ------------------------------------------------------------

@dataclass
class ScoreSet:
    """Distances for same-identity (positive) and different-identity pairs.

    ``negatives`` may be an array or an iterable of array chunks (pull-based
    source), so very large negative-pair counts need not be materialized.
    """

    positives: np.ndarray
    negatives: np.ndarray | Iterable[np.ndarray]


@dataclass
class VerificationResult:
    tar_at_far: dict[float, float]
    auc: float
    roc: np.ndarray  # (M, 2) columns fpr, tpr
    unreachable_fars: list[float] = field(default_factory=list)
    num_positives: int = 0
    num_negatives: int = 0


def verification_metrics(scores: ScoreSet, far_targets: Iterable[float]) -> VerificationResult:
    """TAR@FAR for each target, trapezoidal AUC, and the ROC point list.

    With distance threshold t: TPR(t) = fraction of positives <= t, FPR(t) =
    fraction of negatives <= t. TAR@FAR is the TPR at the largest threshold
    whose FPR does not exceed the target. Targets below 1/#negatives are
    computed all the same (at FPR 0) and flagged as unreachable.
    """
    far_targets = list(far_targets)
    for f in far_targets:
        if not 0.0 < f <= 1.0:
            raise EmptyScores(f"far target {f} outside (0, 1]")
    pos = np.sort(np.asarray(scores.positives, dtype=np.float64))
    if pos.size == 0:
        raise EmptyScores("no positive scores")

    if isinstance(scores.negatives, (np.ndarray, list, tuple)):
        neg = np.sort(np.asarray(scores.negatives, dtype=np.float64))
        if neg.size == 0:
            raise EmptyScores("no negative scores")
        return _verification_full(pos, neg, far_targets)
    return _verification_streaming(pos, scores.negatives, far_targets)


def _verification_full(pos: np.ndarray, neg: np.ndarray, far_targets) -> VerificationResult:
    thresholds = np.unique(np.concatenate([pos, neg]))
    tpr = np.searchsorted(pos, thresholds, side="right") / pos.size
    fpr = np.searchsorted(neg, thresholds, side="right") / neg.size
    roc = np.column_stack([np.concatenate([[0.0], fpr]), np.concatenate([[0.0], tpr])])
    auc = float(np.trapezoid(roc[:, 1], roc[:, 0]))

    tar_at_far: dict[float, float] = {}
    unreachable = []
    for target in far_targets:
        ok = np.nonzero(fpr <= target)[0]
        tar_at_far[target] = float(tpr[ok[-1]]) if ok.size else 0.0
        if target < 1.0 / neg.size:
            unreachable.append(target)
    return VerificationResult(tar_at_far, auc, roc, unreachable, pos.size, neg.size)


def _verification_streaming(pos: np.ndarray, chunks, far_targets) -> VerificationResult:
    """One pass over negative chunks: exact AUC via the U statistic, and FPR
    evaluated at positive-score thresholds (TPR only changes there)."""
    u_num = 0.0
    neg_total = 0
    neg_le_pos = np.zeros(pos.size, dtype=np.int64)
    for chunk in chunks:
        chunk = np.asarray(chunk, dtype=np.float64).ravel()
        if chunk.size == 0:
            continue
        lo = np.searchsorted(pos, chunk, side="left")
        hi = np.searchsorted(pos, chunk, side="right")
        u_num += float(lo.sum()) + 0.5 * float((hi - lo).sum())
        neg_sorted = np.sort(chunk)
        neg_le_pos += np.searchsorted(neg_sorted, pos, side="right")
        neg_total += chunk.size
    if neg_total == 0:
        raise EmptyScores("no negative scores")

    auc = u_num / (pos.size * neg_total)
    tpr = (np.arange(pos.size) + 1.0) / pos.size
    fpr = neg_le_pos / neg_total
    roc = np.column_stack([np.concatenate([[0.0], fpr, [1.0]]),
                           np.concatenate([[0.0], tpr, [1.0]])])
    tar_at_far: dict[float, float] = {}
    unreachable = []
    for target in far_targets:
        ok = np.nonzero(fpr <= target)[0]
        tar_at_far[target] = float(tpr[ok[-1]]) if ok.size else 0.0
        if target < 1.0 / neg_total:
            unreachable.append(target)
    return VerificationResult(tar_at_far, float(auc), roc, unreachable, pos.size, neg_total)


# -- similarity --------------------------------------------------------------

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with MAX = 1.0, over the whole image.

    Identical inputs return the +inf sentinel rather than erroring.
    """
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _luminance(image: np.ndarray) -> np.ndarray:
    r, g, b = LUMA_WEIGHTS
    return r * image[:, :, 0] + g * image[:, :, 1] + b * image[:, :, 2]


def _ssim_window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * SSIM_SIGMA ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over 11x11 Gaussian windows on the luminance plane."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise TooSmall(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = _luminance(np.asarray(a, np.float64))
    y = _luminance(np.asarray(b, np.float64))
    win = _ssim_window()
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid") - mu_x * mu_x
    yy = convolve2d(y * y, win, mode="valid") - mu_y * mu_y
    xy = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    c1 = SSIM_K1 ** 2  # L = 1
    c2 = SSIM_K2 ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


# -- detection & selection ---------------------------------------------------

def mask_detection_rate(images: Iterable[np.ndarray],
                        detector: models.DifferentiableModel) -> float:
    """Fraction of images judged masked (p_masked > p_not_masked)."""
    total = 0
    detected = 0
    for image in images:
        probs = models.detect_mask(detector, image)
        detected += int(probs.is_masked)
        total += 1
    if total == 0:
        raise EmptySet("mask_detection_rate needs at least one image")
    return detected / total


def select_template(original: np.ndarray, templates: list[np.ndarray],
                    fr: models.DifferentiableModel) -> int:
    """Index of the template with the smallest embedding distance to the original.

    Ties break toward the lowest index.
    """
    if not templates:
        raise EmptyTemplates("template list is empty")
    ref = models.embed(fr, original)
    best_idx = 0
    best_dist = math.inf
    for i, tpl in enumerate(templates):
        d = models.embedding_distance(models.embed(fr, tpl), ref)
        if d < best_dist:
            best_idx, best_dist = i, d
    return best_idx


# -- aggregate report --------------------------------------------------------

@dataclass
class MetricReport:
    """Aggregate metrics for one experiment run."""

    mask_detection_rate: float
    cmc: dict[int, float] | None = None
    tar_at_far: dict[float, float] | None = None
    auc: float | None = None
    psnr: float | None = None
    ssim: float | None = None
    roc: list[list[float]] | None = None
    unreachable_fars: list[float] | None = None

    def __post_init__(self):
        if self.cmc is not None:
            rates = [self.cmc[k] for k in sorted(self.cmc)]
            if any(b < a - 1e-12 for a, b in zip(rates, rates[1:])):
                raise ValueError("CMC rates must be non-decreasing in rank")

    def to_dict(self) -> dict:
        return {
            "mask_detection_rate": self.mask_detection_rate,
            "cmc": None if self.cmc is None else {str(k): v for k, v in sorted(self.cmc.items())},
            "tar_at_far": None if self.tar_at_far is None
            else {repr(k): v for k, v in sorted(self.tar_at_far.items())},
            "auc": self.auc,
            "psnr": self.psnr,
            "ssim": self.ssim,
            "roc": self.roc,
            "unreachable_fars": self.unreachable_fars,
        }
