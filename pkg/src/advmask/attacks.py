"""Adversarial core: joint objective, PGD noise stage, pixel-wise filtering stage.

The joint objective rewards moving the face embedding away from the original
while lowering the detector's cross-entropy toward the not-masked label:

    loss = D(FR(x), FR(reference)) - ratio * CE(MD(x), y)

The noise stage ascends this with sign steps under an L-inf bound confined to
the faced-mask region. The filtering stage optimizes one KxK kernel per pixel
(delta-initialized, so filtering starts as the identity) with raw-gradient
steps; kernels outside the region never move. Iterates are evaluated clamped
to [0, 1] with a straight-through gradient; the returned image is clamped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import geometry, models
from .errors import ConfigInvalid, DimensionMismatch, EvenKernel
from .models import CrossEntropyLoss, EmbeddingDistanceLoss


@dataclass(frozen=True)
class NoiseAttackConfig:
    epsilon: float = 0.04
    step_size: float = 0.001
    iterations: int = 40
    ratio: float = 1.0
    target_label: int = 0

    def validate(self) -> None:
        if self.epsilon <= 0:
            raise ConfigInvalid("epsilon must be > 0")
        if self.step_size <= 0:
            raise ConfigInvalid("step_size must be > 0")
        if self.iterations < 0:
            raise ConfigInvalid("iterations must be >= 0")
        if self.target_label not in (0, 1):
            raise ConfigInvalid("target_label must be 0 or 1")


@dataclass(frozen=True)
class FilterAttackConfig:
    noise_epsilon: float = 0.01
    kernel_size: int = 5
    kernel_step: float = 0.1
    kernel_iterations: int = 160
    ratio: float = 1.0
    filter_only: bool = False

    def validate(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise EvenKernel(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.noise_epsilon <= 0:
            raise ConfigInvalid("noise_epsilon must be > 0")
        if self.kernel_step <= 0:
            raise ConfigInvalid("kernel_step must be > 0")
        if self.kernel_iterations < 0:
            raise ConfigInvalid("kernel_iterations must be >= 0")


@dataclass
class AttackReport:
    method: str
    loss_trace: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    final_embedding_distance: float = float("nan")
    final_mask_probabilities: tuple[float, float] = (float("nan"), float("nan"))
    perturbation_linf: float = 0.0
    region_pixel_count: int = 0
    iterations_completed: int = 0
    wall_clock_seconds: float | None = None
    noise_stage: "AttackReport | None" = None

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "method": self.method,
            "loss_trace": [float(v) for v in self.loss_trace],
            "initial_loss": float(self.initial_loss),
            "final_loss": float(self.final_loss),
            "final_embedding_distance": float(self.final_embedding_distance),
            "final_mask_probabilities": [float(v) for v in self.final_mask_probabilities],
            "perturbation_linf": float(self.perturbation_linf),
            "region_pixel_count": int(self.region_pixel_count),
            "iterations_completed": int(self.iterations_completed),
            "wall_clock_seconds": self.wall_clock_seconds if include_timing else None,
        }
        d["noise_stage"] = self.noise_stage.to_dict(include_timing) if self.noise_stage else None
        return d


def joint_loss(image, reference, fr, md, ratio: float, y: int) -> float:
    """Embedding distance to the reference minus ratio-weighted detector CE."""
    ref_emb = models.embed(fr, reference)
    return joint_loss_from_reference(image, ref_emb, fr, md, ratio, y)


def joint_loss_from_reference(image, ref_emb, fr, md, ratio: float, y: int) -> float:
    dist = fr.loss_value(EmbeddingDistanceLoss(ref_emb), image)
    ce = md.loss_value(CrossEntropyLoss(y), image)
    return dist - ratio * ce


def joint_gradient(image, ref_emb, fr, md, ratio: float, y: int) -> np.ndarray:
    """d(joint loss)/d(image)."""
    g = fr.input_gradient(EmbeddingDistanceLoss(ref_emb), image)
    if ratio != 0.0:
        g = g - ratio * md.input_gradient(CrossEntropyLoss(y), image)
    return g


def pgd_noise_attack(
    image_dm: np.ndarray,
    reference: np.ndarray,
    fr: models.DifferentiableModel,
    md: models.DifferentiableModel,
    config: NoiseAttackConfig,
    region: np.ndarray,
) -> tuple[np.ndarray, AttackReport]:
    """Sign-step gradient ascent on the joint loss, confined to the region.

    The additive noise is projected to the L-inf ball of config.epsilon and
    zeroed outside the region each step; the returned image is clamped to
    [0, 1]. Pixels outside the region are bit-identical to the input.
    """
    config.validate()
    if region.shape != image_dm.shape[:2]:
        raise DimensionMismatch(f"region {region.shape} vs image {image_dm.shape[:2]}")
    t0 = time.perf_counter()
    ref_emb = models.embed(fr, reference)
    region3 = (region > 0).astype(np.float64)[:, :, None]
    y = config.target_label

    report = AttackReport(method="pgd_noise", region_pixel_count=int((region > 0).sum()))
    noise = np.zeros_like(image_dm)
    report.initial_loss = joint_loss_from_reference(image_dm, ref_emb, fr, md, config.ratio, y)
    for _ in range(config.iterations):
        x = np.clip(image_dm + noise, 0.0, 1.0)
        report.loss_trace.append(joint_loss_from_reference(x, ref_emb, fr, md, config.ratio, y))
        g = joint_gradient(x, ref_emb, fr, md, config.ratio, y)  # straight-through clamp
        noise = noise + config.step_size * np.sign(g)
        noise = noise * region3
        noise = np.clip(noise, -config.epsilon, config.epsilon)
        report.iterations_completed += 1

    out = np.clip(image_dm + noise, 0.0, 1.0) if config.iterations > 0 else image_dm.copy()
    _finalize(report, out, image_dm, ref_emb, fr, md, config.ratio, y)
    report.wall_clock_seconds = time.perf_counter() - t0
    return out, report


# -- pixel-wise filtering ----------------------------------------------------

def init_delta_kernels(height: int, width: int, kernel_size: int) -> np.ndarray:
    """Per-pixel kernels (H, W, K*K) with center weight 1: the identity filter."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise EvenKernel(f"kernel size must be odd and >= 1, got {kernel_size}")
    kernels = np.zeros((height, width, kernel_size * kernel_size), dtype=np.float64)
    center = (kernel_size // 2) * kernel_size + kernel_size // 2
    kernels[:, :, center] = 1.0
    return kernels


def _neighborhoods(image: np.ndarray, k: int) -> np.ndarray:
    """Replicate-padded KxK neighborhoods: (H, W, 3, K, K)."""
    pad = k // 2
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    return sliding_window_view(padded, (k, k), axis=(0, 1))


def pixelwise_filter(image: np.ndarray, kernels: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Each output pixel is its own KxK kernel applied to its replicate-padded
    neighborhood, identically per channel. Delta kernels reproduce the input
    exactly. Clamping to [0, 1] is applied only when the result is final."""
    k2 = kernels.shape[2]
    k = int(round(k2 ** 0.5))
    if k * k != k2 or k % 2 == 0:
        raise EvenKernel(f"kernel grid last dim {k2} is not an odd square")
    if kernels.shape[:2] != image.shape[:2]:
        raise DimensionMismatch(f"kernel grid {kernels.shape[:2]} vs image {image.shape[:2]}")
    win = _neighborhoods(image, k)
    kk = kernels.reshape(image.shape[0], image.shape[1], k, k)
    out = np.einsum("hwcij,hwij->hwc", win, kk)
    return np.clip(out, 0.0, 1.0) if clamp else out


def kernel_gradient(loss_grad: np.ndarray, filter_input: np.ndarray,
                    kernel_size: int) -> np.ndarray:
    """Chain rule through the filter: d loss / d kernels, shape (H, W, K*K).

    The filter is linear in the kernels, so the gradient of kernel weight
    (i, j) at pixel p is the channel-summed product of the upstream image
    gradient at p with the replicate-padded input neighborhood of p.
    Restriction to region pixels is the caller's job.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise EvenKernel(f"kernel size must be odd and >= 1, got {kernel_size}")
    if loss_grad.shape != filter_input.shape:
        raise DimensionMismatch(f"grad {loss_grad.shape} vs input {filter_input.shape}")
    win = _neighborhoods(filter_input, kernel_size)  # (H, W, 3, K, K)
    g = np.einsum("hwc,hwcij->hwij", loss_grad, win)
    h, w = filter_input.shape[:2]
    return g.reshape(h, w, kernel_size * kernel_size)


def mf2m_attack(
    original: np.ndarray,
    original_landmarks: geometry.LandmarkSet,
    template: np.ndarray,
    template_landmarks: geometry.LandmarkSet,
    fr: models.DifferentiableModel,
    md: models.DifferentiableModel,
    noise_cfg: NoiseAttackConfig,
    filter_cfg: FilterAttackConfig,
) -> tuple[np.ndarray, AttackReport]:
    """Full multi-stage attack: faced-mask warp, small PGD noise, kernel filtering.

    Stage 1 builds the masked image; stage 2 adds PGD noise bounded by
    filter_cfg.noise_epsilon (skipped entirely in filter-only mode); stage 3
    runs filter_cfg.kernel_iterations raw-gradient kernel updates, zeroed
    outside the region. The noise is fixed once stage 2 ends; only kernels
    move afterwards.
    """
    noise_cfg.validate()
    filter_cfg.validate()
    t0 = time.perf_counter()

    i_dm, _, region = geometry.delaunay_mask(original, original_landmarks,
                                             template, template_landmarks)
    y = noise_cfg.target_label
    if filter_cfg.filter_only:
        i_hat = i_dm
        noise_report = None
    else:
        stage_cfg = replace(noise_cfg, epsilon=filter_cfg.noise_epsilon)
        i_hat, noise_report = pgd_noise_attack(i_dm, original, fr, md, stage_cfg, region)

    ref_emb = models.embed(fr, original)
    h, w = original.shape[:2]
    kernels = init_delta_kernels(h, w, filter_cfg.kernel_size)
    region_mask3 = (region > 0)[:, :, None]

    report = AttackReport(method="mf2m", region_pixel_count=int((region > 0).sum()),
                          noise_stage=noise_report)
    report.initial_loss = joint_loss_from_reference(i_dm, ref_emb, fr, md, filter_cfg.ratio, y)
    for _ in range(filter_cfg.kernel_iterations):
        filtered = pixelwise_filter(i_hat, kernels)
        x = np.clip(filtered, 0.0, 1.0)
        report.loss_trace.append(
            joint_loss_from_reference(x, ref_emb, fr, md, filter_cfg.ratio, y))
        g_img = joint_gradient(x, ref_emb, fr, md, filter_cfg.ratio, y)  # straight-through
        g_k = kernel_gradient(g_img, i_hat, filter_cfg.kernel_size)
        g_k = np.where(region_mask3, g_k, 0.0)
        kernels = kernels + filter_cfg.kernel_step * g_k
        report.iterations_completed += 1

    out = pixelwise_filter(i_hat, kernels, clamp=True)
    _finalize(report, out, i_dm, ref_emb, fr, md, filter_cfg.ratio, y)
    report.wall_clock_seconds = time.perf_counter() - t0
    return out, report


def _finalize(report, out, base, ref_emb, fr, md, ratio, y) -> None:
    report.final_loss = joint_loss_from_reference(out, ref_emb, fr, md, ratio, y)
    report.final_embedding_distance = models.embedding_distance(models.embed(fr, out), ref_emb)
    report.final_mask_probabilities = tuple(models.detect_mask(md, out))
    report.perturbation_linf = float(np.abs(out - base).max())
