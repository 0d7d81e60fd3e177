"""Solid-color masking and the FGSM-family baseline attacks.

All variants maximize the same joint objective as the main attacks, with the
perturbation confined to the solid-color mask region and the L-inf ball:

    FGSM / TI-FGSM          single step of size epsilon
    I-FGSM / DI2-FGSM       iterative sign steps with projection
    MI-* / M-DI2-*          momentum: g <- mu*g + grad/||grad||_1 before sign
    TI-*                    gradient smoothed by a normalized Gaussian kernel
    DI2-*                   with probability p, gradient taken on a randomly
                            down-scaled, zero-padded-back copy of the iterate
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import geometry, models
from .attacks import (AttackReport, NoiseAttackConfig, _finalize,
                      joint_gradient, joint_loss_from_reference)
from .errors import ConfigInvalid, DimensionMismatch, MissingSeed


class Variant(enum.Enum):
    FGSM = "fgsm"
    I_FGSM = "i_fgsm"
    MI_FGSM = "mi_fgsm"
    TI_FGSM = "ti_fgsm"
    TI_MI_FGSM = "ti_mi_fgsm"
    DI2_FGSM = "di2_fgsm"
    M_DI2_FGSM = "m_di2_fgsm"


SINGLE_STEP = {Variant.FGSM, Variant.TI_FGSM}
USES_MOMENTUM = {Variant.MI_FGSM, Variant.TI_MI_FGSM, Variant.M_DI2_FGSM}
USES_TI = {Variant.TI_FGSM, Variant.TI_MI_FGSM}
USES_DI = {Variant.DI2_FGSM, Variant.M_DI2_FGSM}


@dataclass(frozen=True)
class BaselineVariant:
    variant: Variant
    momentum_mu: float = 1.0
    ti_kernel_size: int = 7
    di_probability: float = 0.5
    di_min_scale: float = 0.9

    def validate(self) -> None:
        if self.momentum_mu < 0:
            raise ConfigInvalid("momentum_mu must be >= 0")
        if self.ti_kernel_size < 1 or self.ti_kernel_size % 2 == 0:
            raise ConfigInvalid("ti_kernel_size must be odd")
        if not 0.0 <= self.di_probability <= 1.0:
            raise ConfigInvalid("di_probability must be in [0, 1]")
        if not 0.0 < self.di_min_scale <= 1.0:
            raise ConfigInvalid("di_min_scale must be in (0, 1]")

    @property
    def stochastic(self) -> bool:
        return self.variant in USES_DI


def solid_color_mask(
    original: np.ndarray,
    landmarks: geometry.LandmarkSet,
    color: tuple[float, float, float] = geometry.MEDICAL_BLUE,
) -> tuple[np.ndarray, np.ndarray]:
    """Fill the lower-face region with a constant color; returns (image, region)."""
    h, w = original.shape[:2]
    region = geometry.lower_face_region(landmarks, h, w)
    flat = np.empty_like(original)
    flat[:, :] = np.asarray(color, dtype=np.float64)
    return geometry.composite(original, flat, region), region


def gaussian_kernel(size: int, sigma: float | None = None) -> np.ndarray:
    """L1-normalized 2-D Gaussian; sigma defaults to size/3."""
    if sigma is None:
        sigma = size / 3.0
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _ti_smooth(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.shape == (1, 1):
        return grad  # exact identity: TI(1x1) must reduce to the plain variant
    out = np.empty_like(grad)
    for c in range(grad.shape[2]):
        out[:, :, c] = ndimage.convolve(grad[:, :, c], kernel, mode="constant", cval=0.0)
    return out


def _bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = image.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h)
    xs = (np.arange(out_w) + 0.5) * (w / out_w)
    grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    return geometry.bilinear_sample(image, grid).reshape(out_h, out_w, 3)


def _diverse_input(image: np.ndarray, rng: np.random.Generator, min_scale: float) -> np.ndarray:
    """Random downscale then zero-pad back to the original size at a random offset."""
    h, w = image.shape[:2]
    new_h = int(rng.integers(math.ceil(min_scale * h), h + 1))
    new_w = int(rng.integers(math.ceil(min_scale * w), w + 1))
    small = _bilinear_resize(image, new_h, new_w)
    top = int(rng.integers(0, h - new_h + 1))
    left = int(rng.integers(0, w - new_w + 1))
    out = np.zeros_like(image)
    out[top:top + new_h, left:left + new_w] = small
    return out


def fgsm_family_attack(
    image: np.ndarray,
    reference: np.ndarray,
    fr: models.DifferentiableModel,
    md: models.DifferentiableModel,
    variant: BaselineVariant,
    config: NoiseAttackConfig,
    region: np.ndarray,
    seed: int | None = None,
) -> tuple[np.ndarray, AttackReport]:
    """Run one FGSM-family variant against the joint objective.

    Stochastic (DI2) variants require a seed and are bit-reproducible for a
    fixed seed. The perturbation stays inside the region and the epsilon ball.
    """
    variant.validate()
    config.validate()
    if region.shape != image.shape[:2]:
        raise DimensionMismatch(f"region {region.shape} vs image {image.shape[:2]}")
    if variant.stochastic and seed is None:
        raise MissingSeed(f"{variant.variant.value} is stochastic; a seed is required")
    rng = np.random.default_rng(seed) if variant.stochastic else None

    t0 = time.perf_counter()
    ref_emb = models.embed(fr, reference)
    region3 = (region > 0).astype(np.float64)[:, :, None]
    y = config.target_label
    ti_kernel = gaussian_kernel(variant.ti_kernel_size) if variant.variant in USES_TI else None

    single = variant.variant in SINGLE_STEP
    steps = 1 if single else config.iterations
    step_size = config.epsilon if single else config.step_size

    report = AttackReport(method=variant.variant.value,
                          region_pixel_count=int((region > 0).sum()))
    report.initial_loss = joint_loss_from_reference(image, ref_emb, fr, md, config.ratio, y)

    x = image.copy()
    momentum = np.zeros_like(image)
    for _ in range(steps):
        x_in = x
        if variant.variant in USES_DI and rng.uniform() < variant.di_probability:
            x_in = _diverse_input(x, rng, variant.di_min_scale)
        report.loss_trace.append(joint_loss_from_reference(x, ref_emb, fr, md, config.ratio, y))
        g = joint_gradient(x_in, ref_emb, fr, md, config.ratio, y)
        if ti_kernel is not None:
            g = _ti_smooth(g, ti_kernel)
        if variant.variant in USES_MOMENTUM:
            l1 = np.abs(g).sum()
            momentum = variant.momentum_mu * momentum + (g / l1 if l1 > 0 else g)
            g = momentum
        x = x + step_size * np.sign(g)
        delta = np.clip(x - image, -config.epsilon, config.epsilon) * region3
        x = np.clip(image + delta, 0.0, 1.0)
        report.iterations_completed += 1

    _finalize(report, x, image, ref_emb, fr, md, config.ratio, y)
    report.wall_clock_seconds = time.perf_counter() - t0
    return x, report
