"""Adversarial faced-mask generation and evaluation toolkit."""

__version__ = "0.1.0"

from . import attacks, baselines, evaluation, fileio, geometry, models  # noqa: F401
from .attacks import (FilterAttackConfig, NoiseAttackConfig,  # noqa: F401
                      init_delta_kernels, joint_loss, kernel_gradient,
                      mf2m_attack, pgd_noise_attack, pixelwise_filter)
from .baselines import BaselineVariant, Variant, fgsm_family_attack, solid_color_mask  # noqa: F401
from .evaluation import (MetricReport, ScoreSet, cmc_curve,  # noqa: F401
                         mask_detection_rate, psnr, select_template, ssim,
                         verification_metrics)
from .geometry import (LandmarkScheme, LandmarkSet, build_faced_mask,  # noqa: F401
                       composite, delaunay_mask, delaunay_triangulate,
                       fit_affine, lower_face_region, warp_mesh)
from .models import (CrossEntropyLoss, DifferentiableModel,  # noqa: F401
                     EmbeddingDistanceLoss, MaskProbabilities, ToyModel,
                     detect_mask, embed, finite_difference_gradient,
                     input_gradient, load_model, save_model)
