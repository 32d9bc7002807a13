"""Image quality metrics: full-reference (MSE, PSNR, SSIM) and blind (PIQE, BRISQUE)."""

from .brisque import BrisqueModel, BrisqueModelError, BrisqueResult, brisque, brisque_features, brisque_score, load_default_model
from .fullref import SsimConfig, mse, psnr, psnr_images, quantize, ssim
from .piqe import PiqeConfig, piqe
from .suite import MetricConfig, MetricReport, evaluate_suite
