from .image_quality import MetricReport, evaluate, noise_sd, psnr, ssim
from .entropy import batch_entropy_stats, bootstrap_mean_interval

__all__ = ["MetricReport", "evaluate", "noise_sd", "psnr", "ssim", "batch_entropy_stats", "bootstrap_mean_interval"]
