"""
Métricas de qualidade de imagem: PSNR, SSIM e desvio padrão do ruído.
"""

from typing import Optional
import math

import numpy as np
from pydantic import BaseModel
from skimage.metrics import structural_similarity

from app.core.config import settings
from app.core.errors import InvalidParameterError
from app.ct.phantoms import CTImage

METRICS_HEADER = ("image_id", "protocol", "method", "psnr_db", "ssim", "noise_sd")


class MetricReport(BaseModel):
    psnr_db: float
    ssim: float
    noise_sd: float
    n_pixels: int

    def csv_row(self, image_id: str, protocol: str, method: str) -> list:
        return [image_id, protocol, method,
                format(self.psnr_db, ".17g"), format(self.ssim, ".17g"), format(self.noise_sd, ".17g")]


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, CTImage) else np.asarray(img, dtype=np.float64)


def _pair(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise InvalidParameterError(f"Imagens com formas diferentes: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """10·log10(peak²/MSE); imagens idênticas retornam o teto PSNR_CAP_DB."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float(settings.PSNR_CAP_DB)
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = settings.SSIM_WINDOW, sigma: float = settings.SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a, b, peak: float = 1.0) -> float:
    """
    SSIM médio com janela gaussiana (scikit-image), recortando as bordas
    onde a janela não cabe inteira.

    Raises:
        InvalidParameterError: Imagem menor que a janela
    """
    a, b = _pair(a, b)
    size = settings.SSIM_WINDOW
    if a.ndim != 2 or a.shape[0] < size or a.shape[1] < size:
        raise InvalidParameterError(f"Imagem {a.shape} menor que a janela {size}×{size}")
    return float(structural_similarity(
        a, b,
        gaussian_weights=True,
        sigma=settings.SSIM_SIGMA,
        use_sample_covariance=False,
        data_range=peak,
        K1=settings.SSIM_K1,
        K2=settings.SSIM_K2,
    ))


def noise_sd(recon, reference, roi: Optional[np.ndarray] = None) -> float:
    """Desvio padrão (populacional) de recon − reference dentro da ROI."""
    recon, reference = _pair(recon, reference)
    mask = np.ones(recon.shape, dtype=bool) if roi is None else np.asarray(roi, dtype=bool)
    if mask.shape != recon.shape:
        raise InvalidParameterError(f"ROI {mask.shape} incompatível com imagem {recon.shape}")
    if not mask.any():
        raise InvalidParameterError("ROI vazia")
    return float(np.std((recon - reference)[mask]))


def evaluate(recon, reference, roi: Optional[np.ndarray] = None, peak: float = 1.0) -> MetricReport:
    recon_px, _ = _pair(recon, reference)
    n_pixels = int(recon_px.size if roi is None else np.count_nonzero(roi))
    return MetricReport(
        psnr_db=psnr(recon, reference, peak),
        ssim=ssim(recon, reference, peak),
        noise_sd=noise_sd(recon, reference, roi),
        n_pixels=n_pixels,
    )
