"""
Imagens de CT e phantoms analíticos rasterizados com supersampling.

Convenção de coordenadas: centro do pixel (linha i, coluna j) em
x = j − (N−1)/2, y = i − (N−1)/2, em unidades de pixel.
"""

from dataclasses import dataclass
from typing import Optional, Tuple
import math

import numpy as np

from app.core.config import settings
from app.core.errors import InvalidParameterError

# Shepp-Logan modificado: (intensidade, a, b, x0, y0, phi_graus), coordenadas em [-1, 1]
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

PHANTOM_KINDS = ("disk", "shepp_logan", "checker")


@dataclass(frozen=True)
class CTImage:
    pixels: np.ndarray
    pixel_size: float = settings.PIXEL_SIZE_MM

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise InvalidParameterError(f"Imagem deve ser 2D, recebido {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise InvalidParameterError("Imagem contém valores não finitos")
        if not self.pixel_size > 0:
            raise InvalidParameterError(f"pixel_size deve ser > 0, recebido {self.pixel_size}")
        object.__setattr__(self, "pixels", pixels)

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def is_square(self) -> bool:
        return self.pixels.shape[0] == self.pixels.shape[1]


def _subpixel_grid(size: int, supersampling: int) -> Tuple[np.ndarray, np.ndarray]:
    """Coordenadas (x, y) das subamostras, forma (N·s, N·s)."""
    offsets = (np.arange(supersampling) + 0.5) / supersampling - 0.5
    centers = np.arange(size) - (size - 1) / 2.0
    axis = (centers[:, None] + offsets[None, :]).reshape(-1)
    x, y = np.meshgrid(axis, axis)
    return x, y


def _downsample(fine: np.ndarray, size: int, supersampling: int) -> np.ndarray:
    return fine.reshape(size, supersampling, size, supersampling).mean(axis=(1, 3))


def make_phantom(kind: str,
                 size: int = settings.PHANTOM_SIZE,
                 radius: Optional[float] = None,
                 center: Tuple[float, float] = (0.0, 0.0),
                 value: float = 1.0,
                 supersampling: int = settings.PHANTOM_SUPERSAMPLING) -> CTImage:
    """
    Rasteriza um phantom analítico com antialiasing por supersampling.

    Args:
        kind: "disk", "shepp_logan" ou "checker"
        size: Lado da imagem em pixels (>= 32)
        radius: Raio do disco em pixels (padrão size/4)
        center: Centro (x, y) do disco em pixels, relativo ao centro da imagem
        value: Intensidade do disco
        supersampling: Subamostras por eixo

    Returns:
        CTImage com valores em [0, 1] (disco com value <= 1)
    """
    if size < 32:
        raise InvalidParameterError(f"Phantom exige size >= 32, recebido {size}")
    if supersampling < 1:
        raise InvalidParameterError(f"supersampling deve ser >= 1, recebido {supersampling}")

    if kind == "disk":
        radius = size / 4.0 if radius is None else float(radius)
        if radius < 0:
            raise InvalidParameterError(f"Raio negativo: {radius}")
        x, y = _subpixel_grid(size, supersampling)
        inside = (x - center[0]) ** 2 + (y - center[1]) ** 2 < radius ** 2
        pixels = _downsample(inside * float(value), size, supersampling)
    elif kind == "shepp_logan":
        pixels = _shepp_logan(size, supersampling)
    elif kind == "checker":
        block = max(size // 8, 1)
        idx = np.arange(size) // block
        pixels = ((idx[:, None] + idx[None, :]) % 2).astype(np.float64)
    else:
        raise InvalidParameterError(f"Phantom não suportado: {kind} (disponíveis: {', '.join(PHANTOM_KINDS)})")
    return CTImage(pixels=pixels)


def _shepp_logan(size: int, supersampling: int) -> np.ndarray:
    x, y = _subpixel_grid(size, supersampling)
    half = size / 2.0
    u = x / half
    v = -y / half  # linha 0 no topo
    fine = np.zeros_like(u)
    for intensity, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        cos_phi, sin_phi = math.cos(math.radians(phi)), math.sin(math.radians(phi))
        du, dv = u - x0, v - y0
        along = du * cos_phi + dv * sin_phi
        across = -du * sin_phi + dv * cos_phi
        fine += intensity * ((along / a) ** 2 + (across / b) ** 2 <= 1.0)
    pixels = np.maximum(_downsample(fine, size, supersampling), 0.0)
    return pixels / pixels.max()


def circular_fov_mask(size: int, margin: float = 1.0) -> np.ndarray:
    """Máscara do campo de visão circular inscrito (raio size/2 − margin)."""
    centers = np.arange(size) - (size - 1) / 2.0
    radius = size / 2.0 - margin
    return centers[None, :] ** 2 + centers[:, None] ** 2 <= radius ** 2
