"""
Projeção paralela (transformada de Radon discreta) e reconstrução FBP.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple
import math

import numpy as np
from loguru import logger
from scipy.ndimage import map_coordinates

from app.core.errors import InvalidParameterError
from app.ct.phantoms import CTImage
from app.ct.protocols import ProtocolSpec

FILTERS = ("ramlak", "hann")
RAY_STEP = 0.5


@dataclass(frozen=True)
class Sinogram:
    """
    Integrais de linha (vistas × detectores).

    detector_spacing está em pixels; a faixa angular é guardada para a
    ponderação da retroprojeção.
    """

    values: np.ndarray
    angles: np.ndarray
    angle_range_deg: Tuple[float, float]
    detector_spacing: float = 1.0
    pixel_size: float = 1.0
    image_size: Optional[int] = None
    geometry: str = field(default="parallel")

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        angles = np.asarray(self.angles, dtype=np.float64).reshape(-1)
        if values.ndim != 2 or values.shape[0] != angles.shape[0]:
            raise InvalidParameterError(f"Sinograma {values.shape} incompatível com {angles.shape[0]} ângulos")
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("Sinograma contém valores não finitos")
        if angles.size > 1 and not np.all(np.diff(angles) > 0):
            raise InvalidParameterError("Ângulos devem ser estritamente crescentes")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "angle_range_deg", tuple(float(a) for a in self.angle_range_deg))

    @property
    def views(self) -> int:
        return int(self.values.shape[0])

    @property
    def detectors(self) -> int:
        return int(self.values.shape[1])

    def detector_positions(self) -> np.ndarray:
        """Offsets s dos detectores, em pixels, centrados em 0."""
        return (np.arange(self.detectors) - (self.detectors - 1) / 2.0) * self.detector_spacing

    def with_values(self, values: np.ndarray) -> "Sinogram":
        return Sinogram(values, self.angles, self.angle_range_deg, self.detector_spacing,
                        self.pixel_size, self.image_size, self.geometry)


def default_detector_count(size: int) -> int:
    return int(math.ceil(math.sqrt(2.0) * size))


def forward_project(img: CTImage,
                    spec: ProtocolSpec,
                    detectors: Optional[int] = None,
                    detector_spacing: float = 1.0) -> Sinogram:
    """
    Integrais de linha por amostragem bilinear a passos de meio pixel.

    Args:
        img: Imagem quadrada
        spec: Protocolo (número de vistas e faixa angular)
        detectors: Número de detectores (padrão ceil(sqrt(2)·N))
        detector_spacing: Espaçamento entre detectores, em pixels

    Returns:
        Sinogram com valores em unidades de (valor do pixel × comprimento físico)
    """
    if not img.is_square:
        raise InvalidParameterError(f"Imagem deve ser quadrada, recebido {img.pixels.shape}")
    size = img.size
    detectors = default_detector_count(size) if detectors is None else int(detectors)
    diagonal = math.sqrt(2.0) * size
    if detectors * detector_spacing < diagonal - 1.0:
        raise InvalidParameterError(
            f"{detectors} detectores (espaçamento {detector_spacing}) não cobrem a diagonal de {diagonal:.1f} pixels"
        )

    angles = spec.angles()
    center = (size - 1) / 2.0
    s = (np.arange(detectors) - (detectors - 1) / 2.0) * detector_spacing
    half_length = math.ceil(diagonal / 2.0) + 1
    l = np.arange(-half_length, half_length + RAY_STEP / 2, RAY_STEP)
    s_grid, l_grid = np.meshgrid(s, l, indexing="ij")

    values = np.empty((angles.size, detectors))
    for view, theta in enumerate(angles):
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        x = s_grid * cos_t - l_grid * sin_t
        y = s_grid * sin_t + l_grid * cos_t
        samples = map_coordinates(img.pixels, [y + center, x + center], order=1, mode="constant", cval=0.0)
        values[view] = samples.sum(axis=1) * RAY_STEP * img.pixel_size

    logger.debug(f"Projeção: {angles.size} vistas × {detectors} detectores ({spec.name})")
    return Sinogram(values, angles, spec.angle_range_deg, detector_spacing, img.pixel_size, size)


def ramp_filter(detectors: int, spacing: float, window: str = "ramlak") -> Tuple[np.ndarray, int]:
    """
    Resposta em frequência do filtro rampa espacial (Ram-Lak), opcionalmente
    apodizado por Hann, com zero-padding até a potência de 2 >= 2·detectores.

    Returns:
        (H de comprimento P, P)
    """
    if window not in FILTERS:
        raise InvalidParameterError(f"Filtro não suportado: {window} (disponíveis: {', '.join(FILTERS)})")
    padded = 1 << int(math.ceil(math.log2(2 * detectors)))
    n = np.arange(padded)
    n = np.where(n < padded // 2, n, n - padded)
    kernel = np.zeros(padded)
    kernel[0] = 0.25
    odd = n % 2 == 1
    kernel[odd] = -1.0 / (math.pi ** 2 * n[odd].astype(np.float64) ** 2)
    response = np.real(np.fft.fft(kernel))
    if window == "hann":
        response = response * (0.5 + 0.5 * np.cos(2.0 * math.pi * np.fft.fftfreq(padded)))
    return response / spacing, padded


def fbp_reconstruct(sino: Sinogram, out_size: Optional[int] = None, filter: str = "ramlak") -> CTImage:
    """
    Retroprojeção filtrada.

    Cada vista é filtrada no domínio da frequência e retroprojetada com
    interpolação linear entre detectores; o peso por vista é Δθ·min(1, π/faixa).

    Raises:
        InvalidParameterError: Menos de 2 vistas ou tamanho de saída inválido
    """
    if sino.views < 2:
        raise InvalidParameterError(f"FBP exige ao menos 2 vistas, recebido {sino.views}")
    size = out_size or sino.image_size or int(sino.detectors / math.sqrt(2.0))
    if size < 1:
        raise InvalidParameterError(f"Tamanho de saída inválido: {size}")

    spacing_mm = sino.detector_spacing * sino.pixel_size
    response, padded = ramp_filter(sino.detectors, spacing_mm, filter)
    filtered = np.real(np.fft.ifft(np.fft.fft(sino.values, n=padded, axis=1) * response[None, :], axis=1))
    filtered = filtered[:, :sino.detectors]

    start, end = sino.angle_range_deg
    span = math.radians(end - start)
    weight = (span / sino.views) * min(1.0, math.pi / span)

    positions = sino.detector_positions()
    coords = np.arange(size) - (size - 1) / 2.0
    x, y = np.meshgrid(coords, coords)
    recon = np.zeros((size, size))
    for view, theta in enumerate(sino.angles):
        s = x * math.cos(theta) + y * math.sin(theta)
        recon += np.interp(s.ravel(), positions, filtered[view], left=0.0, right=0.0).reshape(size, size)
    recon *= weight

    logger.debug(f"FBP: {sino.views} vistas -> {size}×{size} (filtro {filter})")
    return CTImage(pixels=recon, pixel_size=sino.pixel_size)
