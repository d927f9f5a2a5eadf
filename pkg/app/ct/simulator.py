"""
Simulação de protocolo: projeção -> ruído de fótons -> FBP.
"""

from dataclasses import dataclass
from typing import Optional

from loguru import logger

from app.core.config import settings
from app.ct.phantoms import CTImage
from app.ct.projector import Sinogram, fbp_reconstruct, forward_project
from app.ct.noise import apply_photon_noise
from app.ct.protocols import ProtocolSpec


@dataclass(frozen=True)
class SimulationResult:
    protocol: ProtocolSpec
    sinogram: Sinogram
    noisy_sinogram: Sinogram
    reconstruction: CTImage


def simulate_protocol_detailed(img: CTImage,
                               spec: ProtocolSpec,
                               seed: int,
                               detectors: Optional[int] = None,
                               filter: str = "ramlak",
                               mu_reference: float = settings.MU_REFERENCE_PER_MM) -> SimulationResult:
    """
    Executa o protocolo e devolve os sinogramas intermediários.

    A imagem normalizada é convertida em atenuação (× mu_reference por mm)
    antes da projeção e de volta após a reconstrução.
    """
    attenuation = CTImage(pixels=img.pixels * mu_reference, pixel_size=img.pixel_size)
    sinogram = forward_project(attenuation, spec, detectors)
    if spec.is_noiseless:
        noisy = sinogram
    else:
        noisy = apply_photon_noise(sinogram, spec.photon_count, seed)
    recon = fbp_reconstruct(noisy, img.size, filter)
    logger.info(f"Protocolo {spec.name} simulado ({spec.view_count} vistas, α={spec.photon_count})")
    return SimulationResult(
        protocol=spec,
        sinogram=sinogram,
        noisy_sinogram=noisy,
        reconstruction=CTImage(pixels=recon.pixels / mu_reference, pixel_size=img.pixel_size),
    )


def simulate_protocol(img: CTImage, spec: ProtocolSpec, seed: int, **kwargs) -> CTImage:
    """Imagem reconstruída pelo protocolo, em intensidades normalizadas."""
    return simulate_protocol_detailed(img, spec, seed, **kwargs).reconstruction
