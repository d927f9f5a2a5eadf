"""
Ruído de contagem de fótons (Poisson) no domínio do sinograma.
"""

import numpy as np
from loguru import logger

from app.core.errors import InvalidParameterError
from app.core.seeding import derived_rng
from app.ct.projector import Sinogram


def draw_photon_counts(expected: np.ndarray, seed: int) -> np.ndarray:
    """
    Contagens ~ Poisson(λ), um stream Philox derivado por linha (vista).

    Args:
        expected: Contagens esperadas λ, forma (vistas, detectores) ou (detectores,)
        seed: Semente da operação

    Returns:
        Contagens (float64) com a mesma forma de `expected`
    """
    expected = np.asarray(expected, dtype=np.float64)
    if np.any(expected < 0) or not np.all(np.isfinite(expected)):
        raise InvalidParameterError("Contagens esperadas devem ser finitas e >= 0")
    rows = np.atleast_2d(expected)
    counts = np.empty_like(rows)
    for view, lam in enumerate(rows):
        counts[view] = derived_rng(seed, "ct.photon_noise", view).poisson(lam)
    return counts.reshape(expected.shape)


def apply_photon_noise(sino: Sinogram, photon_count: float, seed: int) -> Sinogram:
    """
    Simula a aquisição com α fótons por raio.

    λ = α·exp(−p); contagens ~ Poisson(λ); p̂ = ln(α / max(contagens, 1)).
    """
    if not photon_count > 0:
        raise InvalidParameterError(f"photon_count deve ser > 0, recebido {photon_count}")
    expected = photon_count * np.exp(-sino.values)
    counts = draw_photon_counts(expected, seed)
    starved = int(np.count_nonzero(counts == 0))
    if starved:
        logger.warning(f"{starved} raios sem fótons detectados (α={photon_count:.3g}); contagem limitada a 1")
    return sino.with_values(np.log(photon_count / np.maximum(counts, 1.0)))
