"""
Protocolos de aquisição (fótons, número de vistas, faixa angular).
"""

from typing import Optional, Tuple
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings
from app.core.errors import ConfigurationError


class ProtocolSpec(BaseModel):
    """
    Protocolo de varredura.

    photon_count None significa aquisição sem ruído (protocolo ideal).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    photon_count: Optional[float] = Field(default=None, gt=0)
    view_count: int = Field(ge=1)
    angle_range_deg: Tuple[float, float] = (0.0, 360.0)

    @model_validator(mode="after")
    def _check_range(self):
        start, end = self.angle_range_deg
        if not 0.0 <= start < end <= 360.0:
            raise ValueError(f"Faixa angular inválida: [{start}, {end}]")
        return self

    @property
    def is_noiseless(self) -> bool:
        return self.photon_count is None

    @property
    def angle_span_rad(self) -> float:
        start, end = self.angle_range_deg
        return math.radians(end - start)

    def angles(self) -> np.ndarray:
        """Ângulos (rad) uniformes na faixa, extremo final excluído."""
        start, end = self.angle_range_deg
        return np.radians(np.linspace(start, end, self.view_count, endpoint=False))


def get_protocol(name: str) -> ProtocolSpec:
    """
    Protocolo registrado em settings.PROTOCOLS.

    Raises:
        ConfigurationError: Nome desconhecido
    """
    if name not in settings.PROTOCOLS:
        raise ConfigurationError(
            f"Protocolo não suportado: {name} (disponíveis: {', '.join(available_protocols())})"
        )
    return ProtocolSpec(name=name, **settings.PROTOCOLS[name])


def available_protocols() -> list:
    return list(settings.PROTOCOLS.keys())
