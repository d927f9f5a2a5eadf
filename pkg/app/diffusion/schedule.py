"""
Schedules de ruído da difusão e aritmética do processo direto.

Indexação 1-based: o passo t = 1..T carrega beta_t, e o índice 0 representa
o dado limpo x0 (alpha_bar_0 = 1). Toda a aritmética é em float64.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Union
import math

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from app.core.config import settings
from app.core.errors import InvalidParameterError


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    COSINE = "cosine"


class ScheduleSpec(BaseModel):
    """Forma serializável do schedule - alpha_bar é sempre recalculado."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ScheduleKind = ScheduleKind(settings.DEFAULT_SCHEDULE_KIND)
    T: int = settings.DEFAULT_TIMESTEPS
    beta_min: float = settings.DEFAULT_BETA_MIN
    beta_max: float = settings.DEFAULT_BETA_MAX


@dataclass(frozen=True)
class SdeCoefficients:
    drift_scale: float
    diffusion: float


class NoiseSchedule:
    """
    Sequências beta / alpha / alpha_bar imutáveis.

    Os arrays são somente leitura; a instância pode ser compartilhada entre
    threads sem cópia.
    """

    def __init__(self, kind: ScheduleKind, betas: np.ndarray, beta_min: float, beta_max: float):
        betas = np.asarray(betas, dtype=np.float64).copy()
        self.kind = ScheduleKind(kind)
        self.beta_min = float(beta_min)
        self.beta_max = float(beta_max)
        self.betas = betas
        self.alphas = 1.0 - betas
        self.alpha_bars = np.cumprod(self.alphas)
        for array in (self.betas, self.alphas, self.alpha_bars):
            array.flags.writeable = False

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    @classmethod
    def from_spec(cls, spec: ScheduleSpec) -> "NoiseSchedule":
        return make_schedule(spec.kind, spec.T, spec.beta_min, spec.beta_max)

    def spec(self) -> ScheduleSpec:
        return ScheduleSpec(kind=self.kind, T=self.T, beta_min=self.beta_min, beta_max=self.beta_max)

    def check_step(self, t: int, lowest: int = 0) -> int:
        if not lowest <= int(t) <= self.T:
            raise InvalidParameterError(f"Passo {t} fora de [{lowest}, {self.T}]")
        return int(t)

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t com alpha_bar_0 = 1."""
        t = self.check_step(t)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def alpha_bar_array(self, t: np.ndarray) -> np.ndarray:
        """Versão vetorizada para passos por linha (0..T)."""
        t = np.asarray(t, dtype=np.int64)
        if t.size and (t.min() < 0 or t.max() > self.T):
            raise InvalidParameterError(f"Passos fora de [0, {self.T}]")
        padded = np.concatenate(([1.0], self.alpha_bars))
        return padded[t]

    def beta(self, t: int) -> float:
        t = self.check_step(t, lowest=1)
        return float(self.betas[t - 1])

    def __repr__(self) -> str:
        return (f"NoiseSchedule(kind={self.kind.value}, T={self.T}, "
                f"alpha_bar_T={self.alpha_bars[-1]:.3e})")


def make_schedule(kind: Union[ScheduleKind, str], T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """
    Constrói um schedule linear ou cosseno.

    Args:
        kind: "linear" ou "cosine"
        T: Número de passos (>= 2)
        beta_min: Menor beta (linear); validado também para cosseno
        beta_max: Maior beta (linear)

    Returns:
        NoiseSchedule imutável

    Raises:
        InvalidParameterError: Limites não finitos ou fora de 0 < min <= max < 1
    """
    try:
        kind = ScheduleKind(kind)
    except ValueError:
        raise InvalidParameterError(f"Tipo de schedule não suportado: {kind}")

    if int(T) != T or T < 2:
        raise InvalidParameterError(f"T deve ser inteiro >= 2, recebido {T}")
    T = int(T)
    if not (math.isfinite(beta_min) and math.isfinite(beta_max)):
        raise InvalidParameterError("Limites de beta devem ser finitos")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise InvalidParameterError(
            f"Limites de beta inválidos: 0 < {beta_min} <= {beta_max} < 1 não vale"
        )

    if kind is ScheduleKind.LINEAR:
        betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    else:
        betas = _cosine_betas(T, settings.COSINE_OFFSET, settings.COSINE_MAX_BETA)

    schedule = NoiseSchedule(kind, betas, beta_min, beta_max)
    logger.debug(f"Schedule construído: {schedule}")
    return schedule


def _cosine_betas(T: int, offset: float, max_beta: float) -> np.ndarray:
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos((steps / T + offset) / (1.0 + offset) * math.pi / 2.0) ** 2
    alpha_bars = f / f[0]
    betas = 1.0 - alpha_bars[1:] / alpha_bars[:-1]
    # alpha_bar_T = 0 exatamente; o clamp mantém alpha_bar_T > 0
    return np.clip(betas, np.finfo(np.float64).tiny, max_beta)


def q_sample(x0: np.ndarray, t: Union[int, np.ndarray], eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """
    x_t = sqrt(alpha_bar_t)·x0 + sqrt(1 − alpha_bar_t)·eps.

    `t` pode ser escalar ou um array com um passo por linha de x0.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise InvalidParameterError(f"Dimensões incompatíveis: x0 {x0.shape} vs eps {eps.shape}")

    if np.ndim(t) == 0:
        alpha_bar = sched.alpha_bar(int(t))
        return math.sqrt(alpha_bar) * x0 + math.sqrt(1.0 - alpha_bar) * eps

    alpha_bar = sched.alpha_bar_array(t)
    if alpha_bar.shape[0] != x0.shape[0]:
        raise InvalidParameterError("Um passo por linha é necessário")
    alpha_bar = alpha_bar.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps


def sde_coefficients(sched: NoiseSchedule, t: int) -> SdeCoefficients:
    """Coeficientes VP discretizados: f_t = −beta_t/2, g_t = sqrt(beta_t)."""
    beta = sched.beta(t)
    return SdeCoefficients(drift_scale=-beta / 2.0, diffusion=math.sqrt(beta))
