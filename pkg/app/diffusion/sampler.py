"""
Amostragem DDIM determinística, inversão DDIM, guidance por classificador e
por incerteza, e o pipeline UMS de três estágios.

Todas as operações trabalham em batches (n, d); cadeias de pontos distintos
são independentes linha a linha.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple, Union
import csv
import math

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from app.core.config import settings
from app.core.errors import InvalidParameterError, NumericalError
from app.core.seeding import derive_seed, derived_rng
from app.diffusion.batch import SampleBatch, Stage
from app.diffusion.models import EpsilonModel, PosteriorProvider
from app.diffusion.oracle import GaussianMixtureOracle, sample_data
from app.diffusion.schedule import NoiseSchedule


class GuidanceMode(str, Enum):
    NONE = "none"
    CLASSIFIER = "classifier"
    UNCERTAINTY = "uncertainty"


class GradientSource(str, Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


class Direction(str, Enum):
    GENERATE = "generate"
    INVERT = "invert"


class GuidanceSpec(BaseModel):
    """Modo de guidance, escala (s ou γ) e origem do gradiente."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: GuidanceMode = GuidanceMode.NONE
    scale: float = Field(default=0.0, ge=0)
    gradient_source: GradientSource = GradientSource.ANALYTIC

    @property
    def inactive(self) -> bool:
        return self.mode is GuidanceMode.NONE or self.scale == 0.0


UNGUIDED = GuidanceSpec()


@dataclass(frozen=True)
class Trajectory:
    """Pontos em cada passo visitado, forma (S+1, n, d), incluindo extremos."""

    points: np.ndarray
    steps: np.ndarray
    direction: Direction

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]


@dataclass(frozen=True)
class UmsStages:
    data: Optional[SampleBatch]
    class_guided: SampleBatch
    inverted_noise: SampleBatch
    uncertainty_guided: SampleBatch

    def by_name(self) -> Dict[str, SampleBatch]:
        stages = {"a": self.class_guided, "b": self.inverted_noise, "c": self.uncertainty_guided}
        if self.data is not None:
            stages = {"data": self.data, **stages}
        return stages


def guided_epsilon(model: EpsilonModel,
                   classifier: Optional[PosteriorProvider],
                   x_t: np.ndarray,
                   y,
                   t: int,
                   sched: NoiseSchedule,
                   spec: GuidanceSpec) -> np.ndarray:
    """
    ε guiado.

    classifier: ε − sqrt(1 − ab_t)·s·∇ log p(y | x_t, t)
    uncertainty: ε − sqrt(1 − ab_t)·γ·∇U(x_t)

    Com modo none ou escala 0 a predição do modelo é devolvida sem alteração.

    Raises:
        NumericalError: Gradiente não finito, com t e o índice do ponto
    """
    single = np.ndim(x_t) == 1
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    eps = model.predict(x, y, t)
    if spec.inactive:
        return eps[0] if single else eps
    if classifier is None:
        raise InvalidParameterError(f"Guidance '{spec.mode.value}' exige um provider de posterior")

    source = spec.gradient_source.value
    if spec.mode is GuidanceMode.CLASSIFIER:
        grad = classifier.log_prob_grad(x, y, t, source)
    else:
        grad = classifier.entropy_grad(x, t, source)

    bad = np.nonzero(~np.all(np.isfinite(grad), axis=1))[0]
    if bad.size:
        logger.error(f"Gradiente de guidance não finito em t={t}, ponto {bad[0]}")
        raise NumericalError("Gradiente de guidance não finito", module="sampler", step=t, index=int(bad[0]))

    guided = eps - math.sqrt(1.0 - sched.alpha_bar(t)) * spec.scale * grad
    return guided[0] if single else guided


def predict_x0(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """x0 previsto: (x_t − sqrt(1 − ab_t)·ε̂) / sqrt(ab_t)."""
    alpha_bar = sched.alpha_bar(t)
    return (np.asarray(x_t) - math.sqrt(1.0 - alpha_bar) * np.asarray(eps_hat)) / math.sqrt(alpha_bar)


def ddim_transfer(x: np.ndarray, eps: np.ndarray, ab_from: float, ab_to: float) -> np.ndarray:
    """Mapa DDIM determinístico entre dois níveis de ruído."""
    x0 = (x - math.sqrt(1.0 - ab_from) * eps) / math.sqrt(ab_from)
    return math.sqrt(ab_to) * x0 + math.sqrt(1.0 - ab_to) * eps


def ddim_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """x_{t−1} a partir de x_t e ε̂ (t >= 1, ab_0 = 1)."""
    t = sched.check_step(t, lowest=1)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise InvalidParameterError(f"Dimensões incompatíveis: x_t {x_t.shape} vs ε̂ {eps_hat.shape}")
    return ddim_transfer(x_t, eps_hat, sched.alpha_bar(t), sched.alpha_bar(t - 1))


def ddim_invert_step(x_t: np.ndarray, model: EpsilonModel, y, t: int, sched: NoiseSchedule) -> np.ndarray:
    """
    x_{t+1} a partir de x_t com ε_θ(x_t, y, t) sem guidance.

    Em t = 0 o modelo é avaliado no passo 1, o primeiro nível ruidoso.
    """
    if not 0 <= int(t) <= sched.T - 1:
        raise InvalidParameterError(f"Passo de inversão {t} fora de [0, {sched.T - 1}]")
    t = int(t)
    single = np.ndim(x_t) == 1
    x = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    eps = model.predict(x, y, max(t, 1))
    out = ddim_transfer(x, eps, sched.alpha_bar(t), sched.alpha_bar(t + 1))
    return out[0] if single else out


def sample_chain(model: EpsilonModel,
                 classifier: Optional[PosteriorProvider],
                 sched: NoiseSchedule,
                 spec: GuidanceSpec,
                 y,
                 x_start: np.ndarray,
                 direction: Union[Direction, str] = Direction.GENERATE,
                 t_range: Optional[Tuple[int, int]] = None) -> Trajectory:
    """
    Executa uma cadeia completa e devolve a trajetória.

    Args:
        model: Preditor de ruído
        classifier: Provider de posterior (necessário com guidance ativo)
        sched: Schedule de ruído
        spec: Guidance da geração; na inversão é sempre none
        y: Classe alvo (escalar, um rótulo por linha ou None)
        x_start: Ponto(s) no passo inicial de t_range
        direction: "generate" (t_hi -> t_lo) ou "invert" (t_lo -> t_hi)
        t_range: (t_inicial, t_final); padrão (T, 0) ou (0, T)

    Returns:
        Trajectory com todos os pontos visitados

    Raises:
        NumericalError: Norma acima de DIVERGENCE_NORM, com o passo e o ponto
    """
    direction = Direction(direction)
    single = np.ndim(x_start) == 1
    x = np.atleast_2d(np.asarray(x_start, dtype=np.float64)).copy()

    if direction is Direction.GENERATE:
        t_from, t_to = t_range if t_range is not None else (sched.T, 0)
        if not 0 <= t_to < t_from <= sched.T:
            raise InvalidParameterError(f"Intervalo de geração inválido: {t_from} -> {t_to}")
        steps = list(range(t_from, t_to - 1, -1))
    else:
        t_from, t_to = t_range if t_range is not None else (0, sched.T)
        if not 0 <= t_from < t_to <= sched.T:
            raise InvalidParameterError(f"Intervalo de inversão inválido: {t_from} -> {t_to}")
        steps = list(range(t_from, t_to + 1))

    points = [x.copy()]
    for t in steps[:-1]:
        if direction is Direction.GENERATE:
            x = ddim_step(x, guided_epsilon(model, classifier, x, y, t, sched, spec), t, sched)
            reached = t - 1
        else:
            x = ddim_invert_step(x, model, y, t, sched)
            reached = t + 1
        _check_divergence(x, reached)
        points.append(x.copy())

    stacked = np.stack(points)
    if single:
        stacked = stacked[:, 0, :]
    return Trajectory(points=stacked, steps=np.asarray(steps), direction=direction)


def _check_divergence(x: np.ndarray, t: int) -> None:
    norms = np.linalg.norm(x, axis=1)
    bad = np.nonzero(~(norms <= settings.DIVERGENCE_NORM))[0]
    if bad.size:
        logger.error(f"Trajetória divergiu no passo {t} (ponto {bad[0]}, norma={norms[bad[0]]:.3e})")
        raise NumericalError("Trajetória divergiu", module="sampler", step=t, index=int(bad[0]))


def stage_a_noise(num_classes: int, n_per_class: int, dim: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Ruído inicial do estágio A, um stream derivado por ponto, e os rótulos alvo."""
    labels = np.repeat(np.arange(num_classes), n_per_class)
    noise = np.stack([derived_rng(seed, "ums.stage_a", i).standard_normal(dim) for i in range(labels.size)])
    return noise, labels


def run_ums_stages(model: EpsilonModel,
                   classifier: PosteriorProvider,
                   sched: NoiseSchedule,
                   n_per_class: int = settings.SAMPLES_PER_CLASS,
                   class_scale: float = settings.CLASS_GUIDANCE_SCALE,
                   uncertainty_scale: float = settings.UNCERTAINTY_GUIDANCE_SCALE,
                   seed: int = 0,
                   gradient_source: Union[GradientSource, str] = GradientSource.ANALYTIC,
                   entropy_provider: Optional[PosteriorProvider] = None,
                   reference: Optional[GaussianMixtureOracle] = None) -> UmsStages:
    """
    Pipeline UMS completo.

    A: geração guiada pelo classificador a partir de N(0, I) no passo T.
    B: inversão DDIM (sem guidance) de cada x0 até o passo T.
    C: geração guiada por incerteza a partir do ruído invertido.

    Args:
        model: Preditor de ruído
        classifier: Posterior usado na guidance
        sched: Schedule de ruído
        n_per_class: Pontos por classe
        class_scale: Escala s do estágio A
        uncertainty_scale: Escala γ do estágio C
        seed: Semente do batch
        gradient_source: "analytic" ou "finite_difference"
        entropy_provider: Posterior para as entropias em x0 (padrão: classifier)
        reference: Oráculo para o batch de dados de referência (opcional)

    Returns:
        UmsStages com os batches de cada estágio
    """
    if n_per_class < 1:
        raise InvalidParameterError(f"n_per_class deve ser >= 1, recebido {n_per_class}")
    source = GradientSource(gradient_source)
    scorer = entropy_provider or classifier
    noise, labels = stage_a_noise(classifier.num_classes, n_per_class, model.dim, seed)
    logger.info(f"UMS: {labels.size} pontos, s={class_scale}, γ={uncertainty_scale}, T={sched.T}")

    class_spec = GuidanceSpec(mode=GuidanceMode.CLASSIFIER, scale=class_scale, gradient_source=source)
    stage_a = sample_chain(model, classifier, sched, class_spec, labels, noise).endpoint
    logger.debug("UMS: estágio A concluído")

    stage_b = sample_chain(model, classifier, sched, UNGUIDED, labels, stage_a, Direction.INVERT).endpoint
    logger.debug("UMS: estágio B concluído")

    uncertainty_spec = GuidanceSpec(mode=GuidanceMode.UNCERTAINTY, scale=uncertainty_scale, gradient_source=source)
    stage_c = sample_chain(model, classifier, sched, uncertainty_spec, labels, stage_b).endpoint
    logger.debug("UMS: estágio C concluído")

    data = None
    if reference is not None:
        data = sample_data(reference, labels.size, derive_seed(seed, "ums.data"))

    return UmsStages(
        data=data,
        class_guided=SampleBatch(stage_a, labels, scorer.entropy(stage_a, 0), Stage.CLASS_GUIDED, seed),
        inverted_noise=SampleBatch(stage_b, labels, None, Stage.INVERTED_NOISE, seed),
        uncertainty_guided=SampleBatch(stage_c, labels, scorer.entropy(stage_c, 0), Stage.UNCERTAINTY_GUIDED, seed),
    )


def ums_generate(model: EpsilonModel,
                 classifier: PosteriorProvider,
                 sched: NoiseSchedule,
                 n_per_class: int = settings.SAMPLES_PER_CLASS,
                 class_scale: float = settings.CLASS_GUIDANCE_SCALE,
                 uncertainty_scale: float = settings.UNCERTAINTY_GUIDANCE_SCALE,
                 seed: int = 0,
                 gradient_source: Union[GradientSource, str] = GradientSource.ANALYTIC,
                 entropy_provider: Optional[PosteriorProvider] = None) -> SampleBatch:
    """Batch do estágio C do pipeline UMS."""
    stages = run_ums_stages(model, classifier, sched, n_per_class, class_scale, uncertainty_scale,
                            seed, gradient_source, entropy_provider)
    return stages.uncertainty_guided


def uncertainty_from_noise(model: EpsilonModel,
                           classifier: PosteriorProvider,
                           sched: NoiseSchedule,
                           n_per_class: int,
                           uncertainty_scale: float,
                           seed: int,
                           gradient_source: Union[GradientSource, str] = GradientSource.ANALYTIC,
                           entropy_provider: Optional[PosteriorProvider] = None) -> SampleBatch:
    """Variante sem inversão: guidance por incerteza direto do ruído do estágio A."""
    scorer = entropy_provider or classifier
    noise, labels = stage_a_noise(classifier.num_classes, n_per_class, model.dim, seed)
    spec = GuidanceSpec(mode=GuidanceMode.UNCERTAINTY, scale=uncertainty_scale,
                        gradient_source=GradientSource(gradient_source))
    points = sample_chain(model, classifier, sched, spec, labels, noise).endpoint
    return SampleBatch(points, labels, scorer.entropy(points, 0), Stage.UNCERTAINTY_GUIDED, seed)


def relative_error(estimate: np.ndarray, reference: np.ndarray) -> float:
    """‖a − b‖ / ‖b‖ sobre o batch inteiro (Frobenius)."""
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.linalg.norm(reference)
    if denom == 0.0:
        raise InvalidParameterError("Referência nula no erro relativo")
    return float(np.linalg.norm(np.asarray(estimate) - reference) / denom)


def roundtrip_error(model: EpsilonModel, sched: NoiseSchedule, x0: np.ndarray, y=None) -> float:
    """Erro relativo de x0 -> x_T (inversão) -> x0 (geração sem guidance)."""
    noise = sample_chain(model, None, sched, UNGUIDED, y, x0, Direction.INVERT).endpoint
    recovered = sample_chain(model, None, sched, UNGUIDED, y, noise).endpoint
    return relative_error(recovered, x0)


def write_trajectory_csv(trajectory: Trajectory, directory: Union[str, Path]) -> int:
    """
    Grava um CSV por ponto (`trajectory_{i:05d}.csv`, colunas step,x0..).

    Returns:
        Número de arquivos gravados
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    points = trajectory.points
    if points.ndim == 2:
        points = points[:, None, :]
    dim = points.shape[2]
    for i in range(points.shape[1]):
        with open(directory / f"trajectory_{i:05d}.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["step"] + [f"x{k}" for k in range(dim)])
            for step, row in zip(trajectory.steps, points[:, i, :]):
                writer.writerow([int(step)] + [format(float(v), ".17g") for v in row])
    logger.debug(f"{points.shape[1]} trajetórias gravadas em {directory}")
    return int(points.shape[1])
