"""
Treino do denoiser (regressão de ruído) e do classificador (entropia cruzada
em entradas ruidosas) com Adam.
"""

from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple
import math

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import settings
from app.core.errors import InvalidParameterError, NumericalError
from app.core.seeding import make_rng
from app.diffusion.oracle import GaussianMixtureOracle, exact_epsilon
from app.diffusion.schedule import NoiseSchedule, q_sample
from app.networks.mlp import Mlp


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=settings.LEARNING_RATE, gt=0)
    beta1: float = Field(default=settings.ADAM_BETA1, ge=0, lt=1)
    beta2: float = Field(default=settings.ADAM_BETA2, ge=0, lt=1)
    eps: float = Field(default=settings.ADAM_EPS, gt=0)


class TrainingConfig(BaseModel):
    """
    Parâmetros de treino.

    t_min/t_max restringem os passos sorteados (padrão 1..T); `timestep_weighting`
    só aceita "uniform" (peso W = 1 em todos os passos).
    """

    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=settings.TRAINING_STEPS, ge=0)
    batch_size: int = Field(default=settings.TRAINING_BATCH_SIZE, ge=1)
    optimizer: OptimizerConfig = OptimizerConfig()
    t_min: int = Field(default=1, ge=1)
    t_max: Optional[int] = None
    label_dropout: float = Field(default=settings.LABEL_DROPOUT, ge=0, le=1)
    timestep_weighting: Literal["uniform"] = "uniform"

    @model_validator(mode="after")
    def _check_range(self):
        if self.t_max is not None and self.t_max < self.t_min:
            raise ValueError(f"t_max ({self.t_max}) < t_min ({self.t_min})")
        return self

    def step_range(self, sched: NoiseSchedule) -> Tuple[int, int]:
        t_max = sched.T if self.t_max is None else self.t_max
        if t_max > sched.T:
            raise InvalidParameterError(f"t_max {t_max} excede T={sched.T}")
        return self.t_min, t_max


class AdamOptimizer:
    """Adam clássico com momentos por camada."""

    def __init__(self, net: Mlp, config: OptimizerConfig):
        self.net = net
        self.config = config
        self.t = 0
        self._m = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]
        self._v = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]

    def step(self, grads: List[Tuple[np.ndarray, np.ndarray]]) -> None:
        cfg = self.config
        self.t += 1
        correction1 = 1.0 - cfg.beta1 ** self.t
        correction2 = 1.0 - cfg.beta2 ** self.t
        for layer, m_pair, v_pair, grad_pair in zip(self.net.layers, self._m, self._v, grads):
            for param, m, v, grad in zip((layer.weight, layer.bias), m_pair, v_pair, grad_pair):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * grad
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * grad * grad
                param -= cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)


@dataclass
class TrainingResult:
    net: Mlp
    losses: np.ndarray


def train_denoiser(net: Mlp,
                   oracle: GaussianMixtureOracle,
                   sched: NoiseSchedule,
                   config: TrainingConfig,
                   seed: int) -> TrainingResult:
    """
    Regressão de ruído: minimiza ‖ε − ε_θ(x_t, y, t)‖² com W = 1.

    Args:
        net: Rede inicial (não é modificada; o treino usa uma cópia)
        oracle: Fonte de dados rotulados
        sched: Schedule de ruído
        config: Parâmetros de treino
        seed: Semente do stream de treino

    Returns:
        TrainingResult com a rede treinada e a perda por passo

    Raises:
        NumericalError: Perda não finita, com o índice do passo
    """
    if net.output_dim != oracle.dim or net.data_dim != oracle.dim:
        raise InvalidParameterError(f"Denoiser deve mapear R^{oracle.dim} -> R^{oracle.dim}")
    if net.label_width not in (0, oracle.num_classes):
        raise InvalidParameterError("Bloco de classe do denoiser incompatível com o mundo")

    t_min, t_max = config.step_range(sched)
    trained = net.copy()
    optimizer = AdamOptimizer(trained, config.optimizer)
    rng = make_rng(seed)
    losses = np.empty(config.steps)
    n = config.batch_size

    for step in range(config.steps):
        x0, labels = oracle.draw(n, rng)
        t = rng.integers(t_min, t_max + 1, size=n)
        eps = rng.standard_normal(x0.shape)
        dropped = rng.random(n) < config.label_dropout
        labels = np.where(dropped, -1, labels)
        x_t = q_sample(x0, t, eps, sched)

        out, cache = trained.forward_with_cache(trained.embed(x_t, t, labels))
        residual = out - eps
        loss = float(np.mean(np.sum(residual * residual, axis=1)))
        if not math.isfinite(loss):
            logger.error(f"Perda não finita no treino do denoiser (passo {step})")
            raise NumericalError("Perda não finita no treino do denoiser", module="training", step=step)
        losses[step] = loss
        optimizer.step(trained.backward(cache, 2.0 * residual / n))

        if step % 500 == 0:
            logger.debug(f"Denoiser passo {step}: perda={loss:.6f}")

    if config.steps:
        logger.info(f"Denoiser treinado: {config.steps} passos, perda final={losses[-1]:.6f}")
    return TrainingResult(net=trained, losses=losses)


def train_classifier(net: Mlp,
                     oracle: GaussianMixtureOracle,
                     sched: NoiseSchedule,
                     config: TrainingConfig,
                     seed: int) -> TrainingResult:
    """
    Entropia cruzada de p_φ(y | x_t, t) sobre passos uniformes em [t_min, t_max].

    O gradiente é passado direto aos logits: (p − one_hot(y)) / n.
    """
    if not net.is_classifier or net.output_dim != oracle.num_classes:
        raise InvalidParameterError(f"Classificador deve terminar em softmax sobre {oracle.num_classes} classes")
    if net.label_width != 0:
        raise InvalidParameterError("Classificador não recebe bloco de classe")

    t_min, t_max = config.step_range(sched)
    trained = net.copy()
    optimizer = AdamOptimizer(trained, config.optimizer)
    rng = make_rng(seed)
    losses = np.empty(config.steps)
    n = config.batch_size
    rows = np.arange(n)

    for step in range(config.steps):
        x0, labels = oracle.draw(n, rng)
        t = rng.integers(t_min, t_max + 1, size=n)
        eps = rng.standard_normal(x0.shape)
        x_t = q_sample(x0, t, eps, sched)

        probs, cache = trained.forward_with_cache(trained.embed(x_t, t))
        loss = cross_entropy(probs, labels)
        if not math.isfinite(loss):
            logger.error(f"Perda não finita no treino do classificador (passo {step})")
            raise NumericalError("Perda não finita no treino do classificador", module="training", step=step)
        losses[step] = loss

        grad = probs.copy()
        grad[rows, labels] -= 1.0
        optimizer.step(trained.backward(cache, grad / n, from_logits=True))

        if step % 500 == 0:
            logger.debug(f"Classificador passo {step}: perda={loss:.6f}")

    if config.steps:
        logger.info(f"Classificador treinado: {config.steps} passos, perda final={losses[-1]:.6f}")
    return TrainingResult(net=trained, losses=losses)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, settings.ZERO_PROB_CUTOFF))))


def classifier_accuracy(net: Mlp,
                        oracle: GaussianMixtureOracle,
                        sched: NoiseSchedule,
                        n: int,
                        t: int,
                        seed: int) -> float:
    """Acurácia em dados novos do oráculo, ruidosos no passo t."""
    rng = make_rng(seed)
    x0, labels = oracle.draw(n, rng)
    x_t = q_sample(x0, t, rng.standard_normal(x0.shape), sched)
    probs = net.predict(x_t, t)
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def denoiser_error(net: Mlp,
                   oracle: GaussianMixtureOracle,
                   sched: NoiseSchedule,
                   n: int,
                   t: int,
                   seed: int) -> float:
    """Erro quadrático médio contra o ε exato do oráculo (incondicional) no passo t."""
    rng = make_rng(seed)
    x0, _ = oracle.draw(n, rng)
    x_t = q_sample(x0, t, rng.standard_normal(x0.shape), sched)
    target = exact_epsilon(oracle, sched, x_t, t)
    diff = net.predict(x_t, t) - target
    return float(np.mean(np.sum(diff * diff, axis=1)))
