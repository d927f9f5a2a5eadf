"""
Interfaces de preditor de ruído e de posterior de classes, com backends
oráculo (exato) e rede (MLP treinada), e a factory que os registra.
"""

from abc import ABC, abstractmethod
from typing import Callable, Dict, Type
import math
import threading

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.errors import ConfigurationError, InvalidParameterError
from app.diffusion.oracle import GaussianMixtureOracle, PosteriorReport, marginal_at
from app.diffusion.schedule import NoiseSchedule
from app.networks.mlp import Mlp


class MarginalCache:
    """Marginais difundidos do oráculo por passo, seguros para leitura concorrente."""

    def __init__(self, oracle: GaussianMixtureOracle, sched: NoiseSchedule):
        self.oracle = oracle
        self.sched = sched
        self._cache: Dict[int, GaussianMixtureOracle] = {}
        self._lock = threading.Lock()

    def at(self, t: int) -> GaussianMixtureOracle:
        t = self.sched.check_step(t)
        with self._lock:
            if t not in self._cache:
                self._cache[t] = marginal_at(self.oracle, self.sched, t)
            return self._cache[t]


class EpsilonModel(ABC):
    """
    Preditor de ruído ε(x_t, y, t).

    Implementações são determinísticas e podem ser avaliadas em paralelo.
    """

    def __init__(self, sched: NoiseSchedule, dim: int):
        self.sched = sched
        self.dim = dim

    @abstractmethod
    def predict(self, x: np.ndarray, y, t: int) -> np.ndarray:
        """Ruído previsto para pontos (n, d); y pode ser None, escalar ou um rótulo por linha."""
        pass


class OracleEpsilonModel(EpsilonModel):
    """ε exato do oráculo: −sqrt(1 − ab_t)·score_t (condicional à classe se pedido)."""

    def __init__(self, oracle: GaussianMixtureOracle, sched: NoiseSchedule, conditional: bool = False):
        super().__init__(sched, oracle.dim)
        self.oracle = oracle
        self.conditional = conditional
        self.marginals = MarginalCache(oracle, sched)

    def predict(self, x: np.ndarray, y, t: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        marginal = self.marginals.at(t)
        scale = math.sqrt(1.0 - self.sched.alpha_bar(t))
        if not self.conditional or y is None:
            return -scale * marginal.score(x)

        y = np.broadcast_to(np.asarray(y, dtype=np.int64), (x.shape[0],))
        unconditional = marginal.score(x)
        class_scores = marginal.class_scores(x)
        rows = np.arange(x.shape[0])
        chosen = np.where((y >= 0)[:, None], class_scores[rows, np.maximum(y, 0)], unconditional)
        return -scale * chosen


class NetworkEpsilonModel(EpsilonModel):
    """ε previsto por um denoiser MLP treinado."""

    def __init__(self, net: Mlp, sched: NoiseSchedule):
        if net.output_dim != net.data_dim:
            raise InvalidParameterError("Denoiser deve ter saída de mesma dimensão da entrada")
        super().__init__(sched, net.data_dim)
        self.net = net

    def predict(self, x: np.ndarray, y, t: int) -> np.ndarray:
        t = self.sched.check_step(t)
        return self.net.predict(np.atleast_2d(x), t, y)


class PosteriorProvider(ABC):
    """
    Posterior de classes p(y | x_t, t) e gradientes de log p(y|x) e da entropia.

    Os gradientes por diferenças centrais são genéricos; backends com forma
    fechada sobrescrevem os métodos analíticos.
    """

    def __init__(self, sched: NoiseSchedule, dim: int, num_classes: int):
        self.sched = sched
        self.dim = dim
        self.num_classes = num_classes

    @abstractmethod
    def probs(self, x: np.ndarray, t: int) -> np.ndarray:
        """Probabilidades por classe, forma (n, C)."""
        pass

    def entropy(self, x: np.ndarray, t: int) -> np.ndarray:
        return _entropy(self.probs(np.atleast_2d(x), t))

    def posterior(self, x: np.ndarray, t: int, gradient_source: str = "finite_difference") -> PosteriorReport:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        probs = self.probs(x, t)
        return PosteriorReport(
            probs=probs,
            entropy=_entropy(probs),
            entropy_grad=self.entropy_grad(x, t, gradient_source),
        )

    def log_prob_grad(self, x: np.ndarray, y, t: int, gradient_source: str = "finite_difference") -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.broadcast_to(np.asarray(y, dtype=np.int64), (x.shape[0],))
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise InvalidParameterError(f"Classe alvo fora de [0, {self.num_classes - 1}]")
        if gradient_source == "analytic":
            return self.analytic_log_prob_grad(x, y, t)

        def log_prob(points: np.ndarray, rows: np.ndarray) -> np.ndarray:
            p = self.probs(points, t)[np.arange(points.shape[0]), y[rows]]
            return np.log(np.maximum(p, settings.ZERO_PROB_CUTOFF))

        return finite_difference_gradient(log_prob, x)

    def entropy_grad(self, x: np.ndarray, t: int, gradient_source: str = "finite_difference") -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if gradient_source == "analytic":
            return self.analytic_entropy_grad(x, t)
        return finite_difference_gradient(lambda points, rows: self.entropy(points, t), x)

    def analytic_log_prob_grad(self, x: np.ndarray, y: np.ndarray, t: int) -> np.ndarray:
        raise ConfigurationError(f"{type(self).__name__} não oferece gradientes analíticos")

    def analytic_entropy_grad(self, x: np.ndarray, t: int) -> np.ndarray:
        raise ConfigurationError(f"{type(self).__name__} não oferece gradientes analíticos")


class OraclePosteriorProvider(PosteriorProvider):
    def __init__(self, oracle: GaussianMixtureOracle, sched: NoiseSchedule):
        super().__init__(sched, oracle.dim, oracle.num_classes)
        self.oracle = oracle
        self.marginals = MarginalCache(oracle, sched)

    def probs(self, x: np.ndarray, t: int) -> np.ndarray:
        return np.exp(self.marginals.at(t).class_log_probs(np.atleast_2d(x)))

    def analytic_log_prob_grad(self, x: np.ndarray, y: np.ndarray, t: int) -> np.ndarray:
        return self.marginals.at(t).log_prob_grad(x, y)

    def analytic_entropy_grad(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.marginals.at(t).posterior(x).entropy_grad


class NetworkPosteriorProvider(PosteriorProvider):
    """Classificador MLP; passos abaixo de 1 são avaliados em t = 1."""

    def __init__(self, net: Mlp, sched: NoiseSchedule):
        if not net.is_classifier:
            raise InvalidParameterError("Provider de rede exige um classificador com softmax final")
        super().__init__(sched, net.data_dim, net.output_dim)
        self.net = net

    def probs(self, x: np.ndarray, t: int) -> np.ndarray:
        t = max(1, self.sched.check_step(t))
        return self.net.predict(np.atleast_2d(x), t)


def finite_difference_gradient(fn: Callable[[np.ndarray, np.ndarray], np.ndarray], x: np.ndarray) -> np.ndarray:
    """
    Gradiente por diferenças centrais de uma função escalar por linha.

    Todas as perturbações (2·n·d linhas) são avaliadas num único batch. O passo
    de cada coordenada é FD_RELATIVE_STEP·max(1, |x_i|).

    Args:
        fn: (pontos (m, d), linha de origem (m,)) -> valores (m,)
        x: Pontos (n, d)

    Returns:
        Gradientes (n, d)
    """
    n, d = x.shape
    steps = settings.FD_RELATIVE_STEP * np.maximum(1.0, np.abs(x))
    offsets = np.zeros((n, d, d))
    offsets[:, np.arange(d), np.arange(d)] = steps
    plus = (x[:, None, :] + offsets).reshape(n * d, d)
    minus = (x[:, None, :] - offsets).reshape(n * d, d)
    rows = np.repeat(np.arange(n), d)

    values = fn(np.concatenate([plus, minus]), np.concatenate([rows, rows]))
    f_plus = values[: n * d].reshape(n, d)
    f_minus = values[n * d:].reshape(n, d)
    return (f_plus - f_minus) / (2.0 * steps)


def _entropy(probs: np.ndarray) -> np.ndarray:
    alive = probs >= settings.ZERO_PROB_CUTOFF
    logs = np.log(np.where(alive, probs, 1.0))
    return np.maximum(-np.sum(np.where(alive, probs * logs, 0.0), axis=1), 0.0)


class ModelFactory:
    """
    Registro dos backends de preditor de ruído e de posterior.
    """

    _models: Dict[str, Type[EpsilonModel]] = {
        "oracle": OracleEpsilonModel,
        "network": NetworkEpsilonModel,
    }
    _providers: Dict[str, Type[PosteriorProvider]] = {
        "oracle": OraclePosteriorProvider,
        "network": NetworkPosteriorProvider,
    }

    @classmethod
    def create_model(cls, backend: str, **kwargs) -> EpsilonModel:
        """
        Cria o preditor de ruído do backend.

        Args:
            backend: 'oracle' ou 'network'
            **kwargs: Argumentos do construtor (oracle/net, sched, ...)

        Raises:
            ConfigurationError: Se o backend não for suportado
        """
        if backend not in cls._models:
            raise ConfigurationError(f"Backend de modelo não suportado: {backend}")
        logger.debug(f"Criando modelo '{backend}'")
        return cls._models[backend](**kwargs)

    @classmethod
    def create_provider(cls, backend: str, **kwargs) -> PosteriorProvider:
        if backend not in cls._providers:
            raise ConfigurationError(f"Backend de posterior não suportado: {backend}")
        return cls._providers[backend](**kwargs)

    @classmethod
    def get_available_backends(cls) -> list:
        """Retorna lista dos backends disponíveis."""
        return list(cls._models.keys())

    @classmethod
    def register_backend(cls, name: str, model_class: Type[EpsilonModel], provider_class: Type[PosteriorProvider]):
        """Registra um novo backend."""
        cls._models[name] = model_class
        cls._providers[name] = provider_class
