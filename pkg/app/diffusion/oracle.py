"""
Oráculo de mistura gaussiana com score, posterior, entropia e gradiente da
entropia em forma fechada. É a referência exata para todas as fórmulas de
guidance.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence
import math

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict
from scipy.linalg import cholesky, LinAlgError, solve_triangular
from scipy.special import logsumexp

from app.core.config import settings
from app.core.errors import InvalidParameterError
from app.core.seeding import make_rng
from app.diffusion.batch import SampleBatch, Stage
from app.diffusion.schedule import NoiseSchedule


class MixtureComponent(BaseModel):
    """Componente serializável do manifest."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mean: List[float]
    covariance: List[List[float]]
    label: int
    weight: float


@dataclass(frozen=True)
class PosteriorReport:
    probs: np.ndarray
    entropy: np.ndarray
    entropy_grad: np.ndarray


class GaussianMixtureOracle:
    """
    Mistura gaussiana imutável com fatores de Cholesky em cache.

    Todas as consultas aceitam um vetor d ou uma matriz n × d e devolvem
    resultados com a mesma convenção.
    """

    def __init__(self,
                 means: np.ndarray,
                 covariances: np.ndarray,
                 labels: Sequence[int],
                 weights: Sequence[float]):
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        covariances = np.asarray(covariances, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)

        k, d = means.shape
        if covariances.shape != (k, d, d):
            raise InvalidParameterError(f"Covariâncias devem ter forma {(k, d, d)}")
        if labels.shape != (k,) or weights.shape != (k,):
            raise InvalidParameterError("Um rótulo e um peso por componente")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidParameterError(f"Pesos devem ser >= 0 e somar 1 (soma={weights.sum()!r})")
        classes = np.unique(labels)
        if classes[0] != 0 or not np.array_equal(classes, np.arange(classes.size)):
            raise InvalidParameterError(f"Rótulos devem cobrir 0..C-1, recebido {classes.tolist()}")
        if not np.allclose(covariances, np.swapaxes(covariances, 1, 2), rtol=0, atol=1e-12):
            raise InvalidParameterError("Covariâncias devem ser simétricas")

        chol = np.empty_like(covariances)
        for i, cov in enumerate(covariances):
            try:
                chol[i] = cholesky(cov, lower=True)
            except LinAlgError:
                raise InvalidParameterError(f"Covariância do componente {i} não é definida positiva")

        self.means = means
        self.covariances = covariances
        self.labels = labels
        self.weights = weights
        self.dim = d
        self.num_classes = int(classes.size)
        self._chol = chol
        self._log_dets = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        self._precisions = np.array([np.linalg.inv(cov) for cov in covariances])
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(weights)
        for array in (self.means, self.covariances, self.labels, self.weights):
            array.flags.writeable = False

    # ------------------------------------------------------------------
    # Construção / serialização
    # ------------------------------------------------------------------

    @classmethod
    def from_components(cls, components: Sequence[MixtureComponent]) -> "GaussianMixtureOracle":
        if not components:
            raise InvalidParameterError("A mistura precisa de ao menos um componente")
        return cls(
            means=[c.mean for c in components],
            covariances=[c.covariance for c in components],
            labels=[c.label for c in components],
            weights=[c.weight for c in components],
        )

    def to_components(self) -> List[MixtureComponent]:
        return [
            MixtureComponent(
                mean=self.means[k].tolist(),
                covariance=self.covariances[k].tolist(),
                label=int(self.labels[k]),
                weight=float(self.weights[k]),
            )
            for k in range(len(self.weights))
        ]

    # ------------------------------------------------------------------
    # Densidade e responsabilidades (log-sum-exp)
    # ------------------------------------------------------------------

    def _component_log_joint(self, x: np.ndarray) -> np.ndarray:
        """log w_k + log N(x; mu_k, Sigma_k), forma (n, K)."""
        n = x.shape[0]
        out = np.empty((n, len(self.weights)))
        const = self.dim * math.log(2.0 * math.pi)
        for k in range(len(self.weights)):
            z = solve_triangular(self._chol[k], (x - self.means[k]).T, lower=True)
            out[:, k] = self._log_weights[k] - 0.5 * (const + self._log_dets[k] + np.sum(z * z, axis=0))
        return out

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x2, single = _as_rows(x, self.dim)
        result = logsumexp(self._component_log_joint(x2), axis=1)
        return result[0] if single else result

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        x2, single = _as_rows(x, self.dim)
        log_joint = self._component_log_joint(x2)
        resp = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
        return resp[0] if single else resp

    def _component_scores(self, x: np.ndarray) -> np.ndarray:
        """Sigma_k^{-1}(mu_k − x), forma (n, K, d)."""
        diff = self.means[None, :, :] - x[:, None, :]
        return np.einsum("kij,nkj->nki", self._precisions, diff)

    def class_log_probs(self, x: np.ndarray) -> np.ndarray:
        x2, single = _as_rows(x, self.dim)
        log_joint = self._component_log_joint(x2)
        total = logsumexp(log_joint, axis=1)
        result = np.stack(
            [logsumexp(log_joint[:, self.labels == c], axis=1) - total for c in range(self.num_classes)],
            axis=1,
        )
        return result[0] if single else result

    # ------------------------------------------------------------------
    # Scores
    # ------------------------------------------------------------------

    def score(self, x: np.ndarray) -> np.ndarray:
        """∇_x log p(x) = sum_k r_k(x)·Sigma_k^{-1}(mu_k − x)."""
        x2, single = _as_rows(x, self.dim)
        resp = self.responsibilities(x2)
        result = np.einsum("nk,nki->ni", resp, self._component_scores(x2))
        return result[0] if single else result

    def class_scores(self, x: np.ndarray) -> np.ndarray:
        """Score condicional de cada classe, forma (n, C, d)."""
        x2, single = _as_rows(x, self.dim)
        log_joint = self._component_log_joint(x2)
        component_scores = self._component_scores(x2)
        result = np.empty((x2.shape[0], self.num_classes, self.dim))
        for c in range(self.num_classes):
            mask = self.labels == c
            sub = log_joint[:, mask]
            resp = np.exp(sub - logsumexp(sub, axis=1, keepdims=True))
            # classe com peso total zero: resp vira NaN e o score fica indefinido
            resp = np.nan_to_num(resp)
            result[:, c, :] = np.einsum("nk,nki->ni", resp, component_scores[:, mask, :])
        return result[0] if single else result

    def log_prob_grad(self, x: np.ndarray, y) -> np.ndarray:
        """∇_x log p(y|x) = s_y(x) − s(x)."""
        x2, single = _as_rows(x, self.dim)
        y = np.broadcast_to(np.asarray(y, dtype=np.int64), (x2.shape[0],))
        rows = np.arange(x2.shape[0])
        result = self.class_scores(x2)[rows, y, :] - self.score(x2)
        return result[0] if single else result

    # ------------------------------------------------------------------
    # Posterior e entropia
    # ------------------------------------------------------------------

    def posterior(self, x: np.ndarray) -> PosteriorReport:
        """
        Probabilidades por classe, entropia U e ∇U analítico.

        ∇p_c = p_c·(s_c − s) e ∇U = −sum_c (1 + ln p_c)·∇p_c; termos com
        p_c abaixo de ZERO_PROB_CUTOFF contribuem 0.
        """
        x2, single = _as_rows(x, self.dim)
        log_probs = self.class_log_probs(x2)
        probs = np.exp(log_probs)
        alive = probs >= settings.ZERO_PROB_CUTOFF
        safe_log = np.where(alive, log_probs, 0.0)

        entropy = -np.sum(np.where(alive, probs * safe_log, 0.0), axis=1)
        entropy = np.clip(entropy, 0.0, math.log(self.num_classes)) if self.num_classes > 1 else np.zeros_like(entropy)

        diff = self.class_scores(x2) - self.score(x2)[:, None, :]
        grad_p = probs[:, :, None] * diff
        weight = np.where(alive, 1.0 + safe_log, 0.0)
        entropy_grad = -np.einsum("nc,nci->ni", weight, grad_p)

        if single:
            return PosteriorReport(probs=probs[0], entropy=entropy[0], entropy_grad=entropy_grad[0])
        return PosteriorReport(probs=probs, entropy=entropy, entropy_grad=entropy_grad)

    # ------------------------------------------------------------------
    # Amostragem
    # ------------------------------------------------------------------

    def draw(self, n: int, rng: np.random.Generator):
        """Amostras i.i.d. e rótulos com um gerador fornecido."""
        components = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        points = self.means[components] + np.einsum("nij,nj->ni", self._chol[components], z)
        return points, self.labels[components].copy()

    def __repr__(self) -> str:
        return f"GaussianMixtureOracle(dim={self.dim}, components={len(self.weights)}, classes={self.num_classes})"


def marginal_at(oracle: GaussianMixtureOracle, sched: NoiseSchedule, t: int) -> GaussianMixtureOracle:
    """Marginal difundido: médias sqrt(ab)·mu, covariâncias ab·Sigma + (1 − ab)·I."""
    alpha_bar = sched.alpha_bar(t)
    if alpha_bar == 1.0:
        return oracle
    eye = np.eye(oracle.dim)
    return GaussianMixtureOracle(
        means=math.sqrt(alpha_bar) * oracle.means,
        covariances=alpha_bar * oracle.covariances + (1.0 - alpha_bar) * eye[None, :, :],
        labels=oracle.labels,
        weights=oracle.weights,
    )


def score(oracle_t: GaussianMixtureOracle, x: np.ndarray) -> np.ndarray:
    return oracle_t.score(x)


def posterior(oracle_t: GaussianMixtureOracle, x: np.ndarray) -> PosteriorReport:
    return oracle_t.posterior(x)


def exact_epsilon(oracle: GaussianMixtureOracle,
                  sched: NoiseSchedule,
                  x_t: np.ndarray,
                  t: int,
                  marginal: Optional[GaussianMixtureOracle] = None) -> np.ndarray:
    """
    Preditor de ruído exato: eps = −sqrt(1 − ab_t)·score_t(x_t).

    `marginal` permite reaproveitar um marginal já construído para o passo t.
    """
    alpha_bar = sched.alpha_bar(t)
    if marginal is None:
        marginal = marginal_at(oracle, sched, t)
    return -math.sqrt(1.0 - alpha_bar) * marginal.score(x_t)


def sample_data(oracle: GaussianMixtureOracle, n: int, seed: int) -> SampleBatch:
    """Amostras i.i.d. determinísticas para a semente, com entropia do posterior."""
    if n < 1:
        raise InvalidParameterError(f"n deve ser >= 1, recebido {n}")
    points, labels = oracle.draw(n, make_rng(seed))
    entropies = oracle.posterior(points).entropy
    logger.debug(f"Amostradas {n} observações do oráculo (seed={seed})")
    return SampleBatch(points=points, labels=labels, entropies=entropies, stage=Stage.DATA, seed=seed)


def default_world(radius: float = 4.0, num_classes: int = 3) -> GaussianMixtureOracle:
    """Mundo de verificação: classes gaussianas unitárias espaçadas em círculo."""
    angles = 2.0 * math.pi * np.arange(num_classes) / num_classes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GaussianMixtureOracle(
        means=means,
        covariances=np.repeat(np.eye(2)[None, :, :], num_classes, axis=0),
        labels=np.arange(num_classes),
        weights=np.full(num_classes, 1.0 / num_classes),
    )


def symmetric_two_class_world(offset: float = 2.0) -> GaussianMixtureOracle:
    return GaussianMixtureOracle(
        means=[[-offset, 0.0], [offset, 0.0]],
        covariances=[np.eye(2), np.eye(2)],
        labels=[0, 1],
        weights=[0.5, 0.5],
    )


def single_gaussian_world(mean: Sequence[float] = (0.0, 0.0), covariance=None) -> GaussianMixtureOracle:
    mean = np.asarray(mean, dtype=np.float64)
    covariance = np.eye(mean.size) if covariance is None else np.asarray(covariance, dtype=np.float64)
    return GaussianMixtureOracle(means=[mean], covariances=[covariance], labels=[0], weights=[1.0])


def _as_rows(x: np.ndarray, dim: int):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise InvalidParameterError(f"Esperado vetor(es) de dimensão {dim}, recebido {x.shape}")
    return x2, single
