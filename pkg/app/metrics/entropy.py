"""
Estatísticas de entropia de batches e intervalos bootstrap da média.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import InvalidParameterError
from app.core.seeding import make_rng
from app.diffusion.batch import SampleBatch


@dataclass(frozen=True)
class EntropyStats:
    count: int
    mean: float
    std: float
    deciles: List[float]


@dataclass(frozen=True)
class EntropyComparison:
    baseline_mean: float
    candidate_mean: float
    baseline_interval: Tuple[float, float]
    candidate_interval: Tuple[float, float]

    @property
    def lifted(self) -> bool:
        """Intervalo do candidato inteiramente acima do da linha de base."""
        return self.candidate_interval[0] > self.baseline_interval[1]


def batch_entropy_stats(batch: SampleBatch) -> EntropyStats:
    """
    Média, desvio padrão (populacional) e os 9 decis das entropias.

    Raises:
        InvalidParameterError: Batch vazio ou sem entropias
    """
    if batch.entropies is None:
        raise InvalidParameterError(f"Batch do estágio {batch.stage.value} não tem entropias")
    values = batch.entropies
    if values.size == 0:
        raise InvalidParameterError("Batch vazio")
    deciles = np.percentile(values, np.arange(10, 100, 10))
    return EntropyStats(
        count=int(values.size),
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        deciles=[float(d) for d in deciles],
    )


def bootstrap_mean_interval(values: np.ndarray,
                            level: float = settings.BOOTSTRAP_LEVEL,
                            n_resamples: int = settings.BOOTSTRAP_RESAMPLES,
                            seed: int = 0) -> Tuple[float, float]:
    """Intervalo percentil bootstrap da média."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise InvalidParameterError("Bootstrap exige ao menos um valor")
    if not 0.0 < level < 1.0 or n_resamples < 1:
        raise InvalidParameterError(f"Parâmetros de bootstrap inválidos (level={level}, n={n_resamples})")
    idx = make_rng(seed).integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)


def compare_entropy(baseline: SampleBatch,
                    candidate: SampleBatch,
                    level: float = settings.BOOTSTRAP_LEVEL,
                    n_resamples: int = settings.BOOTSTRAP_RESAMPLES,
                    seed: int = 0) -> EntropyComparison:
    base = batch_entropy_stats(baseline)
    cand = batch_entropy_stats(candidate)
    return EntropyComparison(
        baseline_mean=base.mean,
        candidate_mean=cand.mean,
        baseline_interval=bootstrap_mean_interval(baseline.entropies, level, n_resamples, seed),
        candidate_interval=bootstrap_mean_interval(candidate.entropies, level, n_resamples, seed + 1),
    )
