"""
SampleBatch - pontos gerados com rótulo, entropia e proveniência.
Persistido em CSV com cabeçalho `idx,label,stage,entropy,x0...x{d-1}`.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Union
import csv
import io

import numpy as np

from app.core.errors import ArtifactIOError, InvalidParameterError
from app.core.storage import atomic_write_text


class Stage(str, Enum):
    DATA = "data"
    CLASS_GUIDED = "class_guided"
    INVERTED_NOISE = "inverted_noise"
    UNCERTAINTY_GUIDED = "uncertainty_guided"


@dataclass(frozen=True)
class SampleBatch:
    points: np.ndarray
    labels: np.ndarray
    entropies: Optional[np.ndarray]
    stage: Stage
    seed: int

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != points.shape[0]:
            raise InvalidParameterError("Um rótulo por ponto é necessário")
        if not np.all(np.isfinite(points)):
            raise InvalidParameterError("Pontos do batch devem ser finitos")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "stage", Stage(self.stage))
        if self.entropies is not None:
            entropies = np.asarray(self.entropies, dtype=np.float64).reshape(-1)
            if entropies.shape[0] != points.shape[0]:
                raise InvalidParameterError("Uma entropia por ponto é necessária")
            object.__setattr__(self, "entropies", entropies)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["idx", "label", "stage", "entropy"] + [f"x{i}" for i in range(self.dim)])
        for idx in range(self.size):
            entropy = "" if self.entropies is None else _fmt(self.entropies[idx])
            writer.writerow(
                [idx, int(self.labels[idx]), self.stage.value, entropy]
                + [_fmt(value) for value in self.points[idx]]
            )
        return buffer.getvalue()

    def write_csv(self, path: Union[str, Path]) -> Path:
        return atomic_write_text(path, self.to_csv_text())

    @classmethod
    def read_csv(cls, path: Union[str, Path], seed: int = 0) -> "SampleBatch":
        """Lê um batch escrito por `write_csv`."""
        try:
            with open(path, newline="", encoding="utf-8") as handle:
                rows = list(csv.reader(handle))
        except OSError as e:
            raise ArtifactIOError(f"Erro ao ler batch {path}: {e}")

        if not rows or rows[0][:4] != ["idx", "label", "stage", "entropy"]:
            raise ArtifactIOError(f"Cabeçalho inválido em {path}")
        body = rows[1:]
        dim = len(rows[0]) - 4
        if not body:
            raise ArtifactIOError(f"Batch vazio em {path}")

        points = np.array([[float(v) for v in row[4:4 + dim]] for row in body], dtype=np.float64)
        labels = np.array([int(row[1]) for row in body], dtype=np.int64)
        stage = Stage(body[0][2])
        raw_entropies = [row[3] for row in body]
        entropies = None
        if all(raw_entropies):
            entropies = np.array([float(v) for v in raw_entropies], dtype=np.float64)
        return cls(points=points, labels=labels, entropies=entropies, stage=stage, seed=seed)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")
