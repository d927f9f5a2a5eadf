"""
Escrita de artefatos (CSV, JSON, dados de plot) e o log da execução.
"""

from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union
import csv
import io
import json

from loguru import logger

from app.core.config import settings
from app.core.errors import ArtifactIOError
from app.core.storage import atomic_write_text

TRACKED_PACKAGES = ("numpy", "scipy", "pydantic", "pydantic-settings", "loguru")


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return atomic_write_text(path, buffer.getvalue())


def read_csv_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            return list(csv.DictReader(handle))
    except OSError as e:
        raise ArtifactIOError(f"Erro ao ler {path}: {e}")


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_dat(path: Union[str, Path], columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Dados separados por espaço, compatíveis com gnuplot; cabeçalho em comentário."""
    lines = ["# " + " ".join(columns)]
    for row in rows:
        lines.append(" ".join(_fmt(v) for v in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def library_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "desconhecida"
    return versions


def attach_run_log(directory: Union[str, Path]) -> int:
    """
    Adiciona o sink `run.log` no diretório de saída.

    É o único artefato com timestamps.

    Returns:
        Id do handler (para logger.remove)
    """
    path = Path(directory) / settings.RUN_LOG_NAME
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"Diretório de saída inválido {directory}: {e}")
    return logger.add(path, level="INFO", encoding="utf-8",
                      format="{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {message}")
