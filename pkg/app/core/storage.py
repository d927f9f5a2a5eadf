"""
Escrita atômica de artefatos: grava num arquivo temporário do mesmo diretório
e publica com os.replace, para que leitores nunca vejam arquivos parciais.
"""

from pathlib import Path
from typing import Union
import os
import tempfile

from app.core.errors import ArtifactIOError


def atomic_write_bytes(path: Union[str, Path], payload: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise ArtifactIOError(f"Erro ao gravar {path}: {e}")
    return path


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))
