"""
Hierarquia de exceções do toolkit.
Cada erro carrega o código de saída usado pela CLI.
"""

from typing import Iterable, Optional


class UMSError(Exception):
    """Erro base - todo erro do toolkit sabe seu código de saída."""

    exit_code: int = 1


class ConfigurationError(UMSError):
    """Manifest inválido ou parâmetro fora da faixa."""

    exit_code = 2


class InvalidParameterError(ConfigurationError, ValueError):
    """Parâmetro inválido passado à API numérica (forma, faixa, finitude)."""


class NumericalError(UMSError):
    """
    Falha numérica com contexto suficiente para localizar o problema.

    Args:
        message: Descrição do erro
        module: Módulo onde ocorreu (sampler, training, attention...)
        step: Passo de tempo / iteração
        index: Índice do ponto ou linha afetada
    """

    exit_code = 3

    def __init__(self,
                 message: str,
                 module: str = "",
                 step: Optional[int] = None,
                 index: Optional[int] = None):
        self.module = module
        self.step = step
        self.index = index
        context = []
        if module:
            context.append(f"módulo={module}")
        if step is not None:
            context.append(f"passo={step}")
        if index is not None:
            context.append(f"índice={index}")
        suffix = f" [{', '.join(context)}]" if context else ""
        super().__init__(f"{message}{suffix}")


class ArtifactIOError(UMSError):
    """Falha de leitura/escrita de artefatos."""

    exit_code = 4


class MissingInputsError(ArtifactIOError):
    """Arquivos de entrada ausentes - lista todos de uma vez."""

    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(str(path) for path in missing)
        listing = "\n  ".join(self.missing)
        super().__init__(f"Arquivos de entrada ausentes:\n  {listing}")
