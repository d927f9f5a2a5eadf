"""
Derivação de sementes a partir da semente raiz do manifest.

Toda operação estocástica recebe um stream Philox (contador) cuja chave é
sha256(semente_raiz, nome_da_operação, índice). Assim o resultado não depende
da ordem de execução nem do paralelismo.
"""

import hashlib

import numpy as np


def derive_seed(root_seed: int, name: str, index: int = 0) -> int:
    """
    Deriva uma semente de 64 bits para (operação, índice).

    Args:
        root_seed: Semente raiz do manifest
        name: Nome da operação (ex: "ums.stage_a")
        index: Índice da tarefa/ponto

    Returns:
        Semente inteira não negativa
    """
    payload = f"{int(root_seed)}:{name}:{int(index)}".encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int) -> np.random.Generator:
    """Gerador baseado em contador (Philox) para a semente dada."""
    return np.random.Generator(np.random.Philox(key=int(seed) % (2 ** 64)))


def derived_rng(root_seed: int, name: str, index: int = 0) -> np.random.Generator:
    return make_rng(derive_seed(root_seed, name, index))
