"""
Atenção por produto escalar e atenção multi-cabeça em numpy.
"""

from dataclasses import dataclass
from typing import Tuple, Union
import math

import numpy as np
from loguru import logger

from app.core.errors import InvalidParameterError, NumericalError
from app.core.seeding import make_rng


@dataclass(frozen=True)
class AttentionProjections:
    """Projeções W_q, W_k, W_v, W_o, todas (E, E)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    @property
    def width(self) -> int:
        return int(self.w_q.shape[0])

    @classmethod
    def identity(cls, width: int) -> "AttentionProjections":
        eye = np.eye(width)
        return cls(eye, eye, eye, eye)

    @classmethod
    def random(cls, width: int, seed: int) -> "AttentionProjections":
        rng = make_rng(seed)
        scale = 1.0 / math.sqrt(width)
        return cls(*(rng.normal(0.0, scale, (width, width)) for _ in range(4)))


def attention(q: np.ndarray,
              k: np.ndarray,
              v: np.ndarray,
              return_weights: bool = False) -> Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """
    softmax(q·kᵀ / sqrt(d_k))·v por item do batch.

    Args:
        q: (B, N_q, d_k)
        k: (B, N, d_k)
        v: (B, N, d_v)
        return_weights: Também devolve os pesos (B, N_q, N)

    Raises:
        NumericalError: Logits não finitos, com o índice da linha
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise InvalidParameterError("q, k, v devem ter forma (B, N, d)")
    if q.shape[0] != k.shape[0] or k.shape[0] != v.shape[0]:
        raise InvalidParameterError("Tamanho de batch inconsistente entre q, k, v")
    if q.shape[2] != k.shape[2]:
        raise InvalidParameterError(f"d_k de q ({q.shape[2]}) difere de k ({k.shape[2]})")
    if k.shape[1] != v.shape[1]:
        raise InvalidParameterError(f"N de k ({k.shape[1]}) difere de v ({v.shape[1]})")

    logits = np.einsum("bnd,bmd->bnm", q, k) / math.sqrt(q.shape[2])
    finite_rows = np.all(np.isfinite(logits), axis=2)
    if not np.all(finite_rows):
        batch, row = np.argwhere(~finite_rows)[0]
        logger.error(f"Logits de atenção não finitos (batch {batch}, linha {row})")
        raise NumericalError("Logits de atenção não finitos", module="attention", index=int(row))

    shifted = np.exp(logits - logits.max(axis=2, keepdims=True))
    weights = shifted / shifted.sum(axis=2, keepdims=True)
    out = weights @ v
    return (out, weights) if return_weights else out


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(B, N, E) -> (B·h, N, E/h)."""
    b, n, e = x.shape
    return x.reshape(b, n, heads, e // heads).transpose(0, 2, 1, 3).reshape(b * heads, n, e // heads)


def merge_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(B·h, N, d) -> (B, N, h·d)."""
    bh, n, d = x.shape
    return x.reshape(bh // heads, heads, n, d).transpose(0, 2, 1, 3).reshape(bh // heads, n, heads * d)


def multi_head_attention(Q: np.ndarray,
                         K: np.ndarray,
                         V: np.ndarray,
                         heads: int,
                         projections: AttentionProjections,
                         return_weights: bool = False):
    """
    Atenção multi-cabeça: projeta, divide E em h cabeças, aplica atenção por
    cabeça, concatena e aplica W_o.

    Returns:
        Tensor (B, N_q, E), e os pesos (B, h, N_q, N) quando `return_weights`
    """
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    width = Q.shape[-1]
    if heads < 1 or width % heads:
        raise InvalidParameterError(f"E={width} não é divisível por {heads} cabeças")
    if K.shape[-1] != width or V.shape[-1] != width or projections.width != width:
        raise InvalidParameterError("Q, K, V e projeções devem compartilhar a largura E")

    q = split_heads(Q @ projections.w_q, heads)
    k = split_heads(K @ projections.w_k, heads)
    v = split_heads(V @ projections.w_v, heads)
    out, weights = attention(q, k, v, return_weights=True)
    result = merge_heads(out, heads) @ projections.w_o
    if return_weights:
        return result, weights.reshape(Q.shape[0], heads, weights.shape[1], weights.shape[2])
    return result
