"""
Operações espaciais em tensores (B, C, H, W) usadas pelo gerador guiado por
confiança: convolução, pooling, upsample bilinear e convolução transposta.
"""

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.errors import InvalidParameterError


def _check_tensor(x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise InvalidParameterError(f"{name} deve ter forma (B, C, H, W), recebido {x.shape}")
    return x


def conv2d(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Convolução stride 1 com padding zero "same" (kernel ímpar).

    Args:
        x: Tensor (B, C_in, H, W)
        weight: Kernel (C_out, C_in, k, k)
        bias: Vetor (C_out,) ou None

    Returns:
        Tensor (B, C_out, H, W)
    """
    x = _check_tensor(x)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 4 or weight.shape[1] != x.shape[1] or weight.shape[2] != weight.shape[3]:
        raise InvalidParameterError(f"Kernel {weight.shape} incompatível com entrada {x.shape}")
    k = weight.shape[2]
    if k % 2 == 0:
        raise InvalidParameterError(f"Kernel deve ter tamanho ímpar, recebido {k}")
    pad = k // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
    out = np.einsum("bchwij,ocij->bohw", windows, weight)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def conv1x1(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Mistura de canais por pixel; weight (C_out, C_in)."""
    x = _check_tensor(x)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise InvalidParameterError(f"Kernel 1×1 {weight.shape} incompatível com entrada {x.shape}")
    out = np.einsum("bchw,oc->bohw", x, weight)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def _blocks(x: np.ndarray) -> np.ndarray:
    x = _check_tensor(x)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise InvalidParameterError(f"Pooling 2×2 exige dimensões pares, recebido {h}×{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2)


def max_pool2x2(x: np.ndarray) -> np.ndarray:
    return _blocks(x).max(axis=(3, 5))


def avg_pool2x2(x: np.ndarray) -> np.ndarray:
    return _blocks(x).mean(axis=(3, 5))


def _linear_weights(size: int, scale: int):
    out = np.arange(size * scale, dtype=np.float64)
    src = np.maximum((out + 0.5) / scale - 0.5, 0.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, src - lo


def upsample_bilinear(x: np.ndarray, scale: int = 2) -> np.ndarray:
    """Upsample bilinear separável com centros de pixel alinhados (align_corners=False)."""
    x = _check_tensor(x)
    lo, hi, frac = _linear_weights(x.shape[2], scale)
    rows = x[:, :, lo, :] * (1.0 - frac)[None, None, :, None] + x[:, :, hi, :] * frac[None, None, :, None]
    lo, hi, frac = _linear_weights(x.shape[3], scale)
    return rows[:, :, :, lo] * (1.0 - frac) + rows[:, :, :, hi] * frac


def conv_transpose2x2(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Convolução transposta 2×2, stride 2: dobra as dimensões espaciais.

    weight tem forma (C_in, C_out, 2, 2).
    """
    x = _check_tensor(x)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.shape[0] != x.shape[1] or weight.shape[2:] != (2, 2):
        raise InvalidParameterError(f"Kernel transposto {weight.shape} incompatível com entrada {x.shape}")
    b, _, h, w = x.shape
    out = np.einsum("bchw,copq->bohpwq", x, weight).reshape(b, weight.shape[1], 2 * h, 2 * w)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


def flatten_spatial(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, H·W, C), tokens em ordem row-major."""
    x = _check_tensor(x)
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(0, 2, 1)


def unflatten_spatial(tokens: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverso de `flatten_spatial`."""
    b, n, c = tokens.shape
    if n != height * width:
        raise InvalidParameterError(f"{n} tokens não formam uma grade {height}×{width}")
    return tokens.transpose(0, 2, 1).reshape(b, c, height, width)
