"""
MLP com backpropagation manual, embedding senoidal de tempo e one-hot de classe.

Serve tanto como denoiser (saída d, entrada com bloco de classe) quanto como
classificador (saída softmax sobre C classes, sem bloco de classe).
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import copy
import math

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.errors import InvalidParameterError
from app.core.seeding import make_rng

ACTIVATIONS = ("identity", "relu", "tanh", "softmax")


@dataclass
class DenseLayer:
    """Camada afim: weight (in, out), bias (out,), ativação."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise InvalidParameterError(f"Ativação não suportada: {self.activation}")
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[1]:
            raise InvalidParameterError(
                f"Camada inconsistente: weight {self.weight.shape}, bias {self.bias.shape}"
            )

    @property
    def input_dim(self) -> int:
        return int(self.weight.shape[0])

    @property
    def output_dim(self) -> int:
        return int(self.weight.shape[1])

    def forward(self, inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Retorna (pré-ativação, ativação)."""
        z = inputs @ self.weight + self.bias
        return z, _activate(z, self.activation)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    return z


def _activation_backward(grad: np.ndarray, z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return grad * (z > 0.0)
    if activation == "tanh":
        return grad * (1.0 - a * a)
    if activation == "softmax":
        # JVP da softmax: a ⊙ (g − <g, a>)
        return a * (grad - np.sum(grad * a, axis=1, keepdims=True))
    return grad


def time_embedding(t: np.ndarray, width: int) -> np.ndarray:
    """
    Embedding senoidal [sin(t·f_k), cos(t·f_k)], f_k = exp(−ln(10000)·k/(width/2)).

    Args:
        t: Passos por linha, forma (n,)
        width: Largura par do embedding

    Returns:
        Matriz (n, width)
    """
    if width % 2:
        raise InvalidParameterError(f"Largura do embedding de tempo deve ser par, recebido {width}")
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = t * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def one_hot_labels(y, n: int, width: int) -> np.ndarray:
    """One-hot por linha; rótulo None ou −1 gera um bloco nulo (incondicional)."""
    block = np.zeros((n, width))
    if width == 0 or y is None:
        return block
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    if np.any(y >= width) or np.any(y < -1):
        raise InvalidParameterError(f"Rótulo fora de [−1, {width - 1}]")
    rows = np.nonzero(y >= 0)[0]
    block[rows, y[rows]] = 1.0
    return block


class Mlp:
    """
    Pilha de DenseLayer com entrada [x, emb(t), one_hot(y)].

    Args:
        layers: Camadas encadeadas
        data_dim: Dimensão d dos pontos
        label_width: Largura do bloco one-hot (0 para classificadores)
        time_embed_width: Largura do embedding de tempo
    """

    def __init__(self,
                 layers: Sequence[DenseLayer],
                 data_dim: int,
                 label_width: int,
                 time_embed_width: int = settings.TIME_EMBED_WIDTH):
        layers = list(layers)
        if not layers:
            raise InvalidParameterError("A rede precisa de ao menos uma camada")
        expected = data_dim + time_embed_width + label_width
        if layers[0].input_dim != expected:
            raise InvalidParameterError(
                f"Primeira camada espera {layers[0].input_dim} entradas, embedding gera {expected}"
            )
        for i, (prev, nxt) in enumerate(zip(layers, layers[1:])):
            if prev.output_dim != nxt.input_dim:
                raise InvalidParameterError(f"Camadas {i} e {i + 1} não encadeiam")
            if prev.activation == "softmax":
                raise InvalidParameterError("Softmax só é permitida na última camada")

        self.layers = layers
        self.data_dim = int(data_dim)
        self.label_width = int(label_width)
        self.time_embed_width = int(time_embed_width)

    @classmethod
    def create(cls,
               data_dim: int,
               label_width: int,
               output_dim: int,
               hidden: Sequence[int] = tuple(settings.HIDDEN_WIDTHS),
               activation: str = "tanh",
               final_activation: str = "identity",
               seed: int = 0,
               zero_last: bool = False,
               time_embed_width: int = settings.TIME_EMBED_WIDTH) -> "Mlp":
        """
        Inicialização uniforme com limite 1/sqrt(fan_in) e bias nulo.

        `zero_last` zera a última camada; com softmax final a predição inicial
        é uniforme.
        """
        rng = make_rng(seed)
        widths = [data_dim + time_embed_width + label_width, *hidden, output_dim]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            last = i == len(widths) - 2
            limit = 1.0 / math.sqrt(fan_in)
            weight = np.zeros((fan_in, fan_out)) if (last and zero_last) else rng.uniform(-limit, limit, (fan_in, fan_out))
            layers.append(DenseLayer(weight, np.zeros(fan_out), final_activation if last else activation))
        return cls(layers, data_dim, label_width, time_embed_width)

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    @property
    def is_classifier(self) -> bool:
        return self.layers[-1].activation == "softmax"

    def embed(self, x: np.ndarray, t, y=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.data_dim:
            raise InvalidParameterError(f"Esperado dimensão {self.data_dim}, recebido {x.shape[1]}")
        n = x.shape[0]
        steps = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        return np.concatenate(
            [x, time_embedding(steps, self.time_embed_width), one_hot_labels(y, n, self.label_width)],
            axis=1,
        )

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        out = inputs
        for layer in self.layers:
            _, out = layer.forward(out)
        return out

    def forward_with_cache(self, inputs: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
        cache = []
        out = inputs
        for layer in self.layers:
            z, a = layer.forward(out)
            cache.append((out, z, a))
            out = a
        return out, cache

    def backward(self,
                 cache: List[Tuple[np.ndarray, np.ndarray, np.ndarray]],
                 grad_output: np.ndarray,
                 from_logits: bool = False) -> List[Tuple[np.ndarray, np.ndarray]]:
        """
        Gradientes (dW, db) de cada camada.

        Args:
            cache: Saída de `forward_with_cache`
            grad_output: ∂L/∂saída, ou ∂L/∂logits quando `from_logits`
            from_logits: Pula o jacobiano da ativação final

        Returns:
            Lista de (dW, db) na ordem das camadas
        """
        grads: List[Tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        grad = grad_output
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            inputs, z, a = cache[i]
            if not (from_logits and i == len(self.layers) - 1):
                grad = _activation_backward(grad, z, a, layer.activation)
            grads[i] = (inputs.T @ grad, grad.sum(axis=0))
            grad = grad @ layer.weight.T
        return grads

    def predict(self, x: np.ndarray, t, y=None) -> np.ndarray:
        """Saída da rede para pontos (d,) ou (n, d)."""
        single = np.ndim(x) == 1
        out = self.forward(self.embed(x, t, y))
        return out[0] if single else out

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def __repr__(self) -> str:
        widths = [self.input_dim] + [layer.output_dim for layer in self.layers]
        return f"Mlp(widths={widths}, final={self.layers[-1].activation})"


def gradient_check(net: Mlp,
                   inputs: np.ndarray,
                   loss_and_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]],
                   eps: float = 1e-5,
                   num_checks: int = 10,
                   seed: int = 0) -> Dict[str, float]:
    """
    Compara o backprop com diferenças centrais em entradas aleatórias.

    Args:
        net: Rede a verificar (os parâmetros são restaurados ao final)
        inputs: Entradas já embutidas, forma (n, input_dim)
        loss_and_grad: saída -> (perda, ∂perda/∂saída)
        eps: Passo das diferenças finitas
        num_checks: Entradas verificadas por tensor
        seed: Semente da escolha de entradas

    Returns:
        {'max_rel_error': float, 'mean_rel_error': float}
    """
    rng = make_rng(seed)
    output, cache = net.forward_with_cache(inputs)
    _, grad_output = loss_and_grad(output)
    grads = net.backward(cache, grad_output)

    rel_errors: List[float] = []
    for layer, (d_weight, d_bias) in zip(net.layers, grads):
        for param, grad in ((layer.weight, d_weight), (layer.bias, d_bias)):
            flat = param.reshape(-1)
            flat_grad = grad.reshape(-1)
            for idx in rng.integers(0, flat.size, size=num_checks):
                old = flat[idx]
                flat[idx] = old + eps
                loss_plus, _ = loss_and_grad(net.forward(inputs))
                flat[idx] = old - eps
                loss_minus, _ = loss_and_grad(net.forward(inputs))
                flat[idx] = old

                numeric = (loss_plus - loss_minus) / (2.0 * eps)
                analytic = flat_grad[idx]
                rel_errors.append(abs(analytic - numeric) / max(1e-6, abs(analytic) + abs(numeric)))

    report = {"max_rel_error": float(np.max(rel_errors)), "mean_rel_error": float(np.mean(rel_errors))}
    logger.debug(f"Gradient check: {report}")
    return report
