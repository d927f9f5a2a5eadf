"""
Primitivas do gerador guiado por confiança: concatenação de confiança,
módulo de atenção global-local (EGLA), fusão das saídas dos decoders e a
perda composta do treino adversarial.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union
import math

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.errors import InvalidParameterError
from app.core.seeding import derive_seed, make_rng
from app.networks.attention import AttentionProjections, multi_head_attention
from app.networks.layers import (
    avg_pool2x2,
    conv1x1,
    conv2d,
    conv_transpose2x2,
    flatten_spatial,
    max_pool2x2,
    unflatten_spatial,
    upsample_bilinear,
)


@dataclass(frozen=True)
class EglaParams:
    """Convoluções 3×3 de Q (sobre S), K e V (sobre J) e a atenção multi-cabeça."""

    conv_q: np.ndarray
    bias_q: np.ndarray
    conv_k: np.ndarray
    bias_k: np.ndarray
    conv_v: np.ndarray
    bias_v: np.ndarray
    projections: AttentionProjections
    heads: int = 1

    @classmethod
    def random(cls, channels: int, global_channels: int, heads: int, seed: int) -> "EglaParams":
        rng = make_rng(seed)

        def kernel(c_in):
            return rng.normal(0.0, 1.0 / math.sqrt(9 * c_in), (channels, c_in, 3, 3))

        return cls(
            conv_q=kernel(channels), bias_q=np.zeros(channels),
            conv_k=kernel(global_channels), bias_k=np.zeros(channels),
            conv_v=kernel(global_channels), bias_v=np.zeros(channels),
            projections=AttentionProjections.random(channels, derive_seed(seed, "egla.projections")),
            heads=heads,
        )


@dataclass
class DecoderBundle:
    """Saídas o_1..o_m dos decoders, kernel 1×1 de fusão e, opcionalmente, J e S."""

    outputs: List[np.ndarray]
    fusion_weight: np.ndarray
    fusion_bias: Optional[np.ndarray] = None
    global_feature: Optional[np.ndarray] = None
    intermediate: Optional[np.ndarray] = None

    def __post_init__(self):
        self.outputs = [np.asarray(o, dtype=np.float64) for o in self.outputs]
        shapes = {o.shape for o in self.outputs}
        if len(shapes) > 1:
            raise InvalidParameterError(f"Saídas dos decoders com formas diferentes: {sorted(shapes)}")
        if self.global_feature is not None and self.intermediate is not None:
            _check_egla_shapes(np.asarray(self.global_feature), np.asarray(self.intermediate))


def _check_egla_shapes(J: np.ndarray, S: np.ndarray) -> None:
    if J.ndim != 4 or S.ndim != 4:
        raise InvalidParameterError("J e S devem ter forma (B, C, H, W)")
    if J.shape[0] != S.shape[0] or S.shape[2] != 2 * J.shape[2] or S.shape[3] != 2 * J.shape[3]:
        raise InvalidParameterError(
            f"S {S.shape[2:]} deve ter o dobro das dimensões espaciais de J {J.shape[2:]}"
        )


def concat_confidence(f: np.ndarray, c_d: Union[float, np.ndarray]) -> np.ndarray:
    """
    I_d = Concat(f, c_d): canal constante de confiança anexado a f.

    Args:
        f: Features (B, C, H, W)
        c_d: Confiança escalar ou uma por item do batch, em [0, 1]

    Returns:
        Tensor (B, C+1, H, W)
    """
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 4:
        raise InvalidParameterError(f"Features devem ter forma (B, C, H, W), recebido {f.shape}")
    c = np.broadcast_to(np.asarray(c_d, dtype=np.float64), (f.shape[0],))
    if np.any(~np.isfinite(c)) or np.any(c < 0.0) or np.any(c > 1.0):
        raise InvalidParameterError(f"Confiança fora de [0, 1]: {c_d}")
    channel = np.broadcast_to(c[:, None, None, None], (f.shape[0], 1, f.shape[2], f.shape[3]))
    return np.concatenate([f, channel], axis=1)


def egla_forward(J: np.ndarray, S: np.ndarray, params: EglaParams) -> np.ndarray:
    """
    Atenção global-local: Q vem de S (max-pool 2×2 + conv), K e V de J (duas
    convs); a saída da atenção volta à resolução de S por upsample bilinear e
    é somada a S (conexão residual).
    """
    J = np.asarray(J, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    _check_egla_shapes(J, S)
    if params.projections.width != S.shape[1]:
        raise InvalidParameterError(f"Largura da atenção ({params.projections.width}) difere dos canais de S ({S.shape[1]})")

    h, w = J.shape[2], J.shape[3]
    Q = flatten_spatial(conv2d(max_pool2x2(S), params.conv_q, params.bias_q))
    K = flatten_spatial(conv2d(J, params.conv_k, params.bias_k))
    V = flatten_spatial(conv2d(J, params.conv_v, params.bias_v))
    attended = multi_head_attention(Q, K, V, params.heads, params.projections)
    return S + upsample_bilinear(unflatten_spatial(attended, h, w), 2)


def fuse_outputs(bundle: DecoderBundle) -> np.ndarray:
    """O = Conv1×1(Avg(o_1, ..., o_m))."""
    if len(bundle.outputs) < 2:
        raise InvalidParameterError(f"Fusão exige ao menos 2 saídas, recebido {len(bundle.outputs)}")
    mean = np.mean(np.stack(bundle.outputs), axis=0)
    return conv1x1(mean, bundle.fusion_weight, bundle.fusion_bias)


def composite_loss(gan_term: float,
                   cyc_term: float,
                   ide_term: float,
                   lambda_cyc: float = settings.LAMBDA_CYC,
                   lambda_ide: float = settings.LAMBDA_IDE) -> float:
    """L = L_GAN + λ1·L_cyc + λ2·L_ide."""
    if lambda_cyc < 0 or lambda_ide < 0:
        raise InvalidParameterError(f"Pesos da perda devem ser >= 0 (λ1={lambda_cyc}, λ2={lambda_ide})")
    return float(gan_term + lambda_cyc * cyc_term + lambda_ide * ide_term)


@dataclass
class DecoderParams:
    up_weight: np.ndarray
    up_bias: np.ndarray
    egla: EglaParams
    head_weight: np.ndarray
    head_bias: np.ndarray


@dataclass
class ConfidenceGuidedGenerator:
    """
    Caminho de decodificação com m decoders, um por classe de protocolo.

    Cada decoder recebe as features concatenadas à sua confiança, dobra a
    resolução (S_d), combina-se ao contexto global J via EGLA e projeta em
    o_d; as saídas são fundidas por `fuse_outputs`.
    """

    decoders: List[DecoderParams]
    global_weight: np.ndarray
    global_bias: np.ndarray
    fusion_weight: np.ndarray
    fusion_bias: np.ndarray
    feature_channels: int = field(default=0)

    @classmethod
    def create(cls,
               in_channels: int,
               feature_channels: int,
               out_channels: int,
               num_decoders: int,
               heads: int = 1,
               seed: int = 0) -> "ConfidenceGuidedGenerator":
        if num_decoders < 2:
            raise InvalidParameterError("O gerador precisa de ao menos 2 decoders")
        if feature_channels % heads:
            raise InvalidParameterError(f"{feature_channels} canais não dividem em {heads} cabeças")
        rng = make_rng(seed)
        decoders = []
        for d in range(num_decoders):
            decoders.append(DecoderParams(
                up_weight=rng.normal(0.0, 1.0 / math.sqrt(4 * (in_channels + 1)), (in_channels + 1, feature_channels, 2, 2)),
                up_bias=np.zeros(feature_channels),
                egla=EglaParams.random(feature_channels, feature_channels, heads, derive_seed(seed, "generator.egla", d)),
                head_weight=rng.normal(0.0, 1.0 / math.sqrt(feature_channels), (out_channels, feature_channels)),
                head_bias=np.zeros(out_channels),
            ))
        total = num_decoders * feature_channels
        logger.debug(f"Gerador criado: {num_decoders} decoders, {feature_channels} canais")
        return cls(
            decoders=decoders,
            global_weight=rng.normal(0.0, 1.0 / math.sqrt(total), (feature_channels, total)),
            global_bias=np.zeros(feature_channels),
            fusion_weight=np.eye(out_channels),
            fusion_bias=np.zeros(out_channels),
            feature_channels=feature_channels,
        )

    @property
    def num_decoders(self) -> int:
        return len(self.decoders)

    def bundle(self, f: np.ndarray, confidences: np.ndarray) -> DecoderBundle:
        """Executa os decoders e devolve as saídas com J e o último S."""
        f = np.asarray(f, dtype=np.float64)
        confidences = np.asarray(confidences, dtype=np.float64)
        if confidences.ndim == 1:
            confidences = np.broadcast_to(confidences[None, :], (f.shape[0], confidences.size))
        if confidences.shape != (f.shape[0], self.num_decoders):
            raise InvalidParameterError(
                f"Esperada uma confiança por decoder ({self.num_decoders}), recebido {confidences.shape}"
            )

        intermediates = [
            conv_transpose2x2(concat_confidence(f, confidences[:, d]), dec.up_weight, dec.up_bias)
            for d, dec in enumerate(self.decoders)
        ]
        pooled = np.concatenate([avg_pool2x2(S) for S in intermediates], axis=1)
        J = conv1x1(pooled, self.global_weight, self.global_bias)
        outputs = [
            conv1x1(egla_forward(J, S, dec.egla), dec.head_weight, dec.head_bias)
            for S, dec in zip(intermediates, self.decoders)
        ]
        return DecoderBundle(
            outputs=outputs,
            fusion_weight=self.fusion_weight,
            fusion_bias=self.fusion_bias,
            global_feature=J,
            intermediate=intermediates[-1],
        )

    def forward(self, f: np.ndarray, confidences: Sequence[float]) -> np.ndarray:
        """
        Imagem final a partir das features f (B, C_in, H, W).

        Args:
            f: Features do encoder
            confidences: Uma confiança por decoder (ou (B, m)), tipicamente as
                probabilidades do classificador reutilizado

        Returns:
            Tensor (B, C_out, 2H, 2W)
        """
        return fuse_outputs(self.bundle(f, confidences))
