"""
Codecs de arquivo: imagem PGM binária de 16 bits (P5) com arquivo lateral da
janela de normalização, e sinograma raw float64 com cabeçalho JSON.
"""

from pathlib import Path
from typing import Optional, Tuple, Union
import json

import numpy as np

from app.core.errors import ArtifactIOError
from app.core.storage import atomic_write_bytes, atomic_write_text
from app.ct.phantoms import CTImage
from app.ct.projector import Sinogram

PGM_MAXVAL = 65535


def window_path(path: Union[str, Path]) -> Path:
    return Path(path).with_suffix(".window.txt")


def encode_pgm(img: CTImage, window: Optional[Tuple[float, float]] = None) -> Tuple[bytes, Tuple[float, float]]:
    """
    Quantiza a imagem para 16 bits na janela [lo, hi].

    Returns:
        (bytes do PGM, janela usada)
    """
    pixels = img.pixels
    lo, hi = window if window is not None else (float(pixels.min()), float(pixels.max()))
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.rint((np.clip(pixels, lo, hi) - lo) / (hi - lo) * PGM_MAXVAL).astype(">u2")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    return header + scaled.tobytes(), (lo, hi)


def decode_pgm(payload: bytes, window: Tuple[float, float] = (0.0, 1.0), pixel_size: float = 1.0) -> CTImage:
    tokens = []
    offset = 0
    while len(tokens) < 4:
        while offset < len(payload) and payload[offset:offset + 1].isspace():
            offset += 1
        start = offset
        while offset < len(payload) and not payload[offset:offset + 1].isspace():
            offset += 1
        if start == offset:
            raise ArtifactIOError("Cabeçalho PGM truncado")
        tokens.append(payload[start:offset].decode("ascii"))
    offset += 1  # um único espaço separa o cabeçalho dos dados

    if tokens[0] != "P5":
        raise ArtifactIOError(f"Formato PGM não suportado: {tokens[0]}")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != PGM_MAXVAL:
        raise ArtifactIOError(f"PGM com maxval {maxval}; esperado {PGM_MAXVAL}")
    body = payload[offset:]
    if len(body) != 2 * width * height:
        raise ArtifactIOError(f"Corpo PGM com {len(body)} bytes; esperado {2 * width * height}")
    raw = np.frombuffer(body, dtype=">u2").astype(np.float64).reshape(height, width)
    lo, hi = window
    return CTImage(pixels=lo + raw / PGM_MAXVAL * (hi - lo), pixel_size=pixel_size)


def write_pgm(path: Union[str, Path], img: CTImage, window: Optional[Tuple[float, float]] = None) -> Path:
    """Grava o PGM e o arquivo lateral `.window.txt` com "lo hi"."""
    payload, (lo, hi) = encode_pgm(img, window)
    atomic_write_bytes(path, payload)
    atomic_write_text(window_path(path), f"{lo!r} {hi!r}\n")
    return Path(path)


def read_pgm(path: Union[str, Path]) -> CTImage:
    path = Path(path)
    try:
        payload = path.read_bytes()
        sidecar = window_path(path)
        window = (0.0, 1.0)
        if sidecar.exists():
            lo, hi = sidecar.read_text(encoding="utf-8").split()
            window = (float(lo), float(hi))
    except (OSError, ValueError) as e:
        raise ArtifactIOError(f"Erro ao ler imagem {path}: {e}")
    return decode_pgm(payload, window)


def encode_sinogram(sino: Sinogram) -> bytes:
    header = {
        "views": sino.views,
        "detectors": sino.detectors,
        "angle_start": sino.angle_range_deg[0],
        "angle_end": sino.angle_range_deg[1],
        "detector_spacing": sino.detector_spacing,
        "pixel_size": sino.pixel_size,
        "image_size": sino.image_size,
    }
    line = json.dumps(header, sort_keys=True) + "\n"
    return line.encode("utf-8") + np.ascontiguousarray(sino.values, dtype="<f8").tobytes()


def decode_sinogram(payload: bytes) -> Sinogram:
    newline = payload.find(b"\n")
    if newline < 0:
        raise ArtifactIOError("Sinograma sem linha de cabeçalho")
    try:
        header = json.loads(payload[:newline].decode("utf-8"))
        views, detectors = int(header["views"]), int(header["detectors"])
        start, end = float(header["angle_start"]), float(header["angle_end"])
    except (ValueError, KeyError) as e:
        raise ArtifactIOError(f"Cabeçalho de sinograma inválido: {e}")
    body = payload[newline + 1:]
    if len(body) != 8 * views * detectors:
        raise ArtifactIOError(f"Corpo do sinograma com {len(body)} bytes; esperado {8 * views * detectors}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(views, detectors)
    angles = np.radians(np.linspace(start, end, views, endpoint=False))
    return Sinogram(
        values=values,
        angles=angles,
        angle_range_deg=(start, end),
        detector_spacing=float(header.get("detector_spacing", 1.0)),
        pixel_size=float(header.get("pixel_size", 1.0)),
        image_size=header.get("image_size"),
    )


def write_sinogram(path: Union[str, Path], sino: Sinogram) -> Path:
    return atomic_write_bytes(path, encode_sinogram(sino))


def read_sinogram(path: Union[str, Path]) -> Sinogram:
    try:
        payload = Path(path).read_bytes()
    except OSError as e:
        raise ArtifactIOError(f"Erro ao ler sinograma {path}: {e}")
    return decode_sinogram(payload)
