from .protocols import ProtocolSpec, get_protocol
from .phantoms import CTImage, make_phantom
from .projector import Sinogram, fbp_reconstruct, forward_project
from .simulator import simulate_protocol

__all__ = [
    "ProtocolSpec",
    "get_protocol",
    "CTImage",
    "make_phantom",
    "Sinogram",
    "fbp_reconstruct",
    "forward_project",
    "simulate_protocol",
]
