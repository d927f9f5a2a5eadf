"""
Manifest JSON do experimento: única fonte dos parâmetros de uma execução.
Chaves desconhecidas são rejeitadas.
"""

from pathlib import Path
from typing import List, Literal, Optional, Union
import hashlib
import json

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.config import settings
from app.core.errors import ArtifactIOError, ConfigurationError
from app.ct.phantoms import PHANTOM_KINDS
from app.diffusion.oracle import GaussianMixtureOracle, MixtureComponent, default_world
from app.diffusion.sampler import GradientSource
from app.diffusion.schedule import ScheduleSpec
from app.networks.training import TrainingConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WorldSpec(StrictModel):
    components: List[MixtureComponent] = Field(default_factory=lambda: default_world().to_components())

    def build(self) -> GaussianMixtureOracle:
        return GaussianMixtureOracle.from_components(self.components)


class SimulationSpec(StrictModel):
    """Phantoms × protocolos; o protocolo ideal é sempre simulado como referência."""

    phantoms: List[str] = ["disk", "shepp_logan"]
    size: int = Field(default=settings.PHANTOM_SIZE, ge=32)
    protocols: List[str] = ["LDCT", "SVCT", "LACT"]
    detectors: Optional[int] = Field(default=None, ge=1)
    filter: Literal["ramlak", "hann"] = "ramlak"

    @field_validator("phantoms")
    @classmethod
    def _known_phantoms(cls, value: List[str]) -> List[str]:
        unknown = [p for p in value if p not in PHANTOM_KINDS]
        if unknown:
            raise ValueError(f"Phantoms desconhecidos: {unknown}")
        return value

    @field_validator("protocols")
    @classmethod
    def _known_protocols(cls, value: List[str]) -> List[str]:
        unknown = [p for p in value if p not in settings.PROTOCOLS]
        if unknown:
            raise ValueError(f"Protocolos desconhecidos: {unknown}")
        return value

    def protocol_names(self) -> List[str]:
        return ["ideal"] + [p for p in self.protocols if p != "ideal"]


class TrainingSpec(StrictModel):
    hidden: List[int] = list(settings.HIDDEN_WIDTHS)
    activation: Literal["relu", "tanh"] = "tanh"
    denoiser: TrainingConfig = TrainingConfig()
    classifier: TrainingConfig = TrainingConfig(label_dropout=0.0)


class GenerationSpec(StrictModel):
    class_scale: float = Field(default=settings.CLASS_GUIDANCE_SCALE, ge=0)
    uncertainty_scale: float = Field(default=settings.UNCERTAINTY_GUIDANCE_SCALE, ge=0)
    n_per_class: int = Field(default=settings.SAMPLES_PER_CLASS, ge=1)
    model: Literal["oracle", "network"] = "oracle"
    gradient_source: GradientSource = GradientSource.ANALYTIC
    ablation: bool = True
    roundtrip_tolerance: float = Field(default=settings.ROUNDTRIP_TOLERANCE, gt=0)
    roundtrip_points: int = Field(default=100, ge=1)
    bootstrap_resamples: int = Field(default=settings.BOOTSTRAP_RESAMPLES, ge=1)
    bootstrap_level: float = Field(default=settings.BOOTSTRAP_LEVEL, gt=0, lt=1)
    dump_trajectories: bool = False

    @model_validator(mode="after")
    def _network_needs_finite_differences(self):
        if self.model == "network" and self.gradient_source is GradientSource.ANALYTIC:
            raise ValueError("Modelo 'network' só suporta gradient_source 'finite_difference'")
        return self


class OutputSpec(StrictModel):
    directory: str = settings.DEFAULT_OUTPUT_DIR


class ExperimentManifest(StrictModel):
    """
    Manifest versionado. Toda operação estocástica deriva sua semente de
    `seed` pelo nome da operação (ver app.core.seeding).
    """

    version: Literal[1]
    seed: int = 0
    schedule: ScheduleSpec = ScheduleSpec()
    world: WorldSpec = WorldSpec()
    simulation: SimulationSpec = SimulationSpec()
    training: TrainingSpec = TrainingSpec()
    generation: GenerationSpec = GenerationSpec()
    outputs: OutputSpec = OutputSpec()

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def default_manifest() -> ExperimentManifest:
    return ExperimentManifest(version=1)


def parse_manifest(text: str) -> ExperimentManifest:
    """
    Valida o texto JSON do manifest.

    Raises:
        ConfigurationError: JSON inválido, chave desconhecida ou valor fora da faixa
    """
    try:
        return ExperimentManifest.model_validate_json(text)
    except ValidationError as e:
        raise ConfigurationError(f"Manifest inválido:\n{e}")


def load_manifest(path: Union[str, Path]) -> ExperimentManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"Erro ao ler manifest {path}: {e}")
    return parse_manifest(text)
