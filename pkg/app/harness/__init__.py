from .manifest import ExperimentManifest, load_manifest, parse_manifest
from .runner import ExperimentRunner

__all__ = ["ExperimentManifest", "load_manifest", "parse_manifest", "ExperimentRunner"]
