#!/usr/bin/env python3
"""
CLI do toolkit UMS.

Uso:
    python -m app.main <simulate|train|ums|eval|report> [--manifest PATH] [--out DIR] [--seed N]
"""

from typing import List, Optional
import argparse
import sys

from loguru import logger
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ArtifactIOError, ConfigurationError, NumericalError, UMSError
from app.harness.manifest import default_manifest, load_manifest
from app.harness.runner import ExperimentRunner

VERBS = ["simulate", "train", "ums", "eval", "report"]


def configure_logging(level: str = settings.LOG_LEVEL) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level, format="<level>{level: <8}</level> | {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Toolkit UMS: simulação CT, redes toy e geração guiada por incerteza")

    parser.add_argument(
        "verb",
        choices=VERBS,
        help="Etapa do experimento a executar"
    )

    parser.add_argument(
        "--manifest",
        help="Manifest JSON do experimento (padrão: manifest default)"
    )

    parser.add_argument(
        "--out",
        help="Diretório de saída (sobrescreve outputs.directory)"
    )

    parser.add_argument(
        "--seed",
        type=int,
        help="Semente raiz (sobrescreve o manifest)"
    )

    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    Executa um verbo e devolve o código de saída.

    Returns:
        0 sucesso, 2 manifest/parâmetro, 3 falha numérica, 4 I/O
    """
    args = build_parser().parse_args(argv)

    try:
        manifest = load_manifest(args.manifest) if args.manifest else default_manifest()
        if args.seed is not None:
            manifest = manifest.model_copy(update={"seed": args.seed})
        runner = ExperimentRunner(manifest, args.out)
        runner.run(args.verb)
        logger.info(f"✅ Verbo '{args.verb}' concluído em {runner.out_dir}")
        return 0

    except (ValidationError, ConfigurationError) as e:
        logger.error(f"❌ Erro de configuração: {e}")
        return ConfigurationError.exit_code
    except NumericalError as e:
        logger.error(f"❌ Falha numérica: {e}")
        return NumericalError.exit_code
    except (ArtifactIOError, OSError) as e:
        logger.error(f"❌ Erro de I/O: {e}")
        return ArtifactIOError.exit_code
    except UMSError as e:
        logger.error(f"❌ Erro: {e}")
        return e.exit_code


def main():
    configure_logging()
    sys.exit(run())


if __name__ == "__main__":
    main()
