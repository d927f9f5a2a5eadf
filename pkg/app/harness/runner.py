"""
ExperimentRunner - executa os verbos do harness a partir do manifest.

Cada verbo grava em `<saída>/<verbo>/` e anexa o log da execução em
`<saída>/run.log`.
"""

from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union
import asyncio
import math
import time

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.errors import MissingInputsError
from app.core.seeding import derive_seed
from app.ct.io import write_pgm, write_sinogram
from app.ct.phantoms import circular_fov_mask, make_phantom
from app.ct.protocols import get_protocol
from app.ct.simulator import SimulationResult, simulate_protocol_detailed
from app.diffusion.batch import SampleBatch
from app.diffusion.models import ModelFactory, PosteriorProvider, EpsilonModel
from app.diffusion.sampler import (
    GuidanceMode,
    GuidanceSpec,
    run_ums_stages,
    roundtrip_error,
    sample_chain,
    uncertainty_from_noise,
    write_trajectory_csv,
)
from app.diffusion.schedule import NoiseSchedule
from app.harness.artifacts import (
    attach_run_log,
    library_versions,
    read_csv_rows,
    write_csv,
    write_dat,
    write_json,
)
from app.harness.manifest import ExperimentManifest
from app.metrics.entropy import batch_entropy_stats, bootstrap_mean_interval
from app.metrics.image_quality import METRICS_HEADER, evaluate
from app.networks.checkpoint import load_network, save_network
from app.networks.mlp import Mlp
from app.networks.training import classifier_accuracy, denoiser_error, train_classifier, train_denoiser

STAGE_FILES = {"data": "stage_data.csv", "a": "stage_a.csv", "b": "stage_b.csv", "c": "stage_c.csv"}
ENTROPY_HEADER = ("variant", "count", "mean", "std", "ci_low", "ci_high")
HISTOGRAM_BINS = 20


class ExperimentRunner:
    """
    Executa simulate / train / ums / eval / report.

    Args:
        manifest: Manifest validado
        out_dir: Diretório de saída (padrão: manifest.outputs.directory)
    """

    def __init__(self, manifest: ExperimentManifest, out_dir: Optional[Union[str, Path]] = None):
        self.manifest = manifest
        self.out_dir = Path(out_dir or manifest.outputs.directory)
        self.sched = NoiseSchedule.from_spec(manifest.schedule)
        self.oracle = manifest.world.build()

    @contextmanager
    def _verb(self, name: str):
        handler = attach_run_log(self.out_dir)
        started = time.perf_counter()
        logger.info(f"Verbo '{name}' iniciado | manifest sha256={self.manifest.sha256()} | seed={self.manifest.seed}")
        logger.info(f"Versões: {library_versions()}")
        try:
            yield self.out_dir / name
        finally:
            logger.info(f"Verbo '{name}' finalizado em {time.perf_counter() - started:.2f}s")
            logger.remove(handler)

    def run(self, verb: str) -> Dict[str, Any]:
        return getattr(self, f"run_{verb}")()

    # ------------------------------------------------------------------
    # simulate
    # ------------------------------------------------------------------

    def run_simulate(self) -> Dict[str, Any]:
        """Phantom × protocolo: sinogramas, reconstruções FBP e métricas vs a reconstrução ideal."""
        spec = self.manifest.simulation
        with self._verb("simulate") as directory:
            jobs = [(phantom, protocol) for phantom in spec.phantoms for protocol in spec.protocol_names()]
            results = asyncio.run(self._simulate_all(jobs))

            rows = []
            references = {}
            for (phantom, protocol), result in zip(jobs, results):
                stem = f"{phantom}_{protocol}"
                write_sinogram(directory / f"{stem}.sino", result.sinogram)
                write_sinogram(directory / f"{stem}.noisy.sino", result.noisy_sinogram)
                write_pgm(directory / f"{stem}.pgm", result.reconstruction)
                if protocol == "ideal":
                    references[phantom] = result.reconstruction

                roi = circular_fov_mask(spec.size)
                report = evaluate(result.reconstruction, references[phantom], roi)
                rows.append(report.csv_row(phantom, protocol, "fbp"))

            write_csv(directory / "metrics.csv", METRICS_HEADER, rows)
            logger.info(f"Simulação concluída: {len(jobs)} combinações phantom/protocolo")
            return {"jobs": len(jobs), "metrics_rows": len(rows)}

    async def _simulate_all(self, jobs: List[Tuple[str, str]]) -> List[SimulationResult]:
        semaphore = asyncio.Semaphore(settings.MAX_CONCURRENT_TASKS)
        spec = self.manifest.simulation
        phantoms = {kind: make_phantom(kind, spec.size) for kind in spec.phantoms}

        async def run_job(phantom: str, protocol: str) -> SimulationResult:
            async with semaphore:
                seed = derive_seed(self.manifest.seed, f"simulate.{phantom}.{protocol}")
                return await asyncio.to_thread(
                    simulate_protocol_detailed, phantoms[phantom], get_protocol(protocol), seed,
                    spec.detectors, spec.filter,
                )

        return await asyncio.gather(*(run_job(p, q) for p, q in jobs))

    # ------------------------------------------------------------------
    # train
    # ------------------------------------------------------------------

    def _initial_networks(self) -> Tuple[Mlp, Mlp]:
        spec = self.manifest.training
        dim, classes, seed = self.oracle.dim, self.oracle.num_classes, self.manifest.seed
        denoiser = Mlp.create(dim, classes, dim, spec.hidden, spec.activation, "identity",
                              seed=derive_seed(seed, "train.denoiser.init"))
        classifier = Mlp.create(dim, 0, classes, spec.hidden, spec.activation, "softmax",
                                seed=derive_seed(seed, "train.classifier.init"), zero_last=True)
        return denoiser, classifier

    def run_train(self) -> Dict[str, Any]:
        """Treina denoiser e classificador e grava checkpoints, curvas de perda e resumo."""
        spec = self.manifest.training
        seed = self.manifest.seed
        with self._verb("train") as directory:
            denoiser, classifier = self._initial_networks()
            den = train_denoiser(denoiser, self.oracle, self.sched, spec.denoiser, derive_seed(seed, "train.denoiser"))
            cls = train_classifier(classifier, self.oracle, self.sched, spec.classifier, derive_seed(seed, "train.classifier"))

            save_network(den.net, directory / "denoiser.umsn")
            save_network(cls.net, directory / "classifier.umsn")
            for name, losses in (("denoiser", den.losses), ("classifier", cls.losses)):
                write_csv(directory / f"{name}_loss.csv", ("step", "loss"),
                          ([i, format(float(v), ".17g")] for i, v in enumerate(losses)))

            summary = {
                "denoiser_steps": spec.denoiser.steps,
                "classifier_steps": spec.classifier.steps,
                "denoiser_final_loss": _last(den.losses),
                "classifier_final_loss": _last(cls.losses),
                "classifier_clean_accuracy": classifier_accuracy(
                    cls.net, self.oracle, self.sched, 2000, 1, derive_seed(seed, "train.accuracy")),
            }
            write_json(directory / "summary.json", summary)
            logger.info(f"Treino concluído: acurácia limpa={summary['classifier_clean_accuracy']:.4f}")
            return summary

    def _load_trained(self) -> Tuple[Mlp, Mlp]:
        directory = self.out_dir / "train"
        paths = [directory / "denoiser.umsn", directory / "classifier.umsn"]
        missing = [p for p in paths if not p.exists()]
        if missing:
            raise MissingInputsError(missing)
        return load_network(paths[0]), load_network(paths[1])

    # ------------------------------------------------------------------
    # ums
    # ------------------------------------------------------------------

    def _backends(self) -> Tuple[EpsilonModel, PosteriorProvider]:
        if self.manifest.generation.model == "oracle":
            return (ModelFactory.create_model("oracle", oracle=self.oracle, sched=self.sched),
                    ModelFactory.create_provider("oracle", oracle=self.oracle, sched=self.sched))
        denoiser, classifier = self._load_trained()
        return (ModelFactory.create_model("network", net=denoiser, sched=self.sched),
                ModelFactory.create_provider("network", net=classifier, sched=self.sched))

    def run_ums(self) -> Dict[str, Any]:
        """Estágios A/B/C, resumo do ganho de entropia, variantes de ablação e roundtrip."""
        gen = self.manifest.generation
        seed = self.manifest.seed
        with self._verb("ums") as directory:
            model, classifier = self._backends()
            scorer = ModelFactory.create_provider("oracle", oracle=self.oracle, sched=self.sched)
            stages = run_ums_stages(
                model, classifier, self.sched, gen.n_per_class, gen.class_scale, gen.uncertainty_scale,
                seed=derive_seed(seed, "ums"), gradient_source=gen.gradient_source,
                entropy_provider=scorer, reference=self.oracle,
            )
            for name, batch in stages.by_name().items():
                batch.write_csv(directory / STAGE_FILES[name])

            variants = {"data": stages.data, "stage_a": stages.class_guided, "stage_c": stages.uncertainty_guided}
            if gen.ablation:
                variants["ablation_class_only"] = stages.class_guided
                variants["ablation_uncertainty_from_noise"] = uncertainty_from_noise(
                    model, classifier, self.sched, gen.n_per_class, gen.uncertainty_scale,
                    derive_seed(seed, "ums"), gen.gradient_source, scorer,
                )

            rows, intervals = [], {}
            for index, (name, batch) in enumerate(variants.items()):
                stats = batch_entropy_stats(batch)
                interval = bootstrap_mean_interval(batch.entropies, gen.bootstrap_level, gen.bootstrap_resamples,
                                                   derive_seed(seed, "ums.bootstrap", index))
                intervals[name] = interval
                rows.append([name, stats.count] + [format(v, ".17g") for v in (stats.mean, stats.std, *interval)])
            write_csv(directory / "entropy_summary.csv", ENTROPY_HEADER, rows)

            points = min(gen.roundtrip_points, stages.data.size)
            error = roundtrip_error(model, self.sched, stages.data.points[:points], stages.data.labels[:points])
            if error > gen.roundtrip_tolerance:
                logger.warning(f"Erro de roundtrip {error:.3e} acima da tolerância {gen.roundtrip_tolerance:.1e}")

            if gen.dump_trajectories:
                spec = GuidanceSpec(mode=GuidanceMode.UNCERTAINTY, scale=gen.uncertainty_scale,
                                    gradient_source=gen.gradient_source)
                trajectory = sample_chain(model, classifier, self.sched, spec, stages.inverted_noise.labels,
                                          stages.inverted_noise.points)
                write_trajectory_csv(trajectory, directory / "trajectories")

            summary = {
                "points": stages.uncertainty_guided.size,
                "timesteps": self.sched.T,
                "class_scale": gen.class_scale,
                "uncertainty_scale": gen.uncertainty_scale,
                "model": gen.model,
                "mean_entropy": {name: batch_entropy_stats(b).mean for name, b in variants.items()},
                "entropy_lift": intervals["stage_c"][0] > intervals["stage_a"][1],
                "roundtrip_error": error,
                "roundtrip_tolerance": gen.roundtrip_tolerance,
                "roundtrip_within_tolerance": error <= gen.roundtrip_tolerance,
            }
            write_json(directory / "summary.json", summary)
            logger.info(f"UMS concluído: entropia A={summary['mean_entropy']['stage_a']:.4f}, "
                        f"C={summary['mean_entropy']['stage_c']:.4f}")
            return summary

    # ------------------------------------------------------------------
    # eval
    # ------------------------------------------------------------------

    def run_eval(self) -> Dict[str, Any]:
        """Acurácia do classificador e erro do denoiser por nível de ruído, mais a média das métricas de CT."""
        seed = self.manifest.seed
        with self._verb("eval") as directory:
            denoiser, classifier = self._load_trained()
            T = self.sched.T
            steps = sorted({1} | {max(1, int(round(T * q / 10))) for q in range(1, 10)})
            summary: Dict[str, Any] = {
                "classifier_accuracy": {
                    str(t): classifier_accuracy(classifier, self.oracle, self.sched, 2000, t,
                                                derive_seed(seed, "eval.accuracy", t))
                    for t in steps
                },
                "denoiser_mse": {
                    str(t): denoiser_error(denoiser, self.oracle, self.sched, 2000, t,
                                           derive_seed(seed, "eval.denoiser", t))
                    for t in steps
                },
            }

            metrics_path = self.out_dir / "simulate" / "metrics.csv"
            if metrics_path.exists():
                summary["simulate_metrics"] = _protocol_means(read_csv_rows(metrics_path))
            else:
                logger.warning(f"{metrics_path} ausente; métricas de CT fora do resumo")

            write_json(directory / "summary.json", summary)
            logger.info(f"Avaliação concluída em {len(steps)} níveis de ruído")
            return summary

    # ------------------------------------------------------------------
    # report
    # ------------------------------------------------------------------

    def run_report(self) -> Dict[str, Any]:
        """Dados de plot: histogramas de entropia, dispersão por estágio e barras de métricas."""
        ums_dir = self.out_dir / "ums"
        expected = [ums_dir / name for name in STAGE_FILES.values()]
        missing = [p for p in expected if not p.exists()]
        if missing:
            raise MissingInputsError(missing)

        with self._verb("report") as directory:
            written = []
            upper = math.log(self.oracle.num_classes) if self.oracle.num_classes > 1 else 1.0
            edges = np.linspace(0.0, upper, HISTOGRAM_BINS + 1)
            for name, filename in STAGE_FILES.items():
                batch = SampleBatch.read_csv(ums_dir / filename)
                columns = [f"x{i}" for i in range(batch.dim)] + ["label"]
                written.append(write_dat(directory / f"scatter_{name}.dat", columns,
                                         ([*map(float, p), int(l)] for p, l in zip(batch.points, batch.labels))))
                if batch.entropies is None:
                    continue
                counts, _ = np.histogram(np.clip(batch.entropies, 0.0, upper), bins=edges)
                centers = 0.5 * (edges[:-1] + edges[1:])
                written.append(write_dat(directory / f"hist_{name}.dat", ("entropy", "count"),
                                         ([float(c), int(n)] for c, n in zip(centers, counts))))

            metrics_path = self.out_dir / "simulate" / "metrics.csv"
            if metrics_path.exists():
                means = _protocol_means(read_csv_rows(metrics_path))
                written.append(write_dat(directory / "metrics_bars.dat", ("protocol", "psnr_db", "ssim", "noise_sd"),
                                         ([p, m["psnr_db"], m["ssim"], m["noise_sd"]] for p, m in means.items())))

            logger.info(f"Relatório: {len(written)} arquivos de dados")
            return {"files": [p.name for p in written]}


def _last(values: np.ndarray) -> Optional[float]:
    return float(values[-1]) if len(values) else None


def _protocol_means(rows: List[Dict[str, str]]) -> Dict[str, Dict[str, float]]:
    grouped: Dict[str, List[Dict[str, str]]] = {}
    for row in rows:
        grouped.setdefault(row["protocol"], []).append(row)
    return {
        protocol: {key: float(np.mean([float(r[key]) for r in items])) for key in ("psnr_db", "ssim", "noise_sd")}
        for protocol, items in grouped.items()
    }
