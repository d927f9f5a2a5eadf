import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import (
    ArtifactIOError,
    ConfigurationError,
    InvalidParameterError,
    MissingInputsError,
    NumericalError,
)
from app.core.seeding import derive_seed, derived_rng, make_rng
from app.core.storage import atomic_write_text
from app.diffusion.batch import SampleBatch, Stage


def test_settings_defaults():
    assert settings.DEFAULT_TIMESTEPS == 500
    assert settings.ROUNDTRIP_TOLERANCE == 1e-2
    assert settings.CLASS_GUIDANCE_SCALE == 10.0
    assert settings.UNCERTAINTY_GUIDANCE_SCALE == 3.0
    assert settings.PROTOCOLS["SVCT"]["view_count"] == 60


def test_exit_codes():
    assert ConfigurationError.exit_code == 2
    assert InvalidParameterError.exit_code == 2
    assert NumericalError.exit_code == 3
    assert ArtifactIOError.exit_code == 4
    assert issubclass(InvalidParameterError, ValueError)


def test_numerical_error_carries_context():
    error = NumericalError("Trajetória divergiu", module="sampler", step=12, index=3)
    assert "módulo=sampler" in str(error) and "passo=12" in str(error) and "índice=3" in str(error)


def test_missing_inputs_are_listed_sorted():
    error = MissingInputsError(["b.csv", "a.csv"])
    assert error.missing == ["a.csv", "b.csv"]
    assert isinstance(error, ArtifactIOError)


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(0, "ums.stage_a", 1) == derive_seed(0, "ums.stage_a", 1)
    assert derive_seed(0, "ums.stage_a", 1) != derive_seed(0, "ums.stage_a", 2)
    assert derive_seed(0, "ums.stage_a") != derive_seed(1, "ums.stage_a")
    np.testing.assert_array_equal(derived_rng(5, "x").random(4), make_rng(derive_seed(5, "x")).random(4))


def test_atomic_write_creates_parents_and_leaves_no_temp_files(tmp_path):
    path = tmp_path / "nested" / "out.txt"
    atomic_write_text(path, "conteúdo\n")
    assert path.read_text(encoding="utf-8") == "conteúdo\n"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_atomic_write_failure_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ArtifactIOError):
        atomic_write_text(blocker / "child.txt", "y")


def test_sample_batch_csv_file(tmp_path):
    batch = SampleBatch(np.array([[0.1, -2.0], [3.0, 4.5]]), [1, 0], [0.25, 0.0], Stage.UNCERTAINTY_GUIDED, 7)
    path = batch.write_csv(tmp_path / "stage_c.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "idx,label,stage,entropy,x0,x1"
    assert lines[1] == "0,1,uncertainty_guided,0.25,0.10000000000000001,-2"
    restored = SampleBatch.read_csv(path, seed=7)
    np.testing.assert_array_equal(restored.points, batch.points)
    assert restored.stage is Stage.UNCERTAINTY_GUIDED


def test_sample_batch_validation():
    with pytest.raises(InvalidParameterError):
        SampleBatch(np.zeros((2, 2)), [0], None, Stage.DATA, 0)
    with pytest.raises(InvalidParameterError):
        SampleBatch(np.array([[np.nan, 0.0]]), [0], None, Stage.DATA, 0)


def test_read_csv_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ArtifactIOError):
        SampleBatch.read_csv(path)
