import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pseudosyn.catalog import Catalog, ClassDistribution, ImageRecord, Provenance, Split  # noqa: E402
from pseudosyn.imageio import save_image  # noqa: E402
from pseudosyn.labels import ClassLabel  # noqa: E402

# Published class counts of the challenge training data and of the accepted
# pseudo-labels; everything else in the extension table derives from these.
BASELINE = ClassDistribution((2552, 2555, 227, 621))
PSEUDO = ClassDistribution((4348, 2103, 189, 321))


def published_scale_catalog(image_path="img.png", with_pseudo=False) -> Catalog:
    """Real (and optionally pseudo) records in the published proportions, all sharing one image file."""
    records = []
    for label in ClassLabel:
        for i in range(BASELINE[label]):
            records.append(ImageRecord(f"{label.key}_{i}", image_path, Split.TRAIN_LABELED, label))
    if with_pseudo:
        for label in ClassLabel:
            for i in range(PSEUDO[label]):
                records.append(
                    ImageRecord(
                        f"pseudo/u_{label.key}_{i}",
                        image_path,
                        Split.TRAIN_LABELED,
                        label,
                        Provenance.PSEUDO,
                        confidence=0.9,
                    )
                )
    return Catalog(tuple(records))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_image_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("img") / "tiny.png"
    image = np.zeros((8, 8, 3), np.uint8)
    image[:, 4:] = 255
    return save_image(image, path)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """All three phases on the toy dataset, shared by the pipeline tests."""
    from pseudosyn.pipeline import PipelineConfig, report, run_phase
    from pseudosyn.toy import make_toy_dataset, write_toy_config

    root = tmp_path_factory.mktemp("toy")
    make_toy_dataset(root)
    config = PipelineConfig.load(write_toy_config(root / "pipeline.yaml"))
    results = {phase: run_phase(config, phase) for phase in ("baseline", "extend", "extended")}
    return config, results, report(config.output_dir)


# One line per acceptance criterion, repeated at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
