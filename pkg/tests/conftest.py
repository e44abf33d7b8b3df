import numpy as np
import pytest

from arsal.cli import main
from arsal.fixtures import write_fixtures


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    """Fixture bundle run through composite and gaze processing once."""
    root = tmp_path_factory.mktemp("bundle")
    fx = root / "fx"
    assert main(["make-fixtures", "--out", str(fx), "--seed", "0"]) == 0
    cfg = str(fx / "config.json")
    assert main(["composite", "--config", cfg, "--manifest", str(fx / "manifest.csv"), "--out-dir", str(root / "comp")]) == 0
    assert (
        main(
            [
                "gaze-process", "--config", cfg, "--in", str(fx / "gaze.csv"),
                "--out-fixations", str(root / "fix.csv"), "--out-density", str(root / "gt"),
            ]
        )
        == 0
    )
    return root


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
