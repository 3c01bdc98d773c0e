from pathlib import Path

import pytest

from genclass.config import load_config
from genclass.data import make_synthetic
from genclass.trainer import train

SYNTHETIC_CONF = Path(__file__).resolve().parents[1] / "configs" / "synthetic.conf"
SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def synthetic_settings():
    return load_config(SYNTHETIC_CONF)


@pytest.fixture(scope="session")
def synthetic_dataset(synthetic_settings):
    return make_synthetic(synthetic_settings.synth)


@pytest.fixture(scope="session")
def synthetic_runs(synthetic_settings, synthetic_dataset, tmp_path_factory):
    """Full synthetic training runs, one per seed, each written to its own run directory."""
    runs = {}
    for seed in SEEDS:
        config = load_config(SYNTHETIC_CONF).train
        config.seed = seed
        out = tmp_path_factory.mktemp(f"synthetic_seed{seed}")
        runs[seed] = train(config, synthetic_dataset, out, settings_echo=synthetic_settings.echo())
    return runs


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
