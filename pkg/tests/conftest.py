import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from convtransseg.data import synth_generate


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small synthetic dataset shared by trainer and CLI tests (16 samples, 32px)."""
    root = tmp_path_factory.mktemp("tinyset")
    manifest = synth_generate(root, count=16, size=32, classes=2, seed=11)
    return manifest
