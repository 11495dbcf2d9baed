from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from airmark import synthgen
from airmark.imaging import ImageRGB


@pytest.fixture(scope="session")
def clean_corpus(tmp_path_factory) -> Path:
    """50 + 50 clean frames at the paper's 400x225 working resolution."""
    root = tmp_path_factory.mktemp("clean_corpus")
    synthgen.generate_corpus(50, 50, 400, 225, seed=311, out_dir=root, clean=True)
    return root


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Path:
    """Tiny degraded corpus for fast classifier/pipeline unit tests."""
    root = tmp_path_factory.mktemp("small_corpus")
    synthgen.generate_corpus(8, 8, 200, 112, seed=99, out_dir=root)
    return root


@pytest.fixture()
def random_image() -> ImageRGB:
    rng = np.random.default_rng(1234)
    return ImageRGB.from_array(rng.uniform(0.0, 1.0, (24, 32, 3)))
