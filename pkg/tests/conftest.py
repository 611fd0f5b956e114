"""Shared fixtures for the test suite.

Most tests build their own small instances inline; these fixtures cover the
common case of "any valid dataset / any valid model" so the expensive scene
generation runs once per session.
"""
import numpy as np
import pytest

from epimatch.pipeline import ModelConfig, ModelParams
from epimatch.scenes import SceneConfig, gen_dataset

TINY_MODEL = ModelConfig(d=8, blocks=2, lfc_enabled=True, lfc_k=3, lfc_heads=2)


@pytest.fixture(scope="session")
def tiny_records():
    cfg = SceneConfig(seed=5, pairs=4, n=24, outlier_ratio=0.25, noise_sigma=1e-3)
    return gen_dataset(cfg)


@pytest.fixture(scope="session")
def tiny_params():
    return ModelParams.init(TINY_MODEL, seed=3)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
