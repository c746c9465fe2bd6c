import numpy as np
import pytest
import torch

from untrace.core.rng import Rng
from untrace.features import toy_feature_extractor

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_fx():
    # identity features: perceptual loss degenerates to plain pixel L2,
    # keeping loss tests fast and analytically checkable
    return toy_feature_extractor()


@pytest.fixture()
def rng():
    return Rng(1234)


def random_image(r: Rng, side: int = 32) -> np.ndarray:
    return r.uniform(0.0, 1.0, size=(3, side, side)).astype(np.float32)


@pytest.fixture()
def image(rng):
    return random_image(rng.child("img"))


@pytest.fixture()
def image_pair(rng):
    return (
        random_image(rng.child("a")),
        random_image(rng.child("b")),
    )
