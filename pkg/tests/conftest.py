import importlib.resources

import numpy as np
import pytest

from dlv.network import LayerSpec, Network


def fixture_path(name: str):
    return importlib.resources.files("dlv.fixtures") / name


@pytest.fixture(scope="session")
def curve2d():
    from dlv.weights_io import load_network

    return load_network(fixture_path("curve2d.json"))


@pytest.fixture(scope="session")
def minidigits():
    from dlv.weights_io import load_network

    return load_network(fixture_path("minidigits.json"))


@pytest.fixture(scope="session")
def digit_images():
    from dlv.images_io import load_images_csv

    return load_images_csv(fixture_path("digits_test_images.csv")).reshape(-1, 8, 8)


def random_relu_net(rng: np.random.Generator, sizes, scale=1.0, input_range=None) -> Network:
    """Dense ReLU classifier with seeded weights, linear output layer."""
    layers = []
    for i in range(len(sizes) - 1):
        w = rng.normal(0.0, scale / np.sqrt(sizes[i]), size=(sizes[i + 1], sizes[i]))
        b = rng.normal(0.0, 0.1, size=sizes[i + 1])
        layers.append(LayerSpec("dense", w, b))
        if i < len(sizes) - 2:
            layers.append(LayerSpec("relu"))
    low, high = input_range if input_range else (None, None)
    return Network(
        layers=tuple(layers), input_shape=(sizes[0],), class_count=sizes[-1],
        input_low=low, input_high=high,
    )


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x.reshape(-1))
    flat = x.reshape(-1)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        g[i] = (f((flat + e).reshape(x.shape)) - f((flat - e).reshape(x.shape))) / (2 * h)
    return g.reshape(x.shape)
