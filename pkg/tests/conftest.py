import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_specs():
    from fairgan.nn import DiscriminatorSpec, GeneratorSpec

    gen = GeneratorSpec(
        noise_dim=16,
        base_channels=8,
        image_shape=(1, 8, 8),
        num_up_blocks=2,
        outcome_hidden_dim=16,
    )
    disc = DiscriminatorSpec(
        base_channels=4, in_channels=1, num_down_blocks=2, y_head_hidden_dim=16
    )
    return gen, disc


def build_pair(tiny_specs, seed=0):
    from fairgan.nn import Discriminator, Generator, init_module

    gen_spec, disc_spec = tiny_specs
    g = Generator(gen_spec)
    d = Discriminator(disc_spec)
    rng = torch.Generator()
    rng.manual_seed(seed)
    init_module(g, rng)
    init_module(d, rng)
    return g, d, rng


@pytest.fixture
def tiny_pair(tiny_specs):
    return build_pair(tiny_specs)


def random_attributed(n=24, side=8, seed=0, labeled=True, channels=1, soft=False):
    """Small random dataset with all four (c, y) cells occupied."""
    from fairgan.datasets import AttributedDataset

    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, channels, side, side)).astype(np.float32)
    c = np.tile([0, 0, 1, 1], n // 4 + 1)[:n]
    y = np.tile([0, 1, 0, 1], n // 4 + 1)[:n] if labeled else None
    y_soft = None
    if labeled and soft:
        y_soft = ((2 * y - 1) * 0.8 + rng.normal(0, 0.01, size=n)).astype(np.float32)
    return AttributedDataset.from_arrays(x, c, y, y_soft)


@pytest.fixture
def tiny_dataset():
    return random_attributed()
