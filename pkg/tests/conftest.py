import numpy as np
import pytest

from vpet.data import Quadruped, SynthConfig, synthesize_dataset
from vpet.motion_vae import TrainConfig


@pytest.fixture(scope="session")
def quad():
    return Quadruped.build()


@pytest.fixture(scope="session")
def small_set(quad):
    """A handful of clips from a few scenes, shared across test modules."""
    return synthesize_dataset(SynthConfig(n_clips=24, n_scenes=3, n_bg=512, clips_per_record=3, seed=11), quad)


@pytest.fixture
def tiny_cfg():
    """Narrow networks so gradient checks and short training runs stay quick."""
    return TrainConfig(embed=16, hidden=16, latent_traj=8, latent_artic=8, n_bg=128, n_fg=64,
                       batch=4, epochs=1, checkpoint_every=0)


def random_unit_quat(rng, n=None):
    q = rng.standard_normal((4,) if n is None else (n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


@pytest.fixture(scope="session")
def default_density_set(quad):
    """Same layout as ``small_set`` but with the default background density."""
    return synthesize_dataset(SynthConfig(n_clips=24, n_scenes=3, clips_per_record=3, seed=11), quad)
