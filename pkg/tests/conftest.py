"""
Test configuration and fixtures.
"""
import numpy as np
import pytest

from src.dataset import default_motion_classes, generate_dataset
from src.models import Dataset, SkeletonSpec, default_skeleton
from src.modeling.inverter import InversionModels
from src.modeling.pose_gan import SinglePoseGenerator
from src.modeling.seq_gan import SequenceDiscriminator, SequenceGenerator


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full training checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(name="skeleton")
def skeleton_fixture() -> SkeletonSpec:
    """
    Default seven-joint skeleton.

    Returns:
        SkeletonSpec: Skeleton
    """
    return default_skeleton()


@pytest.fixture(name="small_dataset")
def small_dataset_fixture(skeleton: SkeletonSpec) -> Dataset:
    """
    Five classes, four sequences each, eight frames.

    Args:
        skeleton: Default skeleton

    Returns:
        Dataset: Procedural dataset with train and test splits
    """
    return generate_dataset(list(default_motion_classes().values()), per_class=4, length=8, seed=3, skeleton=skeleton)


@pytest.fixture(name="tiny_models")
def tiny_models_fixture() -> InversionModels:
    """
    Small untrained generator stack: J=2, m=3, n=4, C=2, T=6.

    Returns:
        InversionModels: Randomly initialized pose generator, sequence generator and discriminator
    """
    rng = np.random.default_rng(21)
    g0 = SinglePoseGenerator.create(rng, latent_dim=3, class_count=2, joint_count=2, hidden=[16])
    gen = SequenceGenerator.create(rng, noise_dim=4, latent_dim=3, class_count=2, hidden=8)
    disc = SequenceDiscriminator.create(rng, joint_count=2, class_count=2, hidden=8)
    return InversionModels(g0=g0, generator=gen, discriminator=disc, length=6)
