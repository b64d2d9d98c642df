import numpy as np
import pytest

from gaussocc.core import (
    ClassTaxonomy,
    GridSpec,
    ModelConfig,
    NUSCENES_CLASS_NAMES,
    default_taxonomy,
)
from gaussocc.harness import SceneConfig, generate_scene
from gaussocc.params import build_parameter_bundle


@pytest.fixture(scope="session")
def small_model() -> ModelConfig:
    return ModelConfig(
        feature_width=16,
        state_width=4,
        lidar_keypoints=4,
        image_keypoints=4,
        depth_chunks=4,
        depth_planes=8,
        head_blocks=2,
        semantic_classes=17,
    )


@pytest.fixture(scope="session")
def small_bundle(small_model):
    return build_parameter_bundle(small_model, seed=1234)


@pytest.fixture(scope="session")
def small_grid() -> GridSpec:
    return GridSpec(origin=np.array([-8.0, -8.0, -2.0]), voxel_size=np.array([0.5, 0.5, 0.25]), dims=(32, 32, 16))


@pytest.fixture(scope="session")
def taxonomy() -> ClassTaxonomy:
    return default_taxonomy()


@pytest.fixture(scope="session")
def small_taxonomy() -> ClassTaxonomy:
    names = NUSCENES_CLASS_NAMES[:6]
    return ClassTaxonomy(names=names, class_weights=np.ones(len(names) + 1))


@pytest.fixture(scope="session")
def small_scene(small_grid, small_taxonomy):
    config = SceneConfig(
        grid=small_grid,
        taxonomy=small_taxonomy,
        feature_width=16,
        depth_planes=8,
        plane_shape=(12, 16),
        cameras=2,
        camera_shape=(24, 32),
        blob_range=(3, 6),
    )
    return generate_scene(config, seed=99)
