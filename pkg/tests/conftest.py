import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mvkit.geometry import compose, grid_homography, ground_projection_matrix
from mvkit.synth import SceneConfig, default_grid, generate_scene, render_view_heatmap


@pytest.fixture(scope="session")
def desk_scene():
    """Default desk-scale scene shared by the heavier tests."""
    cfg = SceneConfig()
    return generate_scene(cfg)


@pytest.fixture(scope="session")
def desk_grid():
    return default_grid()


@pytest.fixture(scope="session")
def desk_t_grids(desk_scene, desk_grid):
    gh = grid_homography(desk_grid)
    return [compose(ground_projection_matrix(c), gh) for c in desk_scene.cameras]


@pytest.fixture(scope="session")
def desk_images(desk_scene):
    """Pre-rendered view heatmaps, images[frame][view]."""
    cfg = desk_scene.config
    return [
        [render_view_heatmap(desk_scene, v, f) for v in range(cfg.n_cameras)]
        for f in range(cfg.n_frames)
    ]
