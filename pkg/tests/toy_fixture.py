"""Pinned toy-scene configuration shared by the acceptance experiments."""
from __future__ import annotations

import numpy as np

from splatlab.optimizer import TrainConfig, TrainState, TrainView, compute_metrics, render_view
from splatlab.scene_io import compute_scene_extent, init_random
from splatlab.toydata import make_toy_cameras, make_toy_cloud, render_toy_views

TOY_GT_SEED = 7
TOY_TRAIN_SEED = 42
TOY_RESOLUTION = 128
TOY_DISTANCE = 4.0
TOY_INIT_COUNT = 2048
TOY_INIT_BOUNDS = (np.full(3, -1.8), np.full(3, 1.8))
BACKGROUND = np.zeros(3)


def build_toy_problem():
    """Ground truth cloud, training views, and held-out (camera, image) pairs."""
    gt = make_toy_cloud(TOY_GT_SEED)
    focal = TOY_RESOLUTION * TOY_DISTANCE / 4.0
    train_cams, test_cams = make_toy_cameras(24, 3, resolution=TOY_RESOLUTION,
                                             distance=TOY_DISTANCE, focal=focal)
    views = [TrainView(c, img) for c, img in
             zip(train_cams, render_toy_views(gt, train_cams, BACKGROUND))]
    held_out = list(zip(test_cams, render_toy_views(gt, test_cams, BACKGROUND)))
    extent = compute_scene_extent(train_cams)
    return gt, views, held_out, extent


def random_toy_init(count=TOY_INIT_COUNT, seed=TOY_TRAIN_SEED):
    return init_random(count, bounds=TOY_INIT_BOUNDS, rng=np.random.default_rng(seed))


def toy_config(iters=2000):
    return TrainConfig(total_iters=iters)


def held_out_psnrs(state: TrainState, held_out):
    values = []
    for cam, img in held_out:
        out, _, _ = render_view(state.cloud, cam, BACKGROUND, state.active_sh_degree)
        values.append(compute_metrics(out.image, img)[0])
    return values
