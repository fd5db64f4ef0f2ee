"""Exploratory matrix for the toy-recovery acceptance experiment."""
import sys
import time

import numpy as np

from splatlab.core import GaussianCloud
from splatlab.optimizer import (TrainConfig, TrainState, TrainView, compute_metrics,
                                render_view, train)
from splatlab.scene_io import init_random
from splatlab.toydata import make_toy_cameras, make_toy_cloud, render_toy_views


def run(name, gt, init, seed, iters=2000, res=128):
    train_cams, test_cams = make_toy_cameras(24, 3, resolution=res)
    bg = np.zeros(3)
    views = [TrainView(c, i) for c, i in zip(train_cams, render_toy_views(gt, train_cams, bg))]
    test_imgs = render_toy_views(gt, test_cams, bg)
    config = TrainConfig(total_iters=iters)
    state = TrainState(init, scene_extent=4.0, seed=seed)
    t0 = time.perf_counter()
    events = train(state, views, config, iterations=iters, eval_interval=500,
                   progress=lambda s: print(f'  {name}: {s}', flush=True))
    dt = time.perf_counter() - t0
    psnrs = []
    for cam, img in zip(test_cams, test_imgs):
        out, _, _ = render_view(state.cloud, cam, bg, state.active_sh_degree)
        psnrs.append(compute_metrics(out.image, img)[0])
    print(f'{name}: mean={np.mean(psnrs):.2f} {[f"{p:.2f}" for p in psnrs]} '
          f'n={len(state.cloud)} clones={sum(e.cloned for e in events)} '
          f'splits={sum(e.split for e in events)} pruned={sum(e.pruned for e in events)} '
          f'time={dt:.0f}s', flush=True)


which = sys.argv[1] if len(sys.argv) > 1 else "all"

gt_default = make_toy_cloud(7)

if which in ("A", "all"):
    init = init_random(512, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("A_512init", gt_default, init, seed=42)

if which in ("B", "all"):
    init = init_random(1024, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("B_1024init", gt_default, init, seed=42)

if which in ("F", "all"):
    rng = np.random.default_rng(1)
    near_gt = gt_default.copy()
    near_gt.means += rng.normal(scale=0.05, size=near_gt.means.shape)
    near_gt.log_scales += rng.normal(scale=0.15, size=near_gt.log_scales.shape)
    near_gt.sh[:, 0, :] += rng.normal(scale=0.15, size=(8, 3))
    near_gt.opacity_logits += rng.normal(scale=0.3, size=8)
    run("F_near_gt", gt_default, near_gt, seed=42)
