"""Second matrix: telephoto toy scene, clone-friendly split threshold."""
import sys
import time

import numpy as np

from splatlab.optimizer import (TrainConfig, TrainState, TrainView, compute_metrics,
                                render_view, train)
from splatlab.scene_io import compute_scene_extent, init_random
from splatlab.toydata import make_toy_cameras, make_toy_cloud, render_toy_views


def run(name, gt, init, seed, iters=2000, res=128):
    train_cams, test_cams = make_toy_cameras(24, 3, resolution=res)
    extent = compute_scene_extent(train_cams)
    bg = np.zeros(3)
    views = [TrainView(c, i) for c, i in zip(train_cams, render_toy_views(gt, train_cams, bg))]
    test_imgs = render_toy_views(gt, test_cams, bg)
    config = TrainConfig(total_iters=iters)
    state = TrainState(init, scene_extent=extent, seed=seed)
    t0 = time.perf_counter()
    events = train(state, views, config, iterations=iters, eval_interval=500,
                   progress=lambda s: print(f'  {name}: {s}', flush=True))
    dt = time.perf_counter() - t0
    psnrs = []
    for cam, img in zip(test_cams, test_imgs):
        out, _, _ = render_view(state.cloud, cam, bg, state.active_sh_degree)
        psnrs.append(compute_metrics(out.image, img)[0])
    print(f'{name}: mean={np.mean(psnrs):.2f} {[f"{p:.2f}" for p in psnrs]} '
          f'n={len(state.cloud)} extent={extent:.1f} '
          f'clones={sum(e.cloned for e in events)} splits={sum(e.split for e in events)} '
          f'pruned={sum(e.pruned for e in events)} time={dt:.0f}s', flush=True)


which = sys.argv[1] if len(sys.argv) > 1 else "all"
gt = make_toy_cloud(7)

if which in ("G", "all"):
    init = init_random(512, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("G_tele_512", gt, init, seed=42)

if which in ("H", "all"):
    init = init_random(256, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(11))
    run("H_tele_256", gt, init, seed=11)

if which in ("F2", "all"):
    rng = np.random.default_rng(1)
    near = gt.copy()
    near.means += rng.normal(scale=0.05, size=near.means.shape)
    near.log_scales += rng.normal(scale=0.15, size=near.log_scales.shape)
    near.sh[:, 0, :] += rng.normal(scale=0.15, size=(8, 3))
    near.opacity_logits += rng.normal(scale=0.3, size=8)
    run("F2_tele_near_gt", gt, near, seed=42)

if which in ("D2", "all"):
    # criterion 4 shape: init downsampled to 2 gaussians
    init = init_random(512, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("D2_two_init", gt, init.select(np.arange(2)), seed=42)
