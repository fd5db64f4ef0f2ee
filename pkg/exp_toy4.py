"""Fourth matrix: fibonacci cameras + densify window ending mid-run."""
import sys
import time

import numpy as np

from splatlab.optimizer import (TrainConfig, TrainState, TrainView, compute_metrics,
                                render_view, train)
from splatlab.scene_io import compute_scene_extent, init_random
from splatlab.toydata import make_toy_cameras, make_toy_cloud, render_toy_views


def run(name, init, seed, iters=2000, res=128, distance=4.0, gt_seed=7, **cfg):
    gt = make_toy_cloud(gt_seed)
    focal = res * distance / 4.0
    train_cams, test_cams = make_toy_cameras(24, 3, resolution=res, distance=distance,
                                             focal=focal)
    extent = compute_scene_extent(train_cams)
    bg = np.zeros(3)
    views = [TrainView(c, i) for c, i in zip(train_cams, render_toy_views(gt, train_cams, bg))]
    test_imgs = render_toy_views(gt, test_cams, bg)
    config = TrainConfig(total_iters=iters, **cfg)
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

if which in ("S", "all"):
    init = init_random(1024, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("S_fib_1024", init, seed=42)

if which in ("T", "all"):
    init = init_random(512, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("T_fib_512", init, seed=42)

if which in ("U", "all"):
    init = init_random(1024, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("U_fib_pure", init, seed=42, densify_until=0)
