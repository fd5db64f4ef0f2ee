"""Probes: pure-optimization ceiling vs densify-with-repair-window."""
import sys
import time

import numpy as np

from splatlab.optimizer import (TrainConfig, TrainState, TrainView, compute_metrics,
                                densify_and_prune, render_view, train_step)
from splatlab.scene_io import init_random
from splatlab.toydata import make_toy_cameras, make_toy_cloud, render_toy_views


def run(name, init, seed, iters=2000, densify_until=None, res=128):
    gt = make_toy_cloud(7)
    train_cams, test_cams = make_toy_cameras(24, 3, resolution=res, distance=4.0,
                                             focal=float(res))
    bg = np.zeros(3)
    views = [TrainView(c, i) for c, i in zip(train_cams, render_toy_views(gt, train_cams, bg))]
    test_imgs = render_toy_views(gt, test_cams, bg)
    config = TrainConfig(total_iters=iters)
    state = TrainState(init, scene_extent=4.0, seed=seed)
    t0 = time.perf_counter()
    clones = splits = pruned = 0
    for it in range(1, iters + 1):
        step = train_step(state, views, config)
        densify_ok = densify_until is None or it <= densify_until
        if densify_ok and it > config.densify_start and it % config.densify_interval == 0:
            rep = densify_and_prune(state, config)
            clones += rep.cloned
            splits += rep.split
            pruned += rep.pruned
        if it % 500 == 0:
            print(f'  {name}: iter={it} loss={step.loss:.5f} n={len(state.cloud)} '
                  f'psnr={step.psnr:.2f}', flush=True)
    psnrs = []
    for cam, img in zip(test_cams, test_imgs):
        out, _, _ = render_view(state.cloud, cam, bg, state.active_sh_degree)
        psnrs.append(compute_metrics(out.image, img)[0])
    print(f'{name}: mean={np.mean(psnrs):.2f} {[f"{p:.2f}" for p in psnrs]} '
          f'n={len(state.cloud)} clones={clones} splits={splits} pruned={pruned} '
          f'time={time.perf_counter() - t0:.0f}s', flush=True)


which = sys.argv[1] if len(sys.argv) > 1 else "all"

init1024 = init_random(1024, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))

if which in ("P", "all"):
    run("P_pure_1024", init1024, seed=42, densify_until=0)

if which in ("Q", "all"):
    run("Q_until1500", init1024, seed=42, densify_until=1500)

if which in ("R", "all"):
    run("R_until1000", init1024, seed=42, densify_until=1000)
