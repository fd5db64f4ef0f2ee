"""Sixth matrix: margin tuning on the isotropic toy + SH-band diagnosis."""
import sys, time
import numpy as np
from scipy.special import logit

from splatlab.core import GaussianCloud
from splatlab.optimizer import (TrainConfig, TrainState, TrainView, compute_metrics,
                                render_view, train)
from splatlab.scene_io import compute_scene_extent, init_random
from splatlab.sh import rgb_to_sh0
from splatlab.toydata import TOY_COLORS, make_toy_cameras, render_toy_views


def make_iso_cloud(seed=7, count=8):
    rng = np.random.default_rng(seed)
    phi = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    zs = np.linspace(-0.7, 0.7, count)
    means = np.stack([
        1.1 * np.cos(phi) * np.sqrt(1 - zs**2),
        1.1 * np.sin(phi) * np.sqrt(1 - zs**2),
        1.1 * zs,
    ], axis=1)
    means += rng.normal(scale=0.08, size=means.shape)
    q = np.zeros((count, 4)); q[:, 0] = 1.0
    sigma = rng.uniform(0.25, 0.35, size=(count, 1))
    log_scales = np.log(np.repeat(sigma, 3, axis=1))
    alphas = rng.uniform(0.65, 0.9, size=count)
    sh = np.zeros((count, 16, 3))
    sh[:, 0, :] = rgb_to_sh0(TOY_COLORS[:count])
    return GaussianCloud(means, q, log_scales, logit(alphas), sh)


def run(name, count, seed, iters=2000, res=128):
    gt = make_iso_cloud(7)
    train_cams, test_cams = make_toy_cameras(24, 3, resolution=res, distance=4.0,
                                             focal=float(res))
    extent = compute_scene_extent(train_cams)
    bg = np.zeros(3)
    views = [TrainView(c, i) for c, i in zip(train_cams, render_toy_views(gt, train_cams, bg))]
    test_imgs = render_toy_views(gt, test_cams, bg)
    init = init_random(count, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(seed))
    config = TrainConfig(total_iters=iters)
    state = TrainState(init, scene_extent=extent, seed=seed)
    t0 = time.perf_counter()
    events = train(state, views, config, iterations=iters, eval_interval=1000)
    by_degree = {}
    for deg in range(state.active_sh_degree + 1):
        psnrs = []
        for cam, img in zip(test_cams, test_imgs):
            out, _, _ = render_view(state.cloud, cam, bg, deg)
            psnrs.append(compute_metrics(out.image, img)[0])
        by_degree[deg] = (float(np.mean(psnrs)), [f"{p:.2f}" for p in psnrs])
    print(f'{name}: n={len(state.cloud)} '
          f'clones={sum(e.cloned for e in events)} splits={sum(e.split for e in events)} '
          f'time={time.perf_counter()-t0:.0f}s', flush=True)
    for deg, (mean, per) in by_degree.items():
        print(f'  {name} eval@deg{deg}: mean={mean:.2f} {per}', flush=True)


name, count, seed = sys.argv[1], int(sys.argv[2]), int(sys.argv[3])
run(name, count, seed)
