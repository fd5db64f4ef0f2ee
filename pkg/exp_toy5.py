"""Fifth matrix: isotropic ground-truth blobs."""
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


def run(name, init, seed, iters=2000, res=128):
    gt = make_iso_cloud(7)
    focal = res * 4.0 / 4.0 * res / res * float(res)  # = res for distance 4
    train_cams, test_cams = make_toy_cameras(24, 3, resolution=res, distance=4.0,
                                             focal=float(res))
    extent = compute_scene_extent(train_cams)
    bg = np.zeros(3)
    views = [TrainView(c, i) for c, i in zip(train_cams, render_toy_views(gt, train_cams, bg))]
    test_imgs = render_toy_views(gt, test_cams, bg)
    config = TrainConfig(total_iters=iters)
    state = TrainState(init, scene_extent=extent, seed=seed)
    t0 = time.perf_counter()
    events = train(state, views, config, iterations=iters, eval_interval=500,
                   progress=lambda s: print(f'  {name}: {s}', flush=True))
    psnrs = []
    for cam, img in zip(test_cams, test_imgs):
        out, _, _ = render_view(state.cloud, cam, bg, state.active_sh_degree)
        psnrs.append(compute_metrics(out.image, img)[0])
    print(f'{name}: mean={np.mean(psnrs):.2f} {[f"{p:.2f}" for p in psnrs]} '
          f'n={len(state.cloud)} clones={sum(e.cloned for e in events)} '
          f'splits={sum(e.split for e in events)} pruned={sum(e.pruned for e in events)} '
          f'time={time.perf_counter()-t0:.0f}s', flush=True)


which = sys.argv[1] if len(sys.argv) > 1 else "all"
if which in ("V", "all"):
    init = init_random(1024, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("V_iso_1024", init, seed=42)
if which in ("X", "all"):
    init = init_random(512, bounds=(np.full(3, -1.8), np.full(3, 1.8)),
                       rng=np.random.default_rng(42))
    run("X_iso_512", init, seed=42)
