"""Shared test utilities: oracle renderers, finite differences, scene factories."""
from __future__ import annotations

import numpy as np

from splatlab.core import Camera, GaussianCloud, project
from splatlab.optimizer import render_view
from splatlab.rasterizer import bin_and_sort, render_forward

TILE = 16


def brute_force_render(splats, width, height, background, dtype=np.float64):
    """Per-pixel reference renderer, written independently of the tile path.

    For each pixel it gathers every splat whose radius box touches the pixel's
    tile, orders them by (float32 depth, splat index), and walks the blend
    sequentially with the same guards the production renderer documents.
    """
    one = dtype(1.0)
    background = np.asarray(background, dtype=dtype)
    image = np.empty((height, width, 3), dtype=dtype)
    m = len(splats)
    mean2d = splats.mean2d.astype(dtype)
    conic = splats.conic.astype(dtype)
    alpha = splats.alpha.astype(dtype)
    colors = splats.color.astype(dtype)
    depth32 = splats.depth.astype(np.float32)
    radius = splats.radius.astype(np.float64)

    # Candidate splats per tile, via an explicit interval-overlap test.
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    tile_candidates = {}
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            lo_x, hi_x = tx * TILE, (tx + 1) * TILE
            lo_y, hi_y = ty * TILE, (ty + 1) * TILE
            cand = []
            for s in range(m):
                if mean2d[s, 0] + radius[s] < lo_x or mean2d[s, 0] - radius[s] >= hi_x:
                    continue
                if mean2d[s, 1] + radius[s] < lo_y or mean2d[s, 1] - radius[s] >= hi_y:
                    continue
                cand.append(s)
            cand.sort(key=lambda s: (depth32[s], s))
            tile_candidates[(tx, ty)] = cand

    for row in range(height):
        for col in range(width):
            px = dtype(col + 0.5)
            py = dtype(row + 0.5)
            cand = tile_candidates[(col // TILE, row // TILE)]
            transmittance = one
            color = np.zeros(3, dtype=dtype)
            for s in cand:
                dx = px - mean2d[s, 0]
                dy = py - mean2d[s, 1]
                power = (-dtype(0.5) * (conic[s, 0] * dx * dx + conic[s, 2] * dy * dy)
                         - conic[s, 1] * dx * dy)
                if power > 0.0:
                    continue
                a = min(dtype(0.99), alpha[s] * np.exp(power))
                if a < 1.0 / 255.0:
                    continue
                t_new = transmittance * (one - a)
                if (one - t_new) > 0.9999:
                    break
                color = color + transmittance * a * colors[s]
                transmittance = t_new
            image[row, col] = color + transmittance * background
    return image


def brute_force_tile_lists(splats, width, height):
    """Reference binning: splat ids per tile, depth-then-index ordered."""
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    depth32 = splats.depth.astype(np.float32)
    radius = splats.radius.astype(np.float64)
    lists = {}
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            lo_x, hi_x = tx * TILE, (tx + 1) * TILE
            lo_y, hi_y = ty * TILE, (ty + 1) * TILE
            cand = [
                s for s in range(len(splats))
                if not (splats.mean2d[s, 0] + radius[s] < lo_x
                        or splats.mean2d[s, 0] - radius[s] >= hi_x
                        or splats.mean2d[s, 1] + radius[s] < lo_y
                        or splats.mean2d[s, 1] - radius[s] >= hi_y)
            ]
            cand.sort(key=lambda s: (depth32[s], s))
            lists[ty * tiles_x + tx] = cand
    return lists


def random_splat_scene(rng, count, width, height, depth_range=(2.0, 20.0)):
    """Random world-space cloud plus a camera that sees most of it."""
    means = np.zeros((count, 3))
    means[:, 0] = rng.uniform(-0.45, 0.45, count)
    means[:, 1] = rng.uniform(-0.45, 0.45, count)
    means[:, 2] = 1.0
    depths = rng.uniform(*depth_range, count)
    means *= depths[:, None]
    q = rng.normal(size=(count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    log_scales = np.log(rng.uniform(0.02, 0.3, (count, 3)) * depths[:, None] / 10.0)
    opacity_logits = rng.uniform(-2.0, 2.5, count)
    sh = rng.normal(scale=0.35, size=(count, 16, 3))
    cloud = GaussianCloud(means, q, log_scales, opacity_logits, sh)
    camera = Camera(np.eye(3), np.zeros(3), float(width), float(height),
                    width / 2.0, height / 2.0, width, height, near=0.1)
    return cloud, camera


def render_for_test(cloud, camera, background, degree=3, dtype=np.float64, training=False):
    splats = project(cloud, camera, degree, dtype=dtype)
    binning = bin_and_sort(splats, camera.width, camera.height)
    out = render_forward(splats, binning, camera.width, camera.height,
                         np.asarray(background, dtype=dtype), training=training)
    return out, splats, binning


def scene_objective(cloud, camera, weights, background, degree=3):
    """Scalar functional of the rendered image, for finite differencing."""
    out, _, _ = render_for_test(cloud, camera, background, degree)
    return float(np.sum(out.image * weights))


PARAM_SHAPES = {
    "means": (3,),
    "rotations": (4,),
    "log_scales": (3,),
    "opacity_logits": (),
    "sh": (16, 3),
}


def fd_gradient(cloud, camera, weights, background, group, gaussian, flat_index,
                degree=3, h=1e-4):
    """Central finite difference of the weighted-image objective."""
    def evaluate(delta):
        c = cloud.copy()
        arr = getattr(c, group)
        flat = arr[gaussian].reshape(-1) if arr.ndim > 1 else arr[gaussian:gaussian + 1]
        flat[flat_index] += delta
        return scene_objective(c, camera, weights, background, degree)

    return (evaluate(h) - evaluate(-h)) / (2.0 * h)


def analytic_gradients(cloud, camera, weights, background, degree=3):
    from splatlab.gradients import backward_project
    from splatlab.rasterizer import render_backward

    out, splats, binning = render_for_test(cloud, camera, background, degree, training=True)
    grads2d = render_backward(np.asarray(weights, dtype=np.float64), out, splats, binning,
                              camera.width, camera.height, np.asarray(background))
    return backward_project(cloud, camera, splats, grads2d, degree)


def grad_matches(analytic, numeric, rel_tol=1e-4, abs_tol=1e-7):
    denom = max(abs(analytic), abs(numeric))
    if denom < abs_tol:
        return True
    return abs(analytic - numeric) / denom < rel_tol


def fd_safe(cloud, camera, background, degree=3, alpha_margin=2e-5, tile_margin=0.02,
            sat_margin=1e-6, color_margin=1e-3):
    """Whether a scene sits safely away from the renderer's discontinuities.

    Finite differencing is only meaningful when no blend weight is near the
    skip threshold or the 0.99 clamp, no pixel is near the saturation stop,
    no SH color is near the zero clamp, and no radius box edge is near a tile
    boundary (which would flip tile coverage under perturbation). The margins
    only need to exceed how far an h=1e-4 parameter step can move each
    guarded quantity, which is well under 1e-4 for these scene scales.
    """
    splats = project(cloud, camera, degree)
    if len(splats) != len(cloud):
        return False  # culled Gaussians would make the objective non-smooth
    cols = np.arange(camera.width) + 0.5
    rows = np.arange(camera.height) + 0.5
    cc, rr = np.meshgrid(cols, rows)
    pix = np.stack([cc.ravel(), rr.ravel()], axis=1)
    dx = pix[None, :, 0] - splats.mean2d[:, 0, None]
    dy = pix[None, :, 1] - splats.mean2d[:, 1, None]
    con = splats.conic
    power = (-0.5 * (con[:, 0, None] * dx * dx + con[:, 2, None] * dy * dy)
             - con[:, 1, None] * dx * dy)
    a_raw = splats.alpha[:, None] * np.exp(np.minimum(power, 0.0))
    if np.any(np.abs(a_raw - 1.0 / 255.0) < alpha_margin):
        return False
    if np.any(np.abs(a_raw - 0.99) < 1e-4):
        return False

    # saturation stop distance, using the same ordering as the renderer
    order = np.lexsort((np.arange(len(splats)), splats.depth.astype(np.float32)))
    a = np.minimum(0.99, a_raw[order])
    a[a < 1.0 / 255.0] = 0.0
    p_run = np.cumprod(1.0 - a, axis=0)
    if np.any(np.abs((1.0 - p_run) - 0.9999) < sat_margin):
        return False

    # SH clamp hinge distance
    basis_pre = np.einsum("nk,nkc->nc", splats.basis, cloud.sh) + 0.5
    if np.any(np.abs(basis_pre) < color_margin):
        return False

    # tile-boundary distance of every box edge (only matters with >1 tile)
    if camera.width > TILE or camera.height > TILE:
        r = splats.radius
        for edge in (splats.mean2d[:, 0] - r, splats.mean2d[:, 0] + r,
                     splats.mean2d[:, 1] - r, splats.mean2d[:, 1] + r):
            frac = np.abs(edge / TILE - np.round(edge / TILE))
            if np.any(frac < tile_margin):
                return False
        sig = 3.0 * np.sqrt(0.5 * (splats.cov2d[:, 0] + splats.cov2d[:, 2]) + np.sqrt(
            np.maximum(0.25 * (splats.cov2d[:, 0] - splats.cov2d[:, 2]) ** 2
                       + splats.cov2d[:, 1] ** 2, 0.0)))
        frac = np.abs(sig - np.round(sig))
        if np.any(frac < 5e-3):  # radius = ceil(3 sigma) steps here
            return False
    return True
