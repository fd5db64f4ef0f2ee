"""Tile-binned forward renderer: one global key sort, then per-tile front-to-back blending."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ProjectedSplats

TILE_SIZE = 16
# Blending guards: contributions below ALPHA_EPS are skipped in both passes,
# per-splat alpha is clamped at ALPHA_CLAMP, and a pixel stops accepting
# splats before its accumulated opacity can exceed SATURATION.
ALPHA_EPS = 1.0 / 255.0
ALPHA_CLAMP = 0.99
SATURATION = 0.9999
# Splats per vectorized batch; tiles are re-checked for saturation at every
# batch boundary so fully opaque tiles terminate early.
CHUNK = 64

MAX_TILES = 2**32 - 1
MAX_INSTANCES = 2**31


class ResourceLimitError(RuntimeError):
    """Raised when a render would exceed the supported tile or instance count."""


def resolve_workers(workers: int | None = None, deterministic: bool = False) -> int:
    """Worker count for tile-parallel passes, capped by SPLATLAB_THREADS."""
    if deterministic:
        return 1
    if workers is None:
        workers = os.cpu_count() or 1
    cap = os.environ.get("SPLATLAB_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


@dataclass
class TileBinning:
    """Sorted splat instances: 64-bit keys, parallel splat ids, per-tile ranges."""

    keys: np.ndarray        # (K,) uint64, tile index in the high bits, depth below
    splat_ids: np.ndarray   # (K,) int64 indices into the ProjectedSplats arrays
    ranges: np.ndarray      # (num_tiles, 2) [start, end) into the sorted arrays
    tiles_x: int
    tiles_y: int


def make_keys(tile_ids: np.ndarray, depths: np.ndarray) -> np.ndarray:
    """Pack (tile, depth) into sortable 64-bit keys.

    The depth occupies the low 32 bits as the raw bits of the non-negative
    float32 value, which preserves ordering; the tile index sits above it.
    """
    depth_bits = np.ascontiguousarray(depths, dtype=np.float32).view(np.uint32)
    return (tile_ids.astype(np.uint64) << np.uint64(32)) | depth_bits.astype(np.uint64)


def tile_extent(width: int, height: int) -> tuple[int, int]:
    return (width + TILE_SIZE - 1) // TILE_SIZE, (height + TILE_SIZE - 1) // TILE_SIZE


def bin_and_sort(splats: ProjectedSplats, width: int, height: int) -> TileBinning:
    """Duplicate each splat into every tile its radius box overlaps and sort.

    A single stable sort on the packed keys orders every tile's list
    front-to-back at once; equal depths keep splat-index order. Per-tile
    ranges are found by comparing neighboring tile ids in the sorted array.
    """
    tiles_x, tiles_y = tile_extent(width, height)
    num_tiles = tiles_x * tiles_y
    if num_tiles > MAX_TILES:
        raise ResourceLimitError(f"{num_tiles} tiles exceeds the 32-bit tile index")

    m = len(splats)
    ranges = np.zeros((num_tiles, 2), dtype=np.int64)
    if m == 0:
        return TileBinning(np.zeros(0, np.uint64), np.zeros(0, np.int64), ranges, tiles_x, tiles_y)

    mx, my = splats.mean2d[:, 0], splats.mean2d[:, 1]
    r = splats.radius.astype(np.float64)
    x0 = np.floor((mx - r) / TILE_SIZE).astype(np.int64)
    x1 = np.floor((mx + r) / TILE_SIZE).astype(np.int64)
    y0 = np.floor((my - r) / TILE_SIZE).astype(np.int64)
    y1 = np.floor((my + r) / TILE_SIZE).astype(np.int64)
    valid = (x1 >= 0) & (x0 < tiles_x) & (y1 >= 0) & (y0 < tiles_y)
    x0 = np.clip(x0, 0, tiles_x - 1)
    x1 = np.clip(x1, 0, tiles_x - 1)
    y0 = np.clip(y0, 0, tiles_y - 1)
    y1 = np.clip(y1, 0, tiles_y - 1)
    counts = np.where(valid, (x1 - x0 + 1) * (y1 - y0 + 1), 0)

    total = int(counts.sum())
    if total > MAX_INSTANCES:
        raise ResourceLimitError(f"{total} splat instances exceed the supported limit")
    if total == 0:
        return TileBinning(np.zeros(0, np.uint64), np.zeros(0, np.int64), ranges, tiles_x, tiles_y)

    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    splat_of = np.repeat(np.arange(m, dtype=np.int64), counts)
    local = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    span_x = np.repeat(x1 - x0 + 1, counts)
    tx = np.repeat(x0, counts) + local % span_x
    ty = np.repeat(y0, counts) + local // span_x
    tile_of = ty * tiles_x + tx

    keys = make_keys(tile_of, splats.depth[splat_of])
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    splat_ids = splat_of[order]

    tile_sorted = (keys >> np.uint64(32)).astype(np.int64)
    change = np.nonzero(np.diff(tile_sorted))[0] + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [total]))
    ranges[tile_sorted[starts], 0] = starts
    ranges[tile_sorted[starts], 1] = ends
    return TileBinning(keys, splat_ids, ranges, tiles_x, tiles_y)


@dataclass
class RenderOutput:
    image: np.ndarray                       # (H, W, 3) linear RGB
    final_transmittance: np.ndarray | None  # (H, W), training mode only
    last_contributor: np.ndarray | None     # (H, W) int64 into the sorted arrays, -1 = none


@lru_cache(maxsize=4096)
def _tile_pixels_cached(tile: int, tiles_x: int, width: int, height: int, dtype_name: str):
    ty, tx = divmod(tile, tiles_x)
    px0, py0 = tx * TILE_SIZE, ty * TILE_SIZE
    px1, py1 = min(px0 + TILE_SIZE, width), min(py0 + TILE_SIZE, height)
    cols = np.arange(px0, px1)
    rows = np.arange(py0, py1)
    cc, rr = np.meshgrid(cols, rows)
    pix = np.stack([cc.ravel() + 0.5, rr.ravel() + 0.5], axis=1).astype(dtype_name)
    pix.setflags(write=False)
    return pix, (slice(py0, py1), slice(px0, px1)), (py1 - py0, px1 - px0)


def _tile_pixels(tile: int, tiles_x: int, width: int, height: int, dtype):
    """Pixel-center coordinates and the row/col block of one tile (cached)."""
    return _tile_pixels_cached(tile, tiles_x, width, height, np.dtype(dtype).name)


def _blend_tile(splats, ids, pix, background, training):
    """Front-to-back blend of one tile's sorted splat list, in CHUNK batches.

    Returns (colors, transmittance, last_contributor_local). The raw
    transmittance (product over every candidate splat) drives the saturation
    stop exactly as a sequential per-splat loop would, while the effective
    transmittance only accumulates splats that actually blended.
    """
    dt = background.dtype
    p = pix.shape[0]
    color = np.zeros((p, 3), dtype=dt)
    t_raw = np.ones(p, dtype=dt)
    t_eff = np.ones(p, dtype=dt)
    last = np.full(p, -1, dtype=np.int64)

    for start in range(0, ids.shape[0], CHUNK):
        sub = ids[start:start + CHUNK]
        mean2d = splats.mean2d[sub]
        con = splats.conic[sub]
        dx = pix[None, :, 0] - mean2d[:, 0, None]
        dy = pix[None, :, 1] - mean2d[:, 1, None]
        power = (-0.5 * (con[:, 0, None] * dx * dx + con[:, 2, None] * dy * dy)
                 - con[:, 1, None] * dx * dy)
        gauss = np.where(power > 0.0, 0.0, np.exp(np.minimum(power, 0.0)))
        a = np.minimum(ALPHA_CLAMP, splats.alpha[sub, None] * gauss)
        a[a < ALPHA_EPS] = 0.0

        p_abs = t_raw * np.cumprod(1.0 - a, axis=0)
        include = (a > 0.0) & ~((1.0 - p_abs) > SATURATION)
        a_eff = np.where(include, a, 0.0)
        q = t_eff * np.cumprod(1.0 - a_eff, axis=0)
        t_before = np.vstack([t_eff[None, :], q[:-1]])
        w = t_before * a_eff
        color += w.T @ splats.color[sub]

        if training:
            any_inc = include.any(axis=0)
            last_local = a.shape[0] - 1 - np.argmax(include[::-1], axis=0)
            last[any_inc] = start + last_local[any_inc]

        t_raw = p_abs[-1]
        t_eff = q[-1]
        if np.all((1.0 - t_raw) > SATURATION):
            break

    color += t_eff[:, None] * background
    return color, t_eff, last


def render_forward(splats: ProjectedSplats, binning: TileBinning, width: int, height: int,
                   background, training: bool = False, workers: int = 1) -> RenderOutput:
    """Render the binned splats front-to-back over every tile.

    In training mode the per-pixel final transmittance and the index of the
    last blended splat (into the sorted instance arrays) are recorded for the
    backward pass. Tiles are independent; `workers` > 1 processes them in a
    thread pool.
    """
    dt = splats.mean2d.dtype if len(splats) else np.float64
    background = np.asarray(background, dtype=dt)
    image = np.empty((height, width, 3), dtype=dt)
    t_final = np.ones((height, width), dtype=dt) if training else None
    last = np.full((height, width), -1, dtype=np.int64) if training else None

    def run(tile):
        start, end = binning.ranges[tile]
        pix, block, shape = _tile_pixels(tile, binning.tiles_x, width, height, dt)
        if start == end:
            image[block] = background
            return
        ids = binning.splat_ids[start:end]
        color, t_eff, last_local = _blend_tile(splats, ids, pix, background, training)
        image[block] = color.reshape(shape + (3,))
        if training:
            t_final[block] = t_eff.reshape(shape)
            contrib = last_local.reshape(shape)
            hit = contrib >= 0
            out = np.full(shape, -1, dtype=np.int64)
            out[hit] = contrib[hit] + start
            last[block] = out

    tiles = range(binning.tiles_x * binning.tiles_y)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, tiles))
    else:
        for tile in tiles:
            run(tile)
    return RenderOutput(image=image, final_transmittance=t_final, last_contributor=last)


@dataclass
class SplatGrads2D:
    """Loss gradients w.r.t. the 2D splat parameters, aligned with ProjectedSplats."""

    d_color: np.ndarray    # (M, 3)
    d_alpha: np.ndarray    # (M,)
    d_mean2d: np.ndarray   # (M, 2)
    d_conic: np.ndarray    # (M, 3)


def render_backward(d_image: np.ndarray, output: RenderOutput, splats: ProjectedSplats,
                    binning: TileBinning, width: int, height: int, background,
                    workers: int = 1) -> SplatGrads2D:
    """Backward pass over the same tile lists, traversed back-to-front.

    Delegates the per-pixel chain rule to gradients.backward_blend and
    accumulates per-splat gradients across tiles. With workers > 1 each
    worker accumulates locally and partial sums are merged afterward, so
    float ordering may differ slightly from the single-worker result.
    """
    from .gradients import backward_blend

    if output.final_transmittance is None or output.last_contributor is None:
        raise ValueError("backward pass needs a training-mode RenderOutput")
    dt = splats.mean2d.dtype if len(splats) else np.float64
    background = np.asarray(background, dtype=dt)
    m = len(splats)

    def make_acc():
        return SplatGrads2D(
            d_color=np.zeros((m, 3), dtype=dt),
            d_alpha=np.zeros(m, dtype=dt),
            d_mean2d=np.zeros((m, 2), dtype=dt),
            d_conic=np.zeros((m, 3), dtype=dt),
        )

    def run(tiles, acc):
        for tile in tiles:
            start, end = binning.ranges[tile]
            if start == end:
                continue
            pix, block, _ = _tile_pixels(tile, binning.tiles_x, width, height, dt)
            d_block = d_image[block].reshape(-1, 3).astype(dt, copy=False)
            if not d_block.any():
                continue
            ids = binning.splat_ids[start:end]
            last_local = output.last_contributor[block].reshape(-1) - start
            t_final = output.final_transmittance[block].reshape(-1)
            d_color, d_alpha, d_mean2d, d_conic = backward_blend(
                d_block, pix, t_final, last_local,
                splats.mean2d[ids], splats.conic[ids], splats.alpha[ids],
                splats.color[ids], background,
            )
            acc.d_color[ids] += d_color
            acc.d_alpha[ids] += d_alpha
            acc.d_mean2d[ids] += d_mean2d
            acc.d_conic[ids] += d_conic

    num_tiles = binning.tiles_x * binning.tiles_y
    if workers > 1:
        chunks = np.array_split(np.arange(num_tiles), workers)
        accs = [make_acc() for _ in chunks]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda args: run(*args), zip(chunks, accs)))
        total = make_acc()
        for acc in accs:
            total.d_color += acc.d_color
            total.d_alpha += acc.d_alpha
            total.d_mean2d += acc.d_mean2d
            total.d_conic += acc.d_conic
        return total
    acc = make_acc()
    run(range(num_tiles), acc)
    return acc
