"""Training loop: loss, Adam updates, schedules, and adaptive density control."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logit

from .core import Camera, GaussianCloud, normalize_quaternions, project, quaternion_to_rotation
from .gradients import backward_project
from .rasterizer import bin_and_sort, render_backward, render_forward
from .ssim import ssim_backward, ssim_map


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite."""


@dataclass
class TrainConfig:
    lambda_dssim: float = 0.2
    densify_interval: int = 100
    densify_start: int = 500
    densify_until: int | None = None   # default: half the schedule
    densify_grad_threshold: float = 0.0002
    split_scale_threshold: float | None = None   # world units; default 1% of scene extent
    split_scale_percent: float = 0.01
    split_factor: float = 1.6
    opacity_reset_interval: int = 3000
    opacity_reset_alpha: float = 0.01
    prune_alpha_threshold: float = 0.005
    prune_world_percent: float = 0.10
    prune_screen_fraction: float = 0.5           # of image height
    warmup_upsample_iters: tuple[int, int] = (250, 500)
    sh_band_interval: int = 1000
    total_iters: int = 30000
    lr_means: float = 1.6e-4
    lr_means_final: float = 1.6e-6
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 2.5e-3 / 20.0
    lr_opacity: float = 5e-2
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-15
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ValueError("lambda_dssim must be in [0, 1]")
        for name in ("densify_interval", "opacity_reset_interval", "sh_band_interval", "total_iters"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("densify_grad_threshold", "split_factor", "prune_alpha_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def resolve_split_threshold(self, scene_extent: float) -> float:
        if self.split_scale_threshold is not None:
            return self.split_scale_threshold
        return self.split_scale_percent * scene_extent

    def resolve_densify_until(self) -> int:
        # refinement needs optimization steps after it to settle; stop at the
        # half-way point so the second half of the schedule converges cleanly
        if self.densify_until is not None:
            return self.densify_until
        return self.total_iters // 2

    def lr_means_at(self, iteration: int) -> float:
        """Exponentially decayed position learning rate; other groups are constant."""
        frac = min(iteration, self.total_iters) / self.total_iters
        return self.lr_means * (self.lr_means_final / self.lr_means) ** frac


@dataclass
class TrainView:
    camera: Camera
    image: np.ndarray   # (H, W, 3) linear RGB in [0, 1]
    name: str = ""


PARAM_GROUPS = ("means", "log_scales", "rotations", "opacity_logits", "sh")


class TrainState:
    """Gaussians plus optimizer moments, densification statistics, and counters.

    Parameter, moment, and statistic arrays stay index-aligned through every
    clone/split/prune, which `check_alignment` asserts.
    """

    def __init__(self, cloud: GaussianCloud, scene_extent: float, seed: int = 0):
        if scene_extent <= 0:
            raise ValueError("scene extent must be positive")
        self.cloud = cloud
        self.scene_extent = float(scene_extent)
        self.iteration = 0
        self.active_sh_degree = 0
        self.rng = np.random.default_rng(seed)
        n = len(cloud)
        self.exp_avg = {g: np.zeros_like(self._param(g)) for g in PARAM_GROUPS}
        self.exp_avg_sq = {g: np.zeros_like(self._param(g)) for g in PARAM_GROUPS}
        self.accum_pos_grad = np.zeros(n)
        self.accum_count = np.zeros(n, dtype=np.int64)
        self.max_radius_frac = np.zeros(n)
        self._epoch_order: np.ndarray | None = None
        self._epoch_pos = 0

    def _param(self, group: str) -> np.ndarray:
        return getattr(self.cloud, group)

    def check_alignment(self):
        n = len(self.cloud)
        for g in PARAM_GROUPS:
            assert self.exp_avg[g].shape == self._param(g).shape
            assert self.exp_avg_sq[g].shape == self._param(g).shape
        assert self.accum_pos_grad.shape == (n,)
        assert self.accum_count.shape == (n,)
        assert self.max_radius_frac.shape == (n,)

    def reset_stats(self):
        n = len(self.cloud)
        self.accum_pos_grad = np.zeros(n)
        self.accum_count = np.zeros(n, dtype=np.int64)
        self.max_radius_frac = np.zeros(n)

    def next_view(self, num_views: int) -> int:
        """Uniform-random sampling without replacement within each epoch."""
        if self._epoch_order is None or self._epoch_pos >= len(self._epoch_order) \
                or len(self._epoch_order) != num_views:
            self._epoch_order = self.rng.permutation(num_views)
            self._epoch_pos = 0
        view = int(self._epoch_order[self._epoch_pos])
        self._epoch_pos += 1
        return view


def loss(render: np.ndarray, ground_truth: np.ndarray, lambda_dssim: float = 0.2):
    """Weighted L1 + structural dissimilarity, with the gradient image.

    Returns (scalar loss, d_loss/d_render). Inputs must share a resolution.
    """
    render = np.asarray(render, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if render.shape != ground_truth.shape:
        raise ValueError(f"resolution mismatch: {render.shape} vs {ground_truth.shape}")
    count = render.size
    diff = render - ground_truth
    l1 = float(np.abs(diff).mean())
    d_image = (1.0 - lambda_dssim) * np.sign(diff) / count

    if lambda_dssim > 0.0:
        state = ssim_map(render, ground_truth)
        mean_ssim = float(state.value_map.mean())
        dssim = (1.0 - mean_ssim) / 2.0
        d_map = np.full_like(state.value_map, -lambda_dssim / (2.0 * count))
        d_image += ssim_backward(state, d_map)
    else:
        dssim = 0.0
    return (1.0 - lambda_dssim) * l1 + lambda_dssim * dssim, d_image


def compute_metrics(render: np.ndarray, ground_truth: np.ndarray) -> tuple[float, float]:
    """(PSNR in dB, SSIM) on [0, 1] images; identical images report inf PSNR."""
    render = np.asarray(render, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if render.shape != ground_truth.shape:
        raise ValueError(f"resolution mismatch: {render.shape} vs {ground_truth.shape}")
    mse = float(np.mean((render - ground_truth) ** 2))
    psnr = float("inf") if mse == 0.0 else 10.0 * np.log10(1.0 / mse)
    return psnr, float(ssim_map(render, ground_truth).value_map.mean())


def downscale_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Area-average an image down to (height, width)."""
    h, w = image.shape[:2]
    if h == height and w == width:
        return image
    if h % height == 0 and w % width == 0:
        fy, fx = h // height, w // width
        return image.reshape(height, fy, width, fx, 3).mean(axis=(1, 3))
    from PIL import Image
    chans = [
        np.asarray(Image.fromarray(image[:, :, c].astype(np.float32), mode="F")
                   .resize((width, height), Image.BOX), dtype=np.float64)
        for c in range(3)
    ]
    return np.stack(chans, axis=2)


def warmup_scale(iteration: int, upsample_iters: tuple[int, int]) -> float:
    """Resolution factor: quarter, half, then full after the two upsample steps."""
    if iteration < upsample_iters[0]:
        return 0.25
    if iteration < upsample_iters[1]:
        return 0.5
    return 1.0


@dataclass
class StepReport:
    iteration: int
    loss: float
    psnr: float
    view_index: int
    num_gaussians: int


def render_view(cloud: GaussianCloud, camera: Camera, background, active_sh_degree: int = 3,
                training: bool = False, workers: int = 1, dtype=np.float64):
    """Project, bin, and rasterize one view. Returns (output, splats, binning)."""
    splats = project(cloud, camera, active_sh_degree, dtype=dtype)
    binning = bin_and_sort(splats, camera.width, camera.height)
    out = render_forward(splats, binning, camera.width, camera.height, background,
                         training=training, workers=workers)
    return out, splats, binning


def train_step(state: TrainState, views: Sequence[TrainView], config: TrainConfig) -> StepReport:
    """One optimization iteration: render a sampled view, backprop, Adam step.

    Applies the resolution warm-up schedule, per-group learning rates with the
    exponential position decay, the SH band schedule, and accumulates the
    positional-gradient statistics used by densification.
    """
    state.iteration += 1
    it = state.iteration
    if it % config.sh_band_interval == 0 and state.active_sh_degree < 3:
        state.active_sh_degree += 1

    view_idx = state.next_view(len(views))
    view = views[view_idx]
    scale = warmup_scale(it, config.warmup_upsample_iters)
    camera = view.camera if scale == 1.0 else view.camera.scaled(scale)
    gt = downscale_image(view.image, camera.height, camera.width)

    background = np.asarray(config.background, dtype=np.float64)
    out, splats, binning = render_view(
        state.cloud, camera, background, state.active_sh_degree,
        training=True, workers=config.workers)
    value, d_image = loss(out.image, gt, config.lambda_dssim)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value} at iteration {it}")

    grads2d = render_backward(d_image, out, splats, binning, camera.width, camera.height,
                              background, workers=config.workers)
    grads = backward_project(state.cloud, camera, splats, grads2d, state.active_sh_degree)

    idx = splats.source_index
    state.accum_pos_grad[idx] += grads.view_pos_grad_norm[idx]
    state.accum_count[idx] += 1
    np.maximum.at(state.max_radius_frac, idx, splats.radius / camera.height)

    _adam_step(state, grads, config)
    mse = float(np.mean((out.image - gt) ** 2))
    psnr = float("inf") if mse == 0.0 else 10.0 * float(np.log10(1.0 / mse))
    return StepReport(it, value, psnr, view_idx, len(state.cloud))


def _adam_step(state: TrainState, grads, config: TrainConfig):
    beta1, beta2 = config.adam_betas
    t = state.iteration
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    sh_lr = np.full((16, 1), config.lr_sh_rest)
    sh_lr[0, 0] = config.lr_sh_dc
    lrs = {
        "means": config.lr_means_at(t),
        "log_scales": config.lr_log_scales,
        "rotations": config.lr_rotations,
        "opacity_logits": config.lr_opacity,
        "sh": sh_lr,
    }
    grad_arrays = {
        "means": grads.d_means,
        "log_scales": grads.d_log_scales,
        "rotations": grads.d_rotations,
        "opacity_logits": grads.d_opacity_logits,
        "sh": grads.d_sh,
    }
    for group in PARAM_GROUPS:
        g = grad_arrays[group]
        m = state.exp_avg[group]
        v = state.exp_avg_sq[group]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = lrs[group] * (m / bias1) / (np.sqrt(v / bias2) + config.adam_eps)
        state._param(group)[...] -= step


@dataclass
class DensifyReport:
    cloned: int
    split: int
    pruned: int
    opacity_reset: bool


def densify_and_prune(state: TrainState, config: TrainConfig) -> DensifyReport:
    """Adaptive density control: clone small / split large high-gradient Gaussians,
    prune transparent or oversized ones, and periodically reset opacity.

    Split children sample their positions from the parent's own density and
    shrink its scale by the split factor; clones are exact copies that drift
    apart through subsequent gradient steps. New Gaussians start with zero
    optimizer moments. Statistics reset afterwards.
    """
    cloud = state.cloud
    n = len(cloud)
    counts = np.maximum(state.accum_count, 1)
    mean_grad = state.accum_pos_grad / counts
    hot = (mean_grad > config.densify_grad_threshold) & (state.accum_count > 0)

    tau_split = config.resolve_split_threshold(state.scene_extent)
    max_scale = cloud.scales.max(axis=1)
    split_mask = hot & (max_scale > tau_split)
    clone_mask = hot & ~split_mask
    n_split = int(split_mask.sum())
    n_clone = int(clone_mask.sum())

    keep = ~split_mask
    pieces = [cloud.select(keep)]
    if n_clone:
        pieces.append(cloud.select(clone_mask))
    if n_split:
        parents = cloud.select(split_mask)
        doubled = GaussianCloud.concatenate([parents, parents])
        q = normalize_quaternions(doubled.rotations)
        R = quaternion_to_rotation(q)
        z = state.rng.standard_normal((2 * n_split, 3))
        offsets = np.einsum("nij,nj->ni", R, doubled.scales * z)
        children = GaussianCloud(
            doubled.means + offsets,
            doubled.rotations,
            doubled.log_scales - np.log(config.split_factor),
            doubled.opacity_logits,
            doubled.sh,
        )
        pieces.append(children)
    new_cloud = GaussianCloud.concatenate(pieces)

    def grow(arr, added):
        shape = (added,) + arr.shape[1:]
        return np.concatenate([arr[keep], np.zeros(shape, dtype=arr.dtype)])

    added = n_clone + 2 * n_split
    for g in PARAM_GROUPS:
        state.exp_avg[g] = grow(state.exp_avg[g], added)
        state.exp_avg_sq[g] = grow(state.exp_avg_sq[g], added)
    max_radius = np.concatenate([state.max_radius_frac[keep], np.zeros(added)])

    prune = expit(new_cloud.opacity_logits) < config.prune_alpha_threshold
    if state.iteration > config.opacity_reset_interval:
        prune |= new_cloud.scales.max(axis=1) > config.prune_world_percent * state.scene_extent
        prune |= max_radius > config.prune_screen_fraction
    n_pruned = int(prune.sum())
    survivors = ~prune
    state.cloud = new_cloud.select(survivors)
    for g in PARAM_GROUPS:
        state.exp_avg[g] = state.exp_avg[g][survivors]
        state.exp_avg_sq[g] = state.exp_avg_sq[g][survivors]

    did_reset = state.iteration > 0 and state.iteration % config.opacity_reset_interval == 0
    if did_reset:
        state.cloud.opacity_logits[...] = logit(config.opacity_reset_alpha)

    state.reset_stats()
    state.check_alignment()
    return DensifyReport(cloned=n_clone, split=n_split, pruned=n_pruned, opacity_reset=did_reset)


def train(state: TrainState, views: Sequence[TrainView], config: TrainConfig, *,
          iterations: int | None = None, eval_interval: int = 500,
          progress: Callable[[str], None] | None = None,
          densify_hook: Callable[[DensifyReport], None] | None = None,
          checkpoint_hook: Callable[[TrainState], None] | None = None,
          checkpoint_iters: Sequence[int] = (7000, 30000)) -> list[DensifyReport]:
    """Drive training for `iterations` steps with densification interleaved."""
    iterations = config.total_iters if iterations is None else iterations
    densify_until = config.resolve_densify_until()
    reports = []
    while state.iteration < iterations:
        step = train_step(state, views, config)
        if (config.densify_start < state.iteration <= densify_until
                and state.iteration % config.densify_interval == 0):
            report = densify_and_prune(state, config)
            reports.append(report)
            if densify_hook:
                densify_hook(report)
        if progress and (state.iteration % eval_interval == 0 or state.iteration == iterations):
            progress(f"iter={step.iteration} loss={step.loss:.6f} "
                     f"gaussians={len(state.cloud)} psnr={step.psnr:.2f}")
        if checkpoint_hook and state.iteration in checkpoint_iters:
            checkpoint_hook(state)
    return reports
