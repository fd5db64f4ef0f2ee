import numpy as np
import pytest

from splatlab.core import Camera, GaussianCloud
from splatlab.optimizer import (PARAM_GROUPS, TrainConfig, TrainState, TrainView,
                                TrainingDiverged, compute_metrics, densify_and_prune,
                                loss, render_view, train, train_step, warmup_scale)
from splatlab.ssim import gaussian_window, ssim, ssim_map
from splatlab.toydata import make_toy_cloud, orbit_camera


def brute_force_ssim(x, y):
    """Windowed SSIM via explicit per-pixel loops (zero padding)."""
    kernel = gaussian_window()
    k2 = np.outer(kernel, kernel)
    h, w, c = x.shape
    pad = 5
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    yp = np.pad(y, ((pad, pad), (pad, pad), (0, 0)))
    total = 0.0
    c1, c2 = 0.01**2, 0.03**2
    for row in range(h):
        for col in range(w):
            for ch in range(c):
                wx = xp[row:row + 11, col:col + 11, ch]
                wy = yp[row:row + 11, col:col + 11, ch]
                mx = (k2 * wx).sum()
                my = (k2 * wy).sum()
                sx = (k2 * wx * wx).sum() - mx * mx
                sy = (k2 * wy * wy).sum() - my * my
                sxy = (k2 * wx * wy).sum() - mx * my
                total += ((2 * mx * my + c1) * (2 * sxy + c2)) / \
                         ((mx * mx + my * my + c1) * (sx + sy + c2))
    return total / (h * w * c)


class TestSsim:
    def test_identical_images(self):
        img = np.random.default_rng(0).uniform(size=(20, 20, 3))
        assert ssim(img, img) == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(12, 14, 3))
        y = np.clip(x + rng.normal(scale=0.15, size=x.shape), 0, 1)
        assert ssim(x, y) == pytest.approx(brute_force_ssim(x, y), abs=1e-10)

    def test_checkerboard_vs_inverse_strongly_negative(self):
        tile = np.indices((16, 16)).sum(axis=0) % 2
        x = np.repeat(tile[:, :, None], 3, axis=2).astype(np.float64)
        y = 1.0 - x
        value = ssim(x, y)
        assert value == pytest.approx(brute_force_ssim(x, y), abs=1e-10)
        assert value < -0.5


class TestLoss:
    def test_identical_zero(self):
        img = np.random.default_rng(2).uniform(size=(16, 16, 3))
        value, grad = loss(img, img)
        assert value == 0.0
        assert np.all(grad == 0.0)

    def test_pure_l1_constant_offset(self):
        img = np.full((8, 8, 3), 0.4)
        value, _ = loss(img + 0.1, img, lambda_dssim=0.0)
        assert value == pytest.approx(0.1)

    def test_resolution_mismatch(self):
        with pytest.raises(ValueError):
            loss(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0.2, 0.8, size=(16, 16, 3))
        y = rng.uniform(0.2, 0.8, size=(16, 16, 3))
        value, grad = loss(x, y)
        h = 1e-5
        for _ in range(40):
            i, j, c = rng.integers(16), rng.integers(16), rng.integers(3)
            xp, xm = x.copy(), x.copy()
            xp[i, j, c] += h
            xm[i, j, c] -= h
            fd = (loss(xp, y)[0] - loss(xm, y)[0]) / (2 * h)
            assert abs(grad[i, j, c] - fd) / max(abs(fd), 1e-7) < 1e-4


class TestMetrics:
    def test_uniform_error_psnr(self):
        img = np.full((8, 8, 3), 0.5)
        psnr, _ = compute_metrics(img + 0.1, img)
        assert psnr == pytest.approx(20.0)

    def test_identical_sentinel(self):
        img = np.random.default_rng(4).uniform(size=(8, 8, 3))
        psnr, s = compute_metrics(img, img)
        assert psnr == float("inf")
        assert s == pytest.approx(1.0)


def tiny_scene(count=2, seed=0, resolution=32):
    rng = np.random.default_rng(seed)
    cloud = make_toy_cloud(seed, count=min(count, 8))
    if count < len(cloud):
        cloud = cloud.select(np.arange(count))
    cams = [orbit_camera(az, 0.2, 4.0, resolution, focal=float(resolution))
            for az in np.linspace(0, 2 * np.pi, 4, endpoint=False)]
    views = []
    for cam in cams:
        out, _, _ = render_view(cloud, cam, np.zeros(3))
        views.append(TrainView(cam, out.image))
    return cloud, views


class TestTrainStep:
    def test_zero_gradient_step_keeps_params(self):
        cloud, views = tiny_scene(count=3)
        config = TrainConfig(total_iters=100, warmup_upsample_iters=(0, 0))
        state = TrainState(cloud.copy(), scene_extent=4.0, seed=1)
        before = {g: getattr(state.cloud, g).copy() for g in PARAM_GROUPS}
        report = train_step(state, views, config)
        assert report.loss == 0.0
        for g in PARAM_GROUPS:
            np.testing.assert_array_equal(getattr(state.cloud, g), before[g])

    def test_sh_degree_transitions(self):
        cloud, views = tiny_scene(count=2)
        config = TrainConfig(total_iters=5000, warmup_upsample_iters=(0, 0))
        state = TrainState(cloud.copy(), scene_extent=4.0, seed=1)
        for boundary, expected in ((1000, 1), (2000, 2), (3000, 3), (4000, 3)):
            state.iteration = boundary - 1
            train_step(state, views, config)
            assert state.iteration == boundary
            assert state.active_sh_degree == expected

    def test_divergence_aborts(self):
        cloud, views = tiny_scene(count=2)
        views[0].image[0, 0, 0] = np.nan
        config = TrainConfig(total_iters=10, warmup_upsample_iters=(0, 0))
        state = TrainState(cloud.copy(), scene_extent=4.0, seed=1)
        with pytest.raises(TrainingDiverged):
            for _ in range(len(views)):
                train_step(state, views, config)

    def test_warmup_schedule(self):
        assert warmup_scale(0, (250, 500)) == 0.25
        assert warmup_scale(249, (250, 500)) == 0.25
        assert warmup_scale(250, (250, 500)) == 0.5
        assert warmup_scale(499, (250, 500)) == 0.5
        assert warmup_scale(500, (250, 500)) == 1.0

    def test_position_lr_strictly_decreasing(self):
        config = TrainConfig(total_iters=1000)
        lrs = [config.lr_means_at(t) for t in range(0, 1001, 50)]
        assert all(b < a for a, b in zip(lrs, lrs[1:]))
        assert lrs[0] == pytest.approx(config.lr_means)
        assert lrs[-1] == pytest.approx(config.lr_means_final)

    def test_fixed_point_no_divergence(self):
        # training on the scene's own render must not blow up
        cloud, views = tiny_scene(count=3)
        config = TrainConfig(total_iters=100, warmup_upsample_iters=(0, 0))
        state = TrainState(cloud.copy(), scene_extent=4.0, seed=2)
        initial = None
        for _ in range(100):
            report = train_step(state, [views[0]], config)
            initial = report.loss if initial is None else initial
            assert report.loss <= max(initial, 1e-12) + 1e-9

    def test_self_fit_converges(self):
        # perturb one Gaussian's color/opacity/scale, fit back to its own render
        cloud, views = tiny_scene(count=1)
        noisy = cloud.copy()
        rng = np.random.default_rng(5)
        noisy.sh[:, 0, :] += rng.normal(scale=0.25, size=(1, 3))
        noisy.opacity_logits += 0.7
        noisy.log_scales += 0.1
        config = TrainConfig(total_iters=600, warmup_upsample_iters=(0, 0))
        state = TrainState(noisy, scene_extent=4.0, seed=3)
        losses = []
        for _ in range(600):
            losses.append(train_step(state, views, config).loss)
        smoothed = np.convolve(losses, np.ones(50) / 50, mode="valid")
        assert smoothed[-1] < 1e-4
        assert np.all(smoothed[250:] < 1e-4)
        assert smoothed[-1] < 0.05 * smoothed[0]


class TestDensify:
    def make_state(self, count=6, seed=0):
        cloud = make_toy_cloud(seed, count=count)
        return TrainState(cloud, scene_extent=4.0, seed=seed)

    def test_split_vs_clone_threshold(self):
        state = self.make_state(count=4)
        config = TrainConfig(total_iters=100)
        tau = config.resolve_split_threshold(state.scene_extent)
        state.cloud.log_scales[0] = np.log(tau * 3.0)   # large -> split
        state.cloud.log_scales[1] = np.log(tau * 0.3)   # small -> clone
        state.accum_pos_grad[:] = 0.0
        state.accum_pos_grad[[0, 1]] = 0.0003
        state.accum_count[[0, 1]] = 1
        state.iteration = 600
        n0 = len(state.cloud)
        report = densify_and_prune(state, config)
        assert report.split == 1 and report.cloned == 1
        assert len(state.cloud) == n0 + report.cloned + 2 * report.split - report.split - report.pruned

    def test_below_threshold_no_events(self):
        state = self.make_state()
        config = TrainConfig(total_iters=100)
        state.accum_pos_grad[:] = 0.0001
        state.accum_count[:] = 1
        state.iteration = 600
        report = densify_and_prune(state, config)
        assert report.split == 0 and report.cloned == 0

    def test_split_children_scale_division(self):
        state = self.make_state(count=3)
        config = TrainConfig(total_iters=100)
        state.cloud.log_scales[0] = np.log([1.0, 0.8, 0.9])  # force large
        parent_scale = state.cloud.scales[0].copy()
        state.accum_pos_grad[0] = 1.0
        state.accum_count[0] = 1
        state.iteration = 600
        n0 = len(state.cloud)
        report = densify_and_prune(state, config)
        assert report.split == 1
        children_ls = state.cloud.log_scales[n0 - 1:]
        assert children_ls.shape[0] == 2
        expected = np.repeat((parent_scale / 1.6)[None, :], 2, axis=0)
        np.testing.assert_allclose(np.exp(children_ls), expected, rtol=1e-12)

    def test_prune_transparent(self):
        from scipy.special import logit

        state = self.make_state(count=5)
        config = TrainConfig(total_iters=100)
        state.cloud.opacity_logits[2] = logit(0.001)
        state.iteration = 600
        n0 = len(state.cloud)
        report = densify_and_prune(state, config)
        assert report.pruned == 1
        assert len(state.cloud) == n0 - 1

    def test_opacity_reset_at_interval(self):
        from scipy.special import expit

        state = self.make_state(count=4)
        config = TrainConfig(total_iters=9000)
        means_before = state.cloud.means.copy()
        scales_before = state.cloud.log_scales.copy()
        sh_before = state.cloud.sh.copy()
        state.iteration = 3000
        report = densify_and_prune(state, config)
        assert report.opacity_reset
        np.testing.assert_allclose(expit(state.cloud.opacity_logits), 0.01, rtol=1e-9)
        np.testing.assert_array_equal(state.cloud.means, means_before)
        np.testing.assert_array_equal(state.cloud.log_scales, scales_before)
        np.testing.assert_array_equal(state.cloud.sh, sh_before)

    def test_world_size_prune_after_reset_window(self):
        state = self.make_state(count=4)
        config = TrainConfig(total_iters=9000)
        state.cloud.log_scales[:] = np.log(0.02 * state.scene_extent)
        state.cloud.log_scales[1] = np.log(0.2 * state.scene_extent)
        state.iteration = 600   # before the reset window: kept
        densify_and_prune(state, config)
        assert len(state.cloud) == 4
        state.cloud.log_scales[1] = np.log(0.2 * state.scene_extent)
        state.iteration = 3100  # after: pruned
        report = densify_and_prune(state, config)
        assert report.pruned == 1

    def test_alignment_after_every_operation(self):
        state = self.make_state(count=8)
        config = TrainConfig(total_iters=9000)
        rng = np.random.default_rng(9)
        for it in (600, 700, 3000, 3100):
            state.iteration = it
            state.accum_pos_grad = rng.uniform(0, 0.001, len(state.cloud))
            state.accum_count = np.ones(len(state.cloud), dtype=np.int64)
            state.max_radius_frac = rng.uniform(0, 0.3, len(state.cloud))
            densify_and_prune(state, config)
            state.check_alignment()
            for g in PARAM_GROUPS:
                assert state.exp_avg[g].shape == getattr(state.cloud, g).shape

    def test_stats_reset_after_densify(self):
        state = self.make_state(count=4)
        config = TrainConfig(total_iters=100)
        state.accum_pos_grad[:] = 0.5
        state.accum_count[:] = 3
        state.iteration = 600
        densify_and_prune(state, config)
        assert np.all(state.accum_pos_grad == 0.0)
        assert np.all(state.accum_count == 0)


class TestTrainDriver:
    def test_epoch_sampling_without_replacement(self):
        cloud, views = tiny_scene(count=2)
        config = TrainConfig(total_iters=100, warmup_upsample_iters=(0, 0))
        state = TrainState(cloud.copy(), scene_extent=4.0, seed=7)
        seen = [train_step(state, views, config).view_index for _ in range(8)]
        assert sorted(seen[:4]) == [0, 1, 2, 3]
        assert sorted(seen[4:]) == [0, 1, 2, 3]

    def test_progress_line_format(self):
        cloud, views = tiny_scene(count=2)
        config = TrainConfig(total_iters=4, warmup_upsample_iters=(0, 0))
        state = TrainState(cloud.copy(), scene_extent=4.0, seed=7)
        lines = []
        train(state, views, config, iterations=4, eval_interval=2, progress=lines.append)
        assert len(lines) == 2
        for line in lines:
            parts = dict(kv.split("=") for kv in line.split())
            assert set(parts) == {"iter", "loss", "gaussians", "psnr"}
