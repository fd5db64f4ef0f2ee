"""Procedural toy scenes: a few ground-truth Gaussians rendered into a small dataset."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.special import logit

from .core import Camera, GaussianCloud
from .optimizer import render_view
from .scene_io import save_png
from .sh import rgb_to_sh0

TOY_COLORS = np.array([
    [0.85, 0.15, 0.10],
    [0.10, 0.75, 0.20],
    [0.15, 0.25, 0.90],
    [0.90, 0.80, 0.10],
    [0.80, 0.15, 0.80],
    [0.10, 0.80, 0.80],
    [0.95, 0.55, 0.15],
    [0.60, 0.60, 0.60],
])


def make_toy_cloud(seed: int = 7, count: int = 8) -> GaussianCloud:
    """Well-separated isotropic colored blobs inside roughly [-1.5, 1.5]^3."""
    rng = np.random.default_rng(seed)
    # Spread means on a jittered sphere so no two blobs collapse together.
    phi = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    zs = np.linspace(-0.7, 0.7, count)
    radius = 1.1
    means = np.stack([
        radius * np.cos(phi) * np.sqrt(1 - zs**2),
        radius * np.sin(phi) * np.sqrt(1 - zs**2),
        radius * zs,
    ], axis=1)
    means += rng.normal(scale=0.08, size=means.shape)

    q = np.zeros((count, 4))
    q[:, 0] = 1.0
    sigma = rng.uniform(0.25, 0.35, size=(count, 1))
    log_scales = np.log(np.repeat(sigma, 3, axis=1))
    alphas = rng.uniform(0.65, 0.9, size=count)
    sh = np.zeros((count, 16, 3))
    sh[:, 0, :] = rgb_to_sh0(TOY_COLORS[:count])
    return GaussianCloud(means, q, log_scales, logit(alphas), sh)


def orbit_camera(azimuth: float, elevation: float, distance: float,
                 resolution: int = 128, focal: float = 128.0,
                 target=(0.0, 0.0, 0.0), near: float = 0.2) -> Camera:
    """Camera on a sphere around `target`, looking at it (world up = +z)."""
    target = np.asarray(target, dtype=np.float64)
    eye = target + distance * np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])
    forward = target - eye
    forward /= np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    return Camera(R, -R @ eye, focal, focal, resolution / 2.0, resolution / 2.0,
                  resolution, resolution, near)


def make_toy_cameras(n_train: int = 24, n_test: int = 3, distance: float = 4.0,
                     resolution: int = 128, focal: float | None = None,
                     ) -> tuple[list[Camera], list[Camera]]:
    """Training cameras spread over a sphere band, plus held-out in-betweens."""
    if focal is None:
        focal = resolution * distance / 4.0
    # golden-angle spiral over a band of elevations: near-uniform coverage, so
    # held-out views always have nearby training views
    golden = np.pi * (3.0 - np.sqrt(5.0))
    train = []
    for i in range(n_train):
        elev = np.arcsin(-0.75 + 1.5 * (i + 0.5) / n_train)
        train.append(orbit_camera(i * golden, elev, distance, resolution, focal))
    test = [
        orbit_camera((i + 0.5) * golden,
                     np.arcsin(-0.5 + 1.0 * (i + 0.5) / max(n_test, 1)),
                     distance, resolution, focal)
        for i in range(n_test)
    ]
    return train, test


def render_toy_views(cloud: GaussianCloud, cameras, background=(0.0, 0.0, 0.0),
                     sh_degree: int = 3):
    images = []
    for cam in cameras:
        out, _, _ = render_view(cloud, cam, np.asarray(background), sh_degree)
        images.append(out.image)
    return images


def sample_point_cloud(cloud: GaussianCloud, per_gaussian: int = 40, seed: int = 3):
    """SfM-like sparse points: samples from each Gaussian with its base color."""
    from .core import quaternion_to_rotation, normalize_quaternions
    from .sh import sh0_to_rgb

    rng = np.random.default_rng(seed)
    R = quaternion_to_rotation(normalize_quaternions(cloud.rotations))
    pts, cols = [], []
    for i in range(len(cloud)):
        z = rng.standard_normal((per_gaussian, 3))
        pts.append(cloud.means[i] + (z * cloud.scales[i]) @ R[i].T)
        color = np.clip(sh0_to_rgb(cloud.sh[i, 0, :]), 0.0, 1.0)
        cols.append(np.repeat(color[None, :], per_gaussian, axis=0))
    return np.concatenate(pts), np.concatenate(cols)


def write_toy_dataset(root, seed: int = 7, n_images: int = 24, resolution: int = 128,
                      background=(0.0, 0.0, 0.0)) -> GaussianCloud:
    """Write a COLMAP-text dataset rendered from the toy ground truth.

    Every 8th image (by name) lands in the held-out split downstream. Returns
    the ground-truth cloud.
    """
    root = Path(root)
    sparse = root / "sparse" / "0"
    images_dir = root / "images"
    sparse.mkdir(parents=True, exist_ok=True)
    images_dir.mkdir(parents=True, exist_ok=True)

    cloud = make_toy_cloud(seed)
    cameras, _ = make_toy_cameras(n_train=n_images, n_test=0, resolution=resolution)
    images = render_toy_views(cloud, cameras, background)

    with open(sparse / "cameras.txt", "w") as f:
        f.write("# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n")
        for i, cam in enumerate(cameras, start=1):
            f.write(f"{i} PINHOLE {cam.width} {cam.height} "
                    f"{cam.fx} {cam.fy} {cam.cx} {cam.cy}\n")

    with open(sparse / "images.txt", "w") as f:
        f.write("# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n")
        for i, cam in enumerate(cameras, start=1):
            q = _rotation_to_qvec(cam.rotation)
            t = cam.translation
            name = f"view_{i - 1:03d}.png"
            f.write(f"{i} {q[0]} {q[1]} {q[2]} {q[3]} {t[0]} {t[1]} {t[2]} {i} {name}\n\n")
            save_png(images_dir / name, images[i - 1])

    points, colors = sample_point_cloud(cloud, seed=seed + 1)
    with open(sparse / "points3D.txt", "w") as f:
        f.write("# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[]\n")
        rgb8 = np.clip(np.round(colors * 255.0), 0, 255).astype(int)
        for i, (p, c) in enumerate(zip(points, rgb8), start=1):
            f.write(f"{i} {p[0]} {p[1]} {p[2]} {c[0]} {c[1]} {c[2]} 0.5\n")
    return cloud


def _rotation_to_qvec(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion (w, x, y, z)."""
    K = np.array([
        [R[0, 0] - R[1, 1] - R[2, 2], 0, 0, 0],
        [R[0, 1] + R[1, 0], R[1, 1] - R[0, 0] - R[2, 2], 0, 0],
        [R[0, 2] + R[2, 0], R[1, 2] + R[2, 1], R[2, 2] - R[0, 0] - R[1, 1], 0],
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1], R[0, 0] + R[1, 1] + R[2, 2]],
    ]) / 3.0
    vals, vecs = np.linalg.eigh(K)
    q = vecs[[3, 0, 1, 2], np.argmax(vals)]
    return q if q[0] >= 0 else -q
