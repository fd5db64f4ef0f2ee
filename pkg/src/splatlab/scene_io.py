"""Dataset ingestion (COLMAP), Gaussian initialization, and model serialization."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree
from scipy.special import logit

from .core import Camera, GaussianCloud
from .sh import rgb_to_sh0

SUPPORTED_CAMERA_MODELS = ("SIMPLE_PINHOLE", "PINHOLE")
# COLMAP binary model ids for the supported models.
_MODEL_IDS = {0: "SIMPLE_PINHOLE", 1: "PINHOLE"}
_MODEL_NUM_PARAMS = {
    0: 3, 1: 4, 2: 4, 3: 5, 4: 8, 5: 8, 6: 12, 7: 5, 8: 4, 9: 5, 10: 12,
}
_MODEL_NAMES = {
    2: "SIMPLE_RADIAL", 3: "RADIAL", 4: "OPENCV", 5: "OPENCV_FISHEYE",
    6: "FULL_OPENCV", 7: "FOV", 8: "SIMPLE_RADIAL_FISHEYE", 9: "RADIAL_FISHEYE",
    10: "THIN_PRISM_FISHEYE",
}

MODEL_MAGIC = b"SPLM"
CHECKPOINT_MAGIC = b"SPLC"
MODEL_VERSION = 1
RECORD_BYTES = 236  # 3 + 3 + 4 + 1 + 48 float32 values per Gaussian


class SceneLoadError(RuntimeError):
    pass


class ModelFormatError(RuntimeError):
    pass


@dataclass
class SceneImage:
    name: str
    camera: Camera
    path: Path | None = None
    pixels: np.ndarray | None = None   # (H, W, 3) linear RGB

    def load_pixels(self) -> np.ndarray:
        if self.pixels is None:
            if self.path is None or not self.path.exists():
                raise SceneLoadError(f"image file missing for '{self.name}'")
            self.pixels = load_image(self.path)
        return self.pixels


@dataclass
class SfmScene:
    images: list[SceneImage]
    points: np.ndarray          # (P, 3)
    point_colors: np.ndarray    # (P, 3) linear in [0, 1]
    scene_extent: float

    @property
    def cameras(self) -> list[Camera]:
        return [im.camera for im in self.images]


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, x * 12.92, 1.055 * x ** (1.0 / 2.4) - 0.055)


def load_image(path) -> np.ndarray:
    """PNG/JPEG to linear RGB float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return srgb_to_linear(arr)


def save_png(path, image: np.ndarray):
    """Linear RGB float image to an sRGB 8-bit PNG."""
    srgb = np.round(linear_to_srgb(image) * 255.0).astype(np.uint8)
    Image.fromarray(srgb, mode="RGB").save(path)


# --------------------------------------------------------------------------
# COLMAP parsing


def _read_bytes(f, count, fmt):
    data = f.read(count)
    if len(data) != count:
        raise SceneLoadError("unexpected end of COLMAP binary file")
    return struct.unpack("<" + fmt, data)


def _intrinsics_from_params(model: str, width: int, height: int, params) -> dict:
    if model == "SIMPLE_PINHOLE":
        f, cx, cy = params[:3]
        return dict(fx=f, fy=f, cx=cx, cy=cy, width=width, height=height)
    if model == "PINHOLE":
        fx, fy, cx, cy = params[:4]
        return dict(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    raise SceneLoadError(
        f"unsupported COLMAP camera model '{model}'; only {SUPPORTED_CAMERA_MODELS} work "
        "(undistort images first)")


def read_cameras_text(path) -> dict[int, dict]:
    cameras = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        cam_id, model = int(parts[0]), parts[1]
        width, height = int(parts[2]), int(parts[3])
        params = [float(p) for p in parts[4:]]
        cameras[cam_id] = _intrinsics_from_params(model, width, height, params)
    return cameras


def read_cameras_binary(path) -> dict[int, dict]:
    cameras = {}
    with open(path, "rb") as f:
        (num,) = _read_bytes(f, 8, "Q")
        for _ in range(num):
            cam_id, model_id, width, height = _read_bytes(f, 24, "iiQQ")
            nparams = _MODEL_NUM_PARAMS.get(model_id)
            if nparams is None:
                raise SceneLoadError(f"unknown COLMAP camera model id {model_id}")
            params = _read_bytes(f, 8 * nparams, "d" * nparams)
            model = _MODEL_IDS.get(model_id, _MODEL_NAMES.get(model_id, str(model_id)))
            cameras[cam_id] = _intrinsics_from_params(model, width, height, params)
    return cameras


def _qvec_to_rotation(qvec) -> np.ndarray:
    w, x, y, z = qvec
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def read_images_text(path) -> list[dict]:
    # Two lines per image: the pose line, then the (possibly empty) 2D-point
    # line, so empties must be kept to preserve the pairing.
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if not ln.startswith("#")]
    while lines and not lines[0]:
        lines.pop(0)
    images = []
    for pose_line in lines[::2]:
        if not pose_line:
            continue
        parts = pose_line.split()
        qvec = [float(v) for v in parts[1:5]]
        tvec = [float(v) for v in parts[5:8]]
        images.append(dict(qvec=qvec, tvec=np.array(tvec), camera_id=int(parts[8]),
                           name=parts[9]))
    return images


def read_images_binary(path) -> list[dict]:
    images = []
    with open(path, "rb") as f:
        (num,) = _read_bytes(f, 8, "Q")
        for _ in range(num):
            data = _read_bytes(f, 64, "idddddddi")
            qvec = list(data[1:5])
            tvec = np.array(data[5:8])
            camera_id = data[8]
            name = b""
            while True:
                c = f.read(1)
                if c in (b"", b"\x00"):
                    break
                name += c
            (npts,) = _read_bytes(f, 8, "Q")
            f.seek(24 * npts, 1)
            images.append(dict(qvec=qvec, tvec=tvec, camera_id=camera_id,
                               name=name.decode("utf-8")))
    return images


def read_points3d_text(path):
    xyz, rgb = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        xyz.append([float(v) for v in parts[1:4]])
        rgb.append([int(v) for v in parts[4:7]])
    if not xyz:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.array(xyz, dtype=np.float64), np.array(rgb, dtype=np.float64) / 255.0


def read_points3d_binary(path):
    xyz, rgb = [], []
    with open(path, "rb") as f:
        (num,) = _read_bytes(f, 8, "Q")
        for _ in range(num):
            data = _read_bytes(f, 43, "QdddBBBd")
            xyz.append(data[1:4])
            rgb.append(data[4:7])
            (track_len,) = _read_bytes(f, 8, "Q")
            f.seek(8 * track_len, 1)
    if not xyz:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.array(xyz, dtype=np.float64), np.array(rgb, dtype=np.float64) / 255.0


def _find_sparse_dir(root: Path) -> Path:
    for candidate in (root, root / "sparse" / "0", root / "sparse"):
        if (candidate / "cameras.txt").exists() or (candidate / "cameras.bin").exists():
            return candidate
    raise SceneLoadError(f"no COLMAP cameras file under '{root}'")


def camera_bounds(cameras) -> tuple[np.ndarray, np.ndarray]:
    centers = np.stack([c.center for c in cameras])
    return centers.min(axis=0), centers.max(axis=0)


def compute_scene_extent(cameras, points=None) -> float:
    """Bounding-sphere radius of the camera centers (point-cloud fallback)."""
    if cameras:
        centers = np.stack([c.center for c in cameras])
        extent = float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max())
        if extent > 0:
            return extent
    if points is not None and len(points):
        centroid = points.mean(axis=0)
        extent = float(np.linalg.norm(points - centroid, axis=1).max())
        if extent > 0:
            return extent
    return 1.0


def load_colmap(path, load_images: bool = True, near: float = 0.2) -> SfmScene:
    """Load a COLMAP reconstruction (text or binary) into an SfmScene.

    Expects cameras/images/points3D under `path` (or path/sparse/0) and the
    photographs under path/images. Only pinhole models are supported.
    """
    root = Path(path)
    if not root.exists():
        raise SceneLoadError(f"dataset directory '{root}' does not exist")
    sparse = _find_sparse_dir(root)

    def pick(stem, text_reader, bin_reader):
        txt, binf = sparse / f"{stem}.txt", sparse / f"{stem}.bin"
        if txt.exists():
            return text_reader(txt)
        if binf.exists():
            return bin_reader(binf)
        raise SceneLoadError(f"missing {stem} file in '{sparse}'")

    intrinsics = pick("cameras", read_cameras_text, read_cameras_binary)
    image_meta = pick("images", read_images_text, read_images_binary)
    points, colors = pick("points3D", read_points3d_text, read_points3d_binary)

    images_dir = root / "images"
    images = []
    for meta in sorted(image_meta, key=lambda m: m["name"]):
        if meta["camera_id"] not in intrinsics:
            raise SceneLoadError(f"image '{meta['name']}' references unknown camera "
                                 f"{meta['camera_id']}")
        intr = intrinsics[meta["camera_id"]]
        cam = Camera(_qvec_to_rotation(meta["qvec"]), meta["tvec"], near=near, **intr)
        img = SceneImage(name=meta["name"], camera=cam, path=images_dir / meta["name"])
        if load_images:
            img.load_pixels()
        images.append(img)

    cams = [im.camera for im in images]
    return SfmScene(images=images, points=points, point_colors=colors,
                    scene_extent=compute_scene_extent(cams, points))


def split_train_test(scene: SfmScene) -> tuple[list[SceneImage], list[SceneImage]]:
    """Every 8th image by sorted name is held out for testing."""
    ordered = sorted(scene.images, key=lambda im: im.name)
    train = [im for i, im in enumerate(ordered) if i % 8 != 0]
    test = [im for i, im in enumerate(ordered) if i % 8 == 0]
    return train, test


# --------------------------------------------------------------------------
# Initialization


def mean_knn_distance(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean distance from each point to its k nearest neighbors (exact)."""
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=k + 1)
    return dist[:, 1:].mean(axis=1)


INIT_OPACITY = 0.1


def init_from_sfm(scene: SfmScene, rng=None) -> GaussianCloud:
    """One isotropic Gaussian per SfM point, scaled by local point spacing.

    Falls back to a random initialization when fewer than 4 points exist.
    """
    points = scene.points
    if len(points) < 4:
        warnings.warn(f"only {len(points)} SfM points; falling back to random initialization")
        rng = np.random.default_rng(0) if rng is None else rng
        return init_random(1000, scene=scene, rng=rng)
    dist = np.maximum(mean_knn_distance(points), 1e-7)
    n = len(points)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    sh = np.zeros((n, 16, 3))
    sh[:, 0, :] = rgb_to_sh0(scene.point_colors)
    return GaussianCloud(
        means=points,
        rotations=rotations,
        log_scales=np.repeat(np.log(dist)[:, None], 3, axis=1),
        opacity_logits=np.full(n, logit(INIT_OPACITY)),
        sh=sh,
    )


def init_random(count: int, *, bounds=None, scene: SfmScene | None = None, rng=None) -> GaussianCloud:
    """Uniform random Gaussians inside explicit bounds or 3x the camera box."""
    rng = np.random.default_rng(0) if rng is None else rng
    if count == 0:
        return GaussianCloud.empty()
    if bounds is None:
        if scene is None or not scene.images:
            raise ValueError("random init needs bounds or a scene with cameras")
        lo, hi = camera_bounds(scene.cameras)
        center = (lo + hi) / 2.0
        half = np.maximum((hi - lo) / 2.0, 1e-3) * 3.0
        lo, hi = center - half, center + half
    else:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    points = rng.uniform(lo, hi, size=(count, 3))
    if count >= 4:
        dist = np.maximum(mean_knn_distance(points), 1e-7)
    else:
        dist = np.full(count, np.linalg.norm(hi - lo) / 10.0)
    rotations = np.zeros((count, 4))
    rotations[:, 0] = 1.0
    return GaussianCloud(
        means=points,
        rotations=rotations,
        log_scales=np.repeat(np.log(dist)[:, None], 3, axis=1),
        opacity_logits=np.full(count, logit(INIT_OPACITY)),
        sh=np.zeros((count, 16, 3)),
    )


# --------------------------------------------------------------------------
# Model serialization

# Per-Gaussian record: mean(3) log_scale(3) rotation(4) opacity(1) sh(48) as
# little-endian float32. SH coefficients are channel-major (all 16 for R,
# then G, then B), degree-ordered within each channel.


def _records_from_cloud(cloud: GaussianCloud) -> np.ndarray:
    n = len(cloud)
    rec = np.empty((n, 59), dtype="<f4")
    rec[:, 0:3] = cloud.means
    rec[:, 3:6] = cloud.log_scales
    rec[:, 6:10] = cloud.rotations
    rec[:, 10] = cloud.opacity_logits
    rec[:, 11:59] = cloud.sh.transpose(0, 2, 1).reshape(n, 48)
    return rec


def _cloud_from_records(rec: np.ndarray) -> GaussianCloud:
    n = rec.shape[0]
    sh = rec[:, 11:59].reshape(n, 3, 16).transpose(0, 2, 1)
    return GaussianCloud(rec[:, 0:3], rec[:, 6:10], rec[:, 3:6], rec[:, 10], sh)


def save_model(path, cloud: GaussianCloud, sh_degree: int = 3):
    header = MODEL_MAGIC + struct.pack("<IQII", MODEL_VERSION, len(cloud), sh_degree, 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(_records_from_cloud(cloud).tobytes())


def load_model(path) -> tuple[GaussianCloud, int]:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"'{path}' is not a splat model file")
    version, count, sh_degree, _ = struct.unpack("<IQII", data[4:24])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    body = data[24:]
    if len(body) != count * RECORD_BYTES:
        raise ModelFormatError(
            f"truncated model: header says {count} records "
            f"({count * RECORD_BYTES} bytes) but {len(body)} bytes follow")
    rec = np.frombuffer(body, dtype="<f4").reshape(count, 59)
    return _cloud_from_records(rec), sh_degree


def export_ply(path, cloud: GaussianCloud):
    """Binary PLY with the de-facto splat vertex attributes, one per Gaussian."""
    n = len(cloud)
    names = (["x", "y", "z", "nx", "ny", "nz"]
             + [f"f_dc_{i}" for i in range(3)]
             + [f"f_rest_{i}" for i in range(45)]
             + ["opacity"]
             + [f"scale_{i}" for i in range(3)]
             + [f"rot_{i}" for i in range(4)])
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    data = np.zeros((n, len(names)), dtype="<f4")
    data[:, 0:3] = cloud.means
    data[:, 6:9] = cloud.sh[:, 0, :]
    data[:, 9:54] = cloud.sh[:, 1:, :].transpose(0, 2, 1).reshape(n, 45)
    data[:, 54] = cloud.opacity_logits
    data[:, 55:58] = cloud.log_scales
    data[:, 58:62] = cloud.rotations
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def save_checkpoint(path, state):
    """Model, optimizer moments, and counters in one deterministic container."""
    from .optimizer import PARAM_GROUPS

    blobs = [_records_from_cloud(state.cloud).tobytes()]
    for g in PARAM_GROUPS:
        blobs.append(np.ascontiguousarray(state.exp_avg[g], dtype="<f8").tobytes())
        blobs.append(np.ascontiguousarray(state.exp_avg_sq[g], dtype="<f8").tobytes())
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IQQId", MODEL_VERSION, state.iteration, len(state.cloud),
        state.active_sh_degree, state.scene_extent)
    with open(path, "wb") as f:
        f.write(header)
        for blob in blobs:
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)


def load_checkpoint(path):
    """Returns (cloud, iteration, active_sh_degree, scene_extent, moments dict)."""
    from .optimizer import PARAM_GROUPS

    with open(path, "rb") as f:
        head = f.read(36)
        if len(head) < 36 or head[:4] != CHECKPOINT_MAGIC:
            raise ModelFormatError(f"'{path}' is not a checkpoint file")
        version, iteration, count, sh_degree, extent = struct.unpack("<IQQId", head[4:])
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported checkpoint version {version}")

        def blob():
            (size,) = struct.unpack("<Q", f.read(8))
            data = f.read(size)
            if len(data) != size:
                raise ModelFormatError("truncated checkpoint")
            return data

        rec = np.frombuffer(blob(), dtype="<f4").reshape(count, 59)
        cloud = _cloud_from_records(rec)
        shapes = {
            "means": (count, 3), "log_scales": (count, 3), "rotations": (count, 4),
            "opacity_logits": (count,), "sh": (count, 16, 3),
        }
        moments = {}
        for g in PARAM_GROUPS:
            m = np.frombuffer(blob(), dtype="<f8").reshape(shapes[g])
            v = np.frombuffer(blob(), dtype="<f8").reshape(shapes[g])
            moments[g] = (m, v)
    return cloud, iteration, sh_degree, extent, moments
