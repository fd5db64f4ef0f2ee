"""Gaussian primitives, cameras, and world-to-screen projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .sh import evaluate_sh_basis, sh_basis

# Added to both diagonal entries of the screen covariance before inversion so
# every splat covers at least ~one pixel and the conic stays invertible.
LOWPASS_FLOOR = 0.3
# Trivial rejection margin for means far outside the frustum, in units of the
# half image extent.
GUARD_BAND = 1.3
# Cull radius in standard deviations of the screen covariance.
RADIUS_SIGMAS = 3.0


class InvalidPrimitiveError(ValueError):
    """Raised for Gaussian parameterizations that cannot form a valid primitive."""


@dataclass
class Gaussian:
    """A single anisotropic Gaussian primitive (record view of a cloud row)."""

    mean: np.ndarray           # (3,) world position
    rotation: np.ndarray       # (4,) quaternion (r, i, j, k), normalized on use
    log_scale: np.ndarray      # (3,) log of per-axis standard deviation
    opacity_logit: float       # sigmoid(opacity_logit) = alpha in (0, 1)
    sh: np.ndarray             # (16, 3) RGB spherical-harmonic coefficients


class GaussianCloud:
    """Struct-of-arrays storage for a set of Gaussians.

    All arrays are float64 and index-aligned; row i is one Gaussian.
    """

    __slots__ = ("means", "rotations", "log_scales", "opacity_logits", "sh")

    def __init__(self, means, rotations, log_scales, opacity_logits, sh):
        self.means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64).reshape(n, 16, 3)

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
            np.zeros((0,)), np.zeros((0, 16, 3)),
        )

    @classmethod
    def from_gaussians(cls, gaussians) -> "GaussianCloud":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.sh for g in gaussians]),
        )

    def __len__(self) -> int:
        return self.means.shape[0]

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            self.means[i].copy(), self.rotations[i].copy(), self.log_scales[i].copy(),
            float(self.opacity_logits[i]), self.sh[i].copy(),
        )

    def select(self, index) -> "GaussianCloud":
        """New cloud keeping the rows picked by a boolean mask or index array."""
        return GaussianCloud(
            self.means[index], self.rotations[index], self.log_scales[index],
            self.opacity_logits[index], self.sh[index],
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.means.copy(), self.rotations.copy(), self.log_scales.copy(),
            self.opacity_logits.copy(), self.sh.copy(),
        )

    @staticmethod
    def concatenate(clouds) -> "GaussianCloud":
        clouds = list(clouds)
        return GaussianCloud(
            np.concatenate([c.means for c in clouds]),
            np.concatenate([c.rotations for c in clouds]),
            np.concatenate([c.log_scales for c in clouds]),
            np.concatenate([c.opacity_logits for c in clouds]),
            np.concatenate([c.sh for c in clouds]),
        )

    @property
    def alphas(self) -> np.ndarray:
        return expit(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world-to-view rotation/translation plus intrinsics.

    View space is x-right, y-down, z-forward; pixel centers sit at
    (column + 0.5, row + 0.5) so the principal point follows the COLMAP
    convention.
    """

    rotation: np.ndarray       # (3, 3) world-to-view rotation
    translation: np.ndarray    # (3,) world-to-view translation
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation is not orthonormal (max deviation {err:.3g})")
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("camera focal lengths and resolution must be positive")
        if self.near <= 0:
            raise ValueError("camera near plane must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def scaled(self, factor: float) -> "Camera":
        """Camera for a resolution rescaled by `factor` (same pose)."""
        return Camera(
            self.rotation, self.translation,
            self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor,
            max(1, int(round(self.width * factor))), max(1, int(round(self.height * factor))),
            self.near,
        )


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    """Normalize quaternions to unit length; zero quaternions are invalid."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    norms = np.linalg.norm(q, axis=1)
    if np.any(norms == 0.0):
        raise InvalidPrimitiveError("zero-norm quaternion cannot be normalized")
    out = q / norms[:, None]
    return out[0] if single else out


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions (r, i, j, k). Batched."""
    q = np.atleast_2d(np.asarray(q))
    r, i, j, k = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty(q.shape[:1] + (3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1.0 - 2.0 * (j * j + k * k)
    R[:, 0, 1] = 2.0 * (i * j - r * k)
    R[:, 0, 2] = 2.0 * (i * k + r * j)
    R[:, 1, 0] = 2.0 * (i * j + r * k)
    R[:, 1, 1] = 1.0 - 2.0 * (i * i + k * k)
    R[:, 1, 2] = 2.0 * (j * k - r * i)
    R[:, 2, 0] = 2.0 * (i * k - r * j)
    R[:, 2, 1] = 2.0 * (j * k + r * i)
    R[:, 2, 2] = 1.0 - 2.0 * (i * i + j * j)
    return R


def assemble_covariance(rotation: np.ndarray, log_scale: np.ndarray) -> np.ndarray:
    """World-space covariance from quaternion rotation and log scales.

    Builds M = R * diag(exp(log_scale)) and returns M M^T, which is symmetric
    positive semi-definite by construction. Accepts single primitives or
    batches; quaternions are normalized first.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    single = rotation.ndim == 1
    q = normalize_quaternions(np.atleast_2d(rotation))
    s = np.exp(np.atleast_2d(np.asarray(log_scale, dtype=np.float64)))
    R = quaternion_to_rotation(q)
    M = R * s[:, None, :]
    cov = np.einsum("nij,nkj->nik", M, M)
    return cov[0] if single else cov


def eval_gaussian_2d(conic, mean2d, pixel) -> np.ndarray:
    """Evaluate a projected Gaussian at pixel positions.

    `conic` holds the upper triangle (a, b, c) of the inverted screen
    covariance. Returns exp(-0.5 * d^T A d); a positive exponent (possible
    only for a numerically degenerate conic) contributes zero.
    """
    conic = np.asarray(conic)
    mean2d = np.asarray(mean2d)
    pixel = np.asarray(pixel)
    dx = pixel[..., 0] - mean2d[..., 0]
    dy = pixel[..., 1] - mean2d[..., 1]
    a, b, c = conic[..., 0], conic[..., 1], conic[..., 2]
    power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
    return np.where(power > 0.0, 0.0, np.exp(np.minimum(power, 0.0)))


def evaluate_sh(sh: np.ndarray, active_degree: int, direction: np.ndarray) -> np.ndarray:
    """View-dependent RGB from SH coefficients along a unit direction.

    Bands above `active_degree` are ignored. A +0.5 offset is added so a
    zero-coefficient model is mid-gray, and the result is clamped at zero.
    """
    sh = np.asarray(sh, dtype=np.float64)
    single = sh.ndim == 2
    sh = sh.reshape((-1, 16, 3))
    dirs = np.atleast_2d(np.asarray(direction, dtype=np.float64))
    basis = sh_basis(dirs, active_degree)
    color = np.maximum(evaluate_sh_basis(basis, sh) + 0.5, 0.0)
    return color[0] if single else color


@dataclass
class ProjectedSplats:
    """Per-view 2D splats for the subset of Gaussians that survive culling.

    Everything needed by the forward rasterizer plus the cached intermediate
    state the backward pass reuses. Arrays are index-aligned; `source_index`
    maps each row back into the originating cloud.
    """

    source_index: np.ndarray   # (M,) int
    mean2d: np.ndarray         # (M, 2) pixels
    conic: np.ndarray          # (M, 3) upper triangle of inverse screen covariance
    depth: np.ndarray          # (M,) view-space z
    radius: np.ndarray         # (M,) int pixels, ceil(3 sigma_max)
    color: np.ndarray          # (M, 3) linear RGB, >= 0
    alpha: np.ndarray          # (M,) in (0, 1)
    # cached forward state for the backward pass
    view_pos: np.ndarray       # (M, 3)
    jw: np.ndarray             # (M, 2, 3) projection Jacobian times view rotation
    cov3d: np.ndarray          # (M, 3, 3)
    cov2d: np.ndarray          # (M, 3) floored screen covariance, upper triangle
    view_dir: np.ndarray       # (M, 3) unit camera-to-Gaussian direction
    view_dist: np.ndarray      # (M,)
    basis: np.ndarray          # (M, 16) SH basis values at view_dir
    color_active: np.ndarray   # (M, 3) bool, False where the zero clamp engaged

    def __len__(self) -> int:
        return self.source_index.shape[0]


def project(cloud: GaussianCloud, camera: Camera, active_sh_degree: int = 3,
            dtype=np.float64) -> ProjectedSplats:
    """Project a cloud into screen space for one camera.

    Rejects Gaussians in front of the near plane or far outside the frustum
    (guard band), builds the floored 2x2 screen covariance via the local
    affine approximation of the pinhole projection, and evaluates per-splat
    color and opacity. Splats whose floored covariance is not invertible are
    dropped rather than raised.
    """
    dt = np.dtype(dtype)
    W = camera.rotation.astype(dt)
    means = cloud.means.astype(dt)
    view = means @ W.T + camera.translation.astype(dt)

    keep = view[:, 2] >= camera.near
    index = np.nonzero(keep)[0]
    t = view[index]
    x, y, z = t[:, 0], t[:, 1], t[:, 2]

    u = camera.fx * x / z + camera.cx
    v = camera.fy * y / z + camera.cy
    ndc_x = (u - camera.cx) / (0.5 * camera.width)
    ndc_y = (v - camera.cy) / (0.5 * camera.height)
    inside = (np.abs(ndc_x) <= GUARD_BAND) & (np.abs(ndc_y) <= GUARD_BAND)
    index = index[inside]
    t, x, y, z = t[inside], x[inside], y[inside], z[inside]
    u, v = u[inside], v[inside]

    cov3d = assemble_covariance(cloud.rotations[index], cloud.log_scales[index]).astype(dt)
    m = index.shape[0]

    J = np.zeros((m, 2, 3), dtype=dt)
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    U = J @ W
    cov2d_full = np.einsum("nij,njk,nlk->nil", U, cov3d, U)
    ca = cov2d_full[:, 0, 0] + LOWPASS_FLOOR
    cb = cov2d_full[:, 0, 1]
    cc = cov2d_full[:, 1, 1] + LOWPASS_FLOOR

    det = ca * cc - cb * cb
    ok = det > 0.0
    index = index[ok]
    t, z, u, v = t[ok], z[ok], u[ok], v[ok]
    U, cov3d = U[ok], cov3d[ok]
    ca, cb, cc, det = ca[ok], cb[ok], cc[ok], det[ok]

    conic = np.stack([cc / det, -cb / det, ca / det], axis=1)
    mid = 0.5 * (ca + cc)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(RADIUS_SIGMAS * np.sqrt(lam_max)).astype(np.int64)

    delta = cloud.means[index].astype(dt) - camera.center.astype(dt)
    dist = np.linalg.norm(delta, axis=1)
    view_dir = delta / dist[:, None]
    basis = sh_basis(view_dir, active_sh_degree)
    color_pre = evaluate_sh_basis(basis, cloud.sh[index].astype(dt)) + 0.5
    color = np.maximum(color_pre, 0.0)
    alpha = expit(cloud.opacity_logits[index].astype(dt))

    return ProjectedSplats(
        source_index=index,
        mean2d=np.stack([u, v], axis=1),
        conic=conic,
        depth=z.copy(),
        radius=radius,
        color=color,
        alpha=alpha,
        view_pos=t,
        jw=U,
        cov3d=cov3d,
        cov2d=np.stack([ca, cb, cc], axis=1),
        view_dir=view_dir,
        view_dist=dist,
        basis=basis,
        color_active=color_pre > 0.0,
    )
