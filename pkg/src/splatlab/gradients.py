"""Hand-derived backward pass: blending, screen covariance, projection, and parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianCloud, ProjectedSplats, normalize_quaternions, quaternion_to_rotation
from .rasterizer import ALPHA_CLAMP, ALPHA_EPS, SplatGrads2D
from .sh import sh_basis_jacobian


@dataclass
class GaussianGrads:
    """Loss gradients for every Gaussian parameter; culled rows stay zero.

    view_pos_grad_norm is the per-view magnitude of each splat's accumulated
    screen-position gradient, the statistic the densification controller
    averages.
    """

    d_means: np.ndarray              # (N, 3)
    d_rotations: np.ndarray          # (N, 4)
    d_log_scales: np.ndarray         # (N, 3)
    d_opacity_logits: np.ndarray     # (N,)
    d_sh: np.ndarray                 # (N, 16, 3)
    view_pos_grad_norm: np.ndarray   # (N,)


def backward_blend(d_pixels, pix, t_final, last_local, mean2d, conic, alpha, colors, background):
    """Back-to-front chain rule through one tile's blend.

    The intermediate transmittances are reconstructed from the stored final
    transmittance by dividing out each blended splat's (1 - a) factor, walking
    the sorted list backwards. Splats whose blend weight fell below the skip
    threshold in the forward pass, or that sit behind a pixel's last
    contributor, receive nothing. Division is safe because a <= ALPHA_CLAMP.

    Returns per-splat (d_color, d_alpha, d_mean2d, d_conic) summed over the
    tile's pixels.
    """
    n = mean2d.shape[0]
    d_color = np.zeros((n, 3), dtype=d_pixels.dtype)
    d_alpha = np.zeros(n, dtype=d_pixels.dtype)
    d_mean2d = np.zeros((n, 2), dtype=d_pixels.dtype)
    d_conic = np.zeros((n, 3), dtype=d_pixels.dtype)
    # nothing past the last contributor of any pixel receives gradient
    needed = int(last_local.max()) + 1
    if needed <= 0:
        return d_color, d_alpha, d_mean2d, d_conic
    mean2d, conic = mean2d[:needed], conic[:needed]
    alpha, colors = alpha[:needed], colors[:needed]

    dx = pix[None, :, 0] - mean2d[:, 0, None]
    dy = pix[None, :, 1] - mean2d[:, 1, None]
    power = (-0.5 * (conic[:, 0, None] * dx * dx + conic[:, 2, None] * dy * dy)
             - conic[:, 1, None] * dx * dy)
    gauss = np.where(power > 0.0, 0.0, np.exp(np.minimum(power, 0.0)))
    a_raw = alpha[:, None] * gauss
    a = np.minimum(ALPHA_CLAMP, a_raw)
    a[a < ALPHA_EPS] = 0.0

    pos = np.arange(needed, dtype=np.int64)
    include = (a > 0.0) & (pos[:, None] <= last_local[None, :])
    a_eff = np.where(include, a, 0.0)

    # T just before each splat blended: divide the final transmittance by the
    # suffix product of (1 - a) of everything at or behind it.
    suffix = np.cumprod((1.0 - a_eff)[::-1], axis=0)[::-1]
    t_before = t_final[None, :] / suffix
    weight = t_before * a_eff

    # Per-pixel dot of each splat's color (and the composited tail behind it,
    # background included) with the incoming pixel gradient.
    dc_dot = colors @ d_pixels.T
    wc_dot = weight * dc_dot
    tail_dot = np.cumsum(wc_dot[::-1], axis=0)[::-1] - wc_dot
    tail_dot += (d_pixels @ background) * t_final

    d_color[:needed] = weight @ d_pixels
    d_a = np.where(include, t_before * dc_dot - tail_dot / (1.0 - a_eff), 0.0)

    live = include & (a_raw < ALPHA_CLAMP)
    d_power = np.where(live, d_a * a_raw, 0.0)
    d_alpha[:needed] = np.where(live, d_a * gauss, 0.0).sum(axis=1)
    gx = conic[:, 0, None] * dx + conic[:, 1, None] * dy
    gy = conic[:, 1, None] * dx + conic[:, 2, None] * dy
    d_mean2d[:needed, 0] = (d_power * gx).sum(axis=1)
    d_mean2d[:needed, 1] = (d_power * gy).sum(axis=1)
    dpdx = d_power * dx
    d_conic[:needed, 0] = -0.5 * (dpdx * dx).sum(axis=1)
    d_conic[:needed, 1] = -(dpdx * dy).sum(axis=1)
    d_conic[:needed, 2] = -0.5 * (d_power * dy * dy).sum(axis=1)
    return d_color, d_alpha, d_mean2d, d_conic


def backward_invert_cov2d(d_conic: np.ndarray, conic: np.ndarray) -> np.ndarray:
    """Gradient through conic = inverse(screen covariance).

    d_conic holds per-parameter grads for the (a, b, c) upper triangle; the
    result is the full symmetric 2x2 gradient w.r.t. the floored covariance,
    using dA = -A dS A.
    """
    m = d_conic.shape[0]
    A = np.empty((m, 2, 2), dtype=conic.dtype)
    A[:, 0, 0] = conic[:, 0]
    A[:, 0, 1] = A[:, 1, 0] = conic[:, 1]
    A[:, 1, 1] = conic[:, 2]
    G = np.empty_like(A)
    G[:, 0, 0] = d_conic[:, 0]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * d_conic[:, 1]
    G[:, 1, 1] = d_conic[:, 2]
    return -np.einsum("nij,njk,nkl->nil", A, G, A)


def backward_conic_to_cov3d(d_cov2d: np.ndarray, jw: np.ndarray) -> np.ndarray:
    """Chain the 2x2 screen covariance gradient back to the 3x3 world covariance.

    With U = J W and the screen covariance the upper-left block of U Sigma U^T,
    the pullback is U^T G U. The low-pass floor is additive so it passes the
    gradient through unchanged.
    """
    return np.einsum("nki,nkl,nlj->nij", jw, d_cov2d, jw)


def backward_cov3d_to_scale_rotation(d_cov3d, rotation, log_scale):
    """Gradients of the covariance assembly w.r.t. log scales and raw quaternion.

    Uses d_M = 2 d_Sigma M for M = R S, contracts with the analytic partials
    of M in the scale and (unit) quaternion components, then projects the
    quaternion gradient through the normalization and applies the exponential
    scale activation chain.
    """
    d_cov3d = np.asarray(d_cov3d)
    single = d_cov3d.ndim == 2
    d_cov3d = d_cov3d.reshape((-1, 3, 3))
    q_raw = np.atleast_2d(np.asarray(rotation, dtype=d_cov3d.dtype))
    ls = np.atleast_2d(np.asarray(log_scale, dtype=d_cov3d.dtype))

    norms = np.linalg.norm(q_raw, axis=1)
    q = q_raw / norms[:, None]
    s = np.exp(ls)
    R = quaternion_to_rotation(q)
    M = R * s[:, None, :]
    d_M = 2.0 * np.einsum("nij,njk->nik", d_cov3d, M)

    # dM/ds_k is the k-th column of R.
    d_s = np.einsum("nik,nik->nk", d_M, R)
    d_log_scale = d_s * s

    r, i, j, k = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    sx, sy, sz = s[:, 0], s[:, 1], s[:, 2]
    zero = np.zeros_like(r)

    def table(rows):
        return 2.0 * np.stack([np.stack(row, axis=1) for row in rows], axis=1)

    dM_dr = table([
        (zero, -sy * k, sz * j),
        (sx * k, zero, -sz * i),
        (-sx * j, sy * i, zero),
    ])
    dM_di = table([
        (zero, sy * j, sz * k),
        (sx * j, -2.0 * sy * i, -sz * r),
        (sx * k, sy * r, -2.0 * sz * i),
    ])
    dM_dj = table([
        (-2.0 * sx * j, sy * i, sz * r),
        (sx * i, zero, sz * k),
        (-sx * r, sy * k, -2.0 * sz * j),
    ])
    dM_dk = table([
        (-2.0 * sx * k, -sy * r, sz * i),
        (sx * r, -2.0 * sy * k, sz * j),
        (sx * i, sy * j, zero),
    ])
    d_q_unit = np.stack([
        np.einsum("nij,nij->n", d_M, dM_dr),
        np.einsum("nij,nij->n", d_M, dM_di),
        np.einsum("nij,nij->n", d_M, dM_dj),
        np.einsum("nij,nij->n", d_M, dM_dk),
    ], axis=1)
    # Normalization projects the gradient onto the sphere's tangent space.
    d_rotation = (d_q_unit - q * np.sum(q * d_q_unit, axis=1, keepdims=True)) / norms[:, None]

    if single:
        return d_log_scale[0], d_rotation[0]
    return d_log_scale, d_rotation


def backward_project(cloud: GaussianCloud, camera: Camera, splats: ProjectedSplats,
                     grads2d: SplatGrads2D, active_sh_degree: int = 3) -> GaussianGrads:
    """Complete the chain from 2D splat gradients to Gaussian parameter gradients.

    Includes every forward dependency: the screen mean and covariance paths
    into the view-space position (the projection Jacobian's own dependence on
    the mean included), the covariance factorization, the opacity sigmoid, and
    the per-splat SH color along the camera-to-Gaussian direction.
    """
    n = len(cloud)
    dt = splats.mean2d.dtype if len(splats) else np.float64
    out = GaussianGrads(
        d_means=np.zeros((n, 3), dtype=dt),
        d_rotations=np.zeros((n, 4), dtype=dt),
        d_log_scales=np.zeros((n, 3), dtype=dt),
        d_opacity_logits=np.zeros(n, dtype=dt),
        d_sh=np.zeros((n, 16, 3), dtype=dt),
        view_pos_grad_norm=np.zeros(n, dtype=dt),
    )
    m = len(splats)
    if m == 0:
        return out
    idx = splats.source_index

    # Opacity through the sigmoid.
    out.d_opacity_logits[idx] = grads2d.d_alpha * splats.alpha * (1.0 - splats.alpha)

    # Color: clamp mask, SH coefficients, and the direction path into the mean.
    d_color = np.where(splats.color_active, grads2d.d_color, 0.0)
    out.d_sh[idx] = splats.basis[:, :, None] * d_color[:, None, :]
    d_basis = np.einsum("nc,nkc->nk", d_color, cloud.sh[idx].astype(dt))
    basis_jac = sh_basis_jacobian(splats.view_dir, active_sh_degree)
    d_dir = np.einsum("nk,nkd->nd", d_basis, basis_jac)
    dot = np.sum(splats.view_dir * d_dir, axis=1, keepdims=True)
    d_mean_sh = (d_dir - splats.view_dir * dot) / splats.view_dist[:, None]

    # Conic -> floored screen covariance -> world covariance and view position.
    d_cov2d = backward_invert_cov2d(grads2d.d_conic, splats.conic)
    d_cov3d = backward_conic_to_cov3d(d_cov2d, splats.jw)
    d_log_scales, d_rotations = backward_cov3d_to_scale_rotation(
        d_cov3d, cloud.rotations[idx].astype(dt), cloud.log_scales[idx].astype(dt))
    out.d_log_scales[idx] = d_log_scales
    out.d_rotations[idx] = d_rotations

    # View-position gradient: the screen mean's Jacobian plus the screen
    # covariance's dependence on the Jacobian itself.
    x, y, z = splats.view_pos[:, 0], splats.view_pos[:, 1], splats.view_pos[:, 2]
    fx, fy = camera.fx, camera.fy
    W = camera.rotation.astype(dt)
    J = np.zeros((m, 2, 3), dtype=dt)
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)
    d_t = np.einsum("nij,ni->nj", J, grads2d.d_mean2d)

    d_U = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov2d, splats.jw, splats.cov3d)
    d_J = np.einsum("nij,kj->nik", d_U, W)
    z2 = z * z
    z3 = z2 * z
    d_t[:, 0] += d_J[:, 0, 2] * (-fx / z2)
    d_t[:, 1] += d_J[:, 1, 2] * (-fy / z2)
    d_t[:, 2] += (d_J[:, 0, 0] * (-fx / z2) + d_J[:, 0, 2] * (2.0 * fx * x / z3)
                  + d_J[:, 1, 1] * (-fy / z2) + d_J[:, 1, 2] * (2.0 * fy * y / z3))

    out.d_means[idx] = d_t @ W + d_mean_sh
    out.view_pos_grad_norm[idx] = np.linalg.norm(grads2d.d_mean2d, axis=1)
    return out
