/** CPU splat renderer: project, depth-sort, blend front-to-back per splat. */

import { CameraIntrinsics, ViewMatrix } from "./camera.js";
import { SplatModel } from "./model.js";
import { evalSplatColor } from "./sh.js";

const LOWPASS_FLOOR = 0.3;
const GUARD_BAND = 1.3;
const ALPHA_EPS = 1 / 255;
const ALPHA_CLAMP = 0.99;
const SATURATION = 0.9999;

export interface RenderSettings {
  background: [number, number, number];
  shDegree: number;      // 0..3 cap applied per splat
  maxSplats: number;     // point budget; 0 = unlimited
}

export const DEFAULT_SETTINGS: RenderSettings = {
  background: [0, 0, 0],
  shDegree: 3,
  maxSplats: 0,
};

export interface ProjectedBatch {
  count: number;
  index: Int32Array;     // model indices of accepted splats
  meanX: Float64Array;
  meanY: Float64Array;
  depth: Float64Array;
  conicA: Float64Array;
  conicB: Float64Array;
  conicC: Float64Array;
  radius: Float64Array;
  alpha: Float64Array;
  color: Float64Array;   // rgb interleaved
}

export function projectSplats(
  model: SplatModel, view: ViewMatrix, cam: CameraIntrinsics, settings: RenderSettings,
): ProjectedBatch {
  const limit = settings.maxSplats > 0 ? Math.min(settings.maxSplats, model.count) : model.count;
  const out: ProjectedBatch = {
    count: 0,
    index: new Int32Array(limit),
    meanX: new Float64Array(limit),
    meanY: new Float64Array(limit),
    depth: new Float64Array(limit),
    conicA: new Float64Array(limit),
    conicB: new Float64Array(limit),
    conicC: new Float64Array(limit),
    radius: new Float64Array(limit),
    alpha: new Float64Array(limit),
    color: new Float64Array(3 * limit),
  };
  const R = view.rotation;
  const t = view.translation;
  const colorOut = new Float64Array(3);

  for (let s = 0; s < limit; s++) {
    const wx = model.means[3 * s], wy = model.means[3 * s + 1], wz = model.means[3 * s + 2];
    const x = R[0] * wx + R[1] * wy + R[2] * wz + t[0];
    const y = R[3] * wx + R[4] * wy + R[5] * wz + t[1];
    const z = R[6] * wx + R[7] * wy + R[8] * wz + t[2];
    if (z < cam.near) continue;
    const u = cam.fx * x / z + cam.cx;
    const v = cam.fy * y / z + cam.cy;
    if (Math.abs((u - cam.cx) / (0.5 * cam.width)) > GUARD_BAND) continue;
    if (Math.abs((v - cam.cy) / (0.5 * cam.height)) > GUARD_BAND) continue;

    // world covariance from quaternion and scales
    let qr = model.rotations[4 * s], qi = model.rotations[4 * s + 1];
    let qj = model.rotations[4 * s + 2], qk = model.rotations[4 * s + 3];
    const qn = Math.hypot(qr, qi, qj, qk);
    if (qn === 0) continue;
    qr /= qn; qi /= qn; qj /= qn; qk /= qn;
    const sx = Math.exp(model.logScales[3 * s]);
    const sy = Math.exp(model.logScales[3 * s + 1]);
    const sz = Math.exp(model.logScales[3 * s + 2]);
    // rotation matrix columns scaled: M = R(q) diag(s)
    const m = [
      (1 - 2 * (qj * qj + qk * qk)) * sx, (2 * (qi * qj - qr * qk)) * sy, (2 * (qi * qk + qr * qj)) * sz,
      (2 * (qi * qj + qr * qk)) * sx, (1 - 2 * (qi * qi + qk * qk)) * sy, (2 * (qj * qk - qr * qi)) * sz,
      (2 * (qi * qk - qr * qj)) * sx, (2 * (qj * qk + qr * qi)) * sy, (1 - 2 * (qi * qi + qj * qj)) * sz,
    ];
    // sigma = M M^T (symmetric; six unique entries)
    const s00 = m[0] * m[0] + m[1] * m[1] + m[2] * m[2];
    const s01 = m[0] * m[3] + m[1] * m[4] + m[2] * m[5];
    const s02 = m[0] * m[6] + m[1] * m[7] + m[2] * m[8];
    const s11 = m[3] * m[3] + m[4] * m[4] + m[5] * m[5];
    const s12 = m[3] * m[6] + m[4] * m[7] + m[5] * m[8];
    const s22 = m[6] * m[6] + m[7] * m[7] + m[8] * m[8];

    // U = J W, with J the local affine approximation of the projection
    const j00 = cam.fx / z, j02 = -cam.fx * x / (z * z);
    const j11 = cam.fy / z, j12 = -cam.fy * y / (z * z);
    const u0 = j00 * R[0] + j02 * R[6];
    const u1 = j00 * R[1] + j02 * R[7];
    const u2 = j00 * R[2] + j02 * R[8];
    const u3 = j11 * R[3] + j12 * R[6];
    const u4 = j11 * R[4] + j12 * R[7];
    const u5 = j11 * R[5] + j12 * R[8];
    // cov2d = U sigma U^T + floor
    const t0 = u0 * s00 + u1 * s01 + u2 * s02;
    const t1 = u0 * s01 + u1 * s11 + u2 * s12;
    const t2 = u0 * s02 + u1 * s12 + u2 * s22;
    const t3 = u3 * s00 + u4 * s01 + u5 * s02;
    const t4 = u3 * s01 + u4 * s11 + u5 * s12;
    const t5 = u3 * s02 + u4 * s12 + u5 * s22;
    const ca = t0 * u0 + t1 * u1 + t2 * u2 + LOWPASS_FLOOR;
    const cb = t0 * u3 + t1 * u4 + t2 * u5;
    const cc = t3 * u3 + t4 * u4 + t5 * u5 + LOWPASS_FLOOR;
    const det = ca * cc - cb * cb;
    if (det <= 0) continue;

    const mid = 0.5 * (ca + cc);
    const lamMax = mid + Math.sqrt(Math.max(mid * mid - det, 0));
    const alpha = 1 / (1 + Math.exp(-model.opacityLogits[s]));

    evalSplatColor(model.sh, s,
      wx - view.center[0], wy - view.center[1], wz - view.center[2],
      settings.shDegree, colorOut);

    const i = out.count++;
    out.index[i] = s;
    out.meanX[i] = u;
    out.meanY[i] = v;
    out.depth[i] = z;
    out.conicA[i] = cc / det;
    out.conicB[i] = -cb / det;
    out.conicC[i] = ca / det;
    out.radius[i] = Math.ceil(3 * Math.sqrt(lamMax));
    out.alpha[i] = alpha;
    out.color[3 * i] = colorOut[0];
    out.color[3 * i + 1] = colorOut[1];
    out.color[3 * i + 2] = colorOut[2];
  }
  return out;
}

/** Indices of the batch ordered front to back (ties keep splat order). */
export function depthOrder(batch: ProjectedBatch): Int32Array {
  const order = new Int32Array(batch.count);
  for (let i = 0; i < batch.count; i++) order[i] = i;
  const depth = batch.depth;
  // numeric stable sort; JS Array.sort is stable per spec
  return Int32Array.from(Array.from(order).sort((a, b) => depth[a] - depth[b]));
}

/**
 * Composite the sorted splats into a linear float RGB buffer.
 * Per-pixel transmittance stops at the saturation threshold, mirroring the
 * trainer's forward pass (approximately: no tile binning, global sort).
 */
export function compositeFloat(
  batch: ProjectedBatch, order: Int32Array, cam: CameraIntrinsics,
  settings: RenderSettings,
): Float64Array {
  const { width, height } = cam;
  const color = new Float64Array(3 * width * height);
  const trans = new Float64Array(width * height).fill(1);
  const stopped = new Uint8Array(width * height);

  for (let o = 0; o < order.length; o++) {
    const i = order[o];
    const r = batch.radius[i];
    const x0 = Math.max(0, Math.floor(batch.meanX[i] - r));
    const x1 = Math.min(width - 1, Math.ceil(batch.meanX[i] + r));
    const y0 = Math.max(0, Math.floor(batch.meanY[i] - r));
    const y1 = Math.min(height - 1, Math.ceil(batch.meanY[i] + r));
    if (x1 < x0 || y1 < y0) continue;
    const a0 = batch.conicA[i], b0 = batch.conicB[i], c0 = batch.conicC[i];
    const alpha = batch.alpha[i];
    const cr = batch.color[3 * i], cg = batch.color[3 * i + 1], cb2 = batch.color[3 * i + 2];

    for (let py = y0; py <= y1; py++) {
      const dy = py + 0.5 - batch.meanY[i];
      let row = py * width + x0;
      for (let px = x0; px <= x1; px++, row++) {
        if (stopped[row]) continue;
        const tPrev = trans[row];
        const dx = px + 0.5 - batch.meanX[i];
        const power = -0.5 * (a0 * dx * dx + c0 * dy * dy) - b0 * dx * dy;
        if (power > 0) continue;
        let a = alpha * Math.exp(power);
        if (a > ALPHA_CLAMP) a = ALPHA_CLAMP;
        if (a < ALPHA_EPS) continue;
        const tNew = tPrev * (1 - a);
        if (1 - tNew > SATURATION) {
          stopped[row] = 1;
          continue;
        }
        const w = tPrev * a;
        color[3 * row] += w * cr;
        color[3 * row + 1] += w * cg;
        color[3 * row + 2] += w * cb2;
        trans[row] = tNew;
      }
    }
  }
  const [br, bg, bb] = settings.background;
  for (let p = 0; p < width * height; p++) {
    color[3 * p] += trans[p] * br;
    color[3 * p + 1] += trans[p] * bg;
    color[3 * p + 2] += trans[p] * bb;
  }
  return color;
}

export function linearToSrgb(v: number): number {
  const x = Math.min(1, Math.max(0, v));
  return x <= 0.0031308 ? x * 12.92 : 1.055 * Math.pow(x, 1 / 2.4) - 0.055;
}

/** Full frame: returns sRGB RGBA bytes ready for putImageData. */
export function renderFrame(
  model: SplatModel, view: ViewMatrix, cam: CameraIntrinsics,
  settings: RenderSettings = DEFAULT_SETTINGS,
): Uint8ClampedArray<ArrayBuffer> {
  const batch = projectSplats(model, view, cam, settings);
  const order = depthOrder(batch);
  const float = compositeFloat(batch, order, cam, settings);
  const rgba = new Uint8ClampedArray(4 * cam.width * cam.height);
  for (let p = 0; p < cam.width * cam.height; p++) {
    rgba[4 * p] = Math.round(linearToSrgb(float[3 * p]) * 255);
    rgba[4 * p + 1] = Math.round(linearToSrgb(float[3 * p + 1]) * 255);
    rgba[4 * p + 2] = Math.round(linearToSrgb(float[3 * p + 2]) * 255);
    rgba[4 * p + 3] = 255;
  }
  return rgba;
}
