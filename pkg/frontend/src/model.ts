/** In-memory splat model: flat typed arrays, one entry per Gaussian. */

export interface SplatModel {
  count: number;
  /** world positions, xyz interleaved (3N) */
  means: Float32Array;
  /** quaternions r,i,j,k interleaved (4N), not necessarily unit length */
  rotations: Float32Array;
  /** log of per-axis standard deviation (3N) */
  logScales: Float32Array;
  /** opacity logits (N); sigmoid gives alpha */
  opacityLogits: Float32Array;
  /** SH coefficients, per splat 16 coefficients x RGB (48N), degree-ordered */
  sh: Float32Array;
}

export class ModelParseError extends Error {}

export function emptyModel(count: number): SplatModel {
  return {
    count,
    means: new Float32Array(3 * count),
    rotations: new Float32Array(4 * count),
    logScales: new Float32Array(3 * count),
    opacityLogits: new Float32Array(count),
    sh: new Float32Array(48 * count),
  };
}

/** Bounding-sphere center and radius of the splat positions. */
export function modelBounds(model: SplatModel): { center: [number, number, number]; radius: number } {
  const c: [number, number, number] = [0, 0, 0];
  if (model.count === 0) return { center: c, radius: 1 };
  for (let i = 0; i < model.count; i++) {
    c[0] += model.means[3 * i];
    c[1] += model.means[3 * i + 1];
    c[2] += model.means[3 * i + 2];
  }
  c[0] /= model.count;
  c[1] /= model.count;
  c[2] /= model.count;
  let r2 = 0;
  for (let i = 0; i < model.count; i++) {
    const dx = model.means[3 * i] - c[0];
    const dy = model.means[3 * i + 1] - c[1];
    const dz = model.means[3 * i + 2] - c[2];
    r2 = Math.max(r2, dx * dx + dy * dy + dz * dz);
  }
  return { center: c, radius: Math.max(Math.sqrt(r2), 1e-6) };
}
