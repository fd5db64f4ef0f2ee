/** Real spherical harmonics up to degree 3, matching the trainer's basis. */

const C0 = 0.28209479177387814;
const C1 = 0.4886025119029199;
const C2 = [1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
  -1.0925484305920792, 0.5462742152960396];
const C3 = [-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
  0.3731763325901154, -0.4570457994644658, 1.445305721320277, -0.5900435899266435];

/** Fill `basis` (length 16) with the SH basis at the unit direction. */
export function shBasis(x: number, y: number, z: number, degree: number, basis: Float64Array): void {
  basis.fill(0);
  basis[0] = C0;
  if (degree < 1) return;
  basis[1] = -C1 * y;
  basis[2] = C1 * z;
  basis[3] = -C1 * x;
  if (degree < 2) return;
  const xx = x * x, yy = y * y, zz = z * z;
  basis[4] = C2[0] * x * y;
  basis[5] = C2[1] * y * z;
  basis[6] = C2[2] * (2 * zz - xx - yy);
  basis[7] = C2[3] * x * z;
  basis[8] = C2[4] * (xx - yy);
  if (degree < 3) return;
  basis[9] = C3[0] * y * (3 * xx - yy);
  basis[10] = C3[1] * x * y * z;
  basis[11] = C3[2] * y * (4 * zz - xx - yy);
  basis[12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy);
  basis[13] = C3[4] * x * (4 * zz - xx - yy);
  basis[14] = C3[5] * z * (xx - yy);
  basis[15] = C3[6] * x * (xx - 3 * yy);
}

const scratch = new Float64Array(16);

/**
 * Evaluate a splat's view-dependent color: basis dot coefficients, +0.5
 * offset, clamped at zero. `out` receives r,g,b.
 */
export function evalSplatColor(
  sh: Float32Array, splat: number, dx: number, dy: number, dz: number,
  degree: number, out: Float64Array,
): void {
  const len = Math.hypot(dx, dy, dz) || 1;
  shBasis(dx / len, dy / len, dz / len, degree, scratch);
  const coeffs = (degree + 1) * (degree + 1);
  const base = 48 * splat;
  for (let c = 0; c < 3; c++) {
    let v = 0;
    for (let k = 0; k < coeffs; k++) v += scratch[k] * sh[base + 3 * k + c];
    out[c] = Math.max(v + 0.5, 0);
  }
}
