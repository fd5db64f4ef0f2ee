/** Orbit/fly camera producing the same world-to-view convention as the trainer. */

export interface Pose {
  yaw: number;        // radians around the world z axis
  pitch: number;      // radians above the horizon
  distance: number;   // to the target
  target: [number, number, number];
}

export interface CameraIntrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  near: number;
}

export interface ViewMatrix {
  /** row-major 3x3 world-to-view rotation (x right, y down, z forward) */
  rotation: Float64Array;
  /** world-to-view translation */
  translation: Float64Array;
  /** camera center in world space */
  center: Float64Array;
}

const PITCH_LIMIT = Math.PI / 2 - 1e-3;

export function defaultPose(radius = 4): Pose {
  return { yaw: 0, pitch: 0.3, distance: radius, target: [0, 0, 0] };
}

export function eyePosition(pose: Pose): [number, number, number] {
  const cp = Math.cos(pose.pitch);
  return [
    pose.target[0] + pose.distance * cp * Math.cos(pose.yaw),
    pose.target[1] + pose.distance * cp * Math.sin(pose.yaw),
    pose.target[2] + pose.distance * Math.sin(pose.pitch),
  ];
}

function normalize3(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross3(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

/** Look-at view matrix with world up +z. */
export function viewFromPose(pose: Pose): ViewMatrix {
  const eye = eyePosition(pose);
  const forward = normalize3([
    pose.target[0] - eye[0], pose.target[1] - eye[1], pose.target[2] - eye[2],
  ]);
  const right = normalize3(cross3(forward, [0, 0, 1]));
  const down = cross3(forward, right);
  const rotation = new Float64Array([...right, ...down, ...forward]);
  const translation = new Float64Array(3);
  for (let r = 0; r < 3; r++) {
    translation[r] = -(rotation[3 * r] * eye[0] + rotation[3 * r + 1] * eye[1]
      + rotation[3 * r + 2] * eye[2]);
  }
  return { rotation, translation, center: new Float64Array(eye) };
}

export class OrbitCamera {
  pose: Pose;

  constructor(pose: Pose = defaultPose()) {
    this.pose = { ...pose, target: [...pose.target] };
  }

  view(): ViewMatrix {
    return viewFromPose(this.pose);
  }

  /** Drag rotation: dx/dy in pixels. */
  orbit(dx: number, dy: number, speed = 0.008): void {
    this.pose.yaw = (this.pose.yaw - dx * speed) % (2 * Math.PI);
    this.pose.pitch = Math.min(PITCH_LIMIT,
      Math.max(-PITCH_LIMIT, this.pose.pitch + dy * speed));
  }

  /** Wheel zoom: multiplicative so equal in/out steps restore the distance. */
  zoom(steps: number, factor = 1.1): void {
    this.pose.distance *= Math.pow(factor, steps);
    this.pose.distance = Math.min(1e4, Math.max(1e-3, this.pose.distance));
  }

  /** Fly the target (and hence the camera) along the view axes. */
  fly(rightward: number, forward: number, up = 0): void {
    const v = this.view();
    const step = this.pose.distance * 0.05;
    for (let k = 0; k < 3; k++) {
      this.pose.target[k] += step * (
        rightward * v.rotation[k]          // row 0: right
        + forward * v.rotation[6 + k]      // row 2: forward
      );
    }
    this.pose.target[2] += up * step;
  }
}

/** Serialize a pose into a URL hash fragment. */
export function poseToHash(pose: Pose): string {
  const vals = [pose.yaw, pose.pitch, pose.distance, ...pose.target];
  return "#p=" + vals.map((v) => v.toPrecision(6)).join(",");
}

export function poseFromHash(hash: string): Pose | null {
  const match = /^#p=([-+0-9.e,]+)$/.exec(hash);
  if (!match) return null;
  const vals = match[1].split(",").map(Number);
  if (vals.length !== 6 || vals.some((v) => !Number.isFinite(v))) return null;
  return {
    yaw: vals[0], pitch: vals[1], distance: vals[2],
    target: [vals[3], vals[4], vals[5]],
  };
}
