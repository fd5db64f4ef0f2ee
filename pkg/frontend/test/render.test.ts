import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { CameraIntrinsics, ViewMatrix } from "../src/camera.js";
import { emptyModel } from "../src/model.js";
import { parsePly } from "../src/ply.js";
import { DEFAULT_SETTINGS, depthOrder, projectSplats, renderFrame } from "../src/render.js";

const FIXTURES = join(__dirname, "fixtures");

function load(name: string): ArrayBuffer {
  const buf = readFileSync(join(FIXTURES, name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

interface PoseFile {
  rotation: number[][];
  translation: number[];
  fx: number; fy: number; cx: number; cy: number;
  width: number; height: number; near: number;
  background: [number, number, number];
}

function viewFromPoseFile(pose: PoseFile): { view: ViewMatrix; cam: CameraIntrinsics } {
  const rotation = new Float64Array(pose.rotation.flat());
  const translation = new Float64Array(pose.translation);
  // center = -R^T t
  const center = new Float64Array(3);
  for (let k = 0; k < 3; k++) {
    center[k] = -(rotation[k] * translation[0] + rotation[3 + k] * translation[1]
      + rotation[6 + k] * translation[2]);
  }
  return {
    view: { rotation, translation, center },
    cam: {
      fx: pose.fx, fy: pose.fy, cx: pose.cx, cy: pose.cy,
      width: pose.width, height: pose.height, near: pose.near,
    },
  };
}

function parsePpm(buffer: Buffer): { width: number; height: number; pixels: Uint8Array } {
  const text = buffer.subarray(0, 64).toString("ascii");
  const match = /^P6\n(\d+) (\d+)\n255\n/.exec(text);
  if (!match) throw new Error("bad ppm fixture");
  const width = parseInt(match[1], 10);
  const height = parseInt(match[2], 10);
  const offset = match[0].length;
  return { width, height, pixels: new Uint8Array(buffer.subarray(offset)) };
}

function redBlobModel() {
  const model = emptyModel(1);
  model.means.set([0, 0, 0]);
  model.rotations.set([1, 0, 0, 0]);
  model.logScales.set([Math.log(0.3), Math.log(0.3), Math.log(0.3)]);
  model.opacityLogits[0] = 4.0;
  // degree-0 red through the +0.5 offset: (1,0,0) -> c0 = +-0.5/C0
  model.sh[0] = 0.5 / 0.28209479177387814;
  model.sh[1] = -0.5 / 0.28209479177387814;
  model.sh[2] = -0.5 / 0.28209479177387814;
  return model;
}

function lookAtOrigin(distance: number): ViewMatrix {
  // camera on -x axis looking at origin, world up +z
  const rotation = new Float64Array([0, -1, 0, 0, 0, -1, 1, 0, 0]);
  const center = new Float64Array([-distance, 0, 0]);
  const translation = new Float64Array(3);
  for (let r = 0; r < 3; r++) {
    translation[r] = -(rotation[3 * r] * center[0] + rotation[3 * r + 1] * center[1]
      + rotation[3 * r + 2] * center[2]);
  }
  return { rotation, translation, center };
}

const CAM: CameraIntrinsics = {
  fx: 100, fy: 100, cx: 32, cy: 32, width: 64, height: 64, near: 0.2,
};

describe("software renderer", () => {
  it("renders a centered red blob in the viewport center", () => {
    const rgba = renderFrame(redBlobModel(), lookAtOrigin(4), CAM, DEFAULT_SETTINGS);
    const mid = 4 * (32 * 64 + 32);
    expect(rgba[mid]).toBeGreaterThan(150);        // red
    expect(rgba[mid + 1]).toBeLessThan(60);        // not green
    const corner = rgba[0];
    expect(corner).toBeLessThan(10);               // background stays dark
  });

  it("doubling the camera distance halves the projected radius", () => {
    const near = projectSplats(redBlobModel(), lookAtOrigin(4), CAM, DEFAULT_SETTINGS);
    const far = projectSplats(redBlobModel(), lookAtOrigin(8), CAM, DEFAULT_SETTINGS);
    expect(near.count).toBe(1);
    expect(far.count).toBe(1);
    expect(Math.abs(far.radius[0] - near.radius[0] / 2)).toBeLessThanOrEqual(1.0);
  });

  it("orders splats front to back with stable ties", () => {
    const model = emptyModel(3);
    for (let i = 0; i < 3; i++) {
      model.means[3 * i] = 0;
      model.rotations[4 * i] = 1;
      model.logScales.set([0, 0, 0], 3 * i);
    }
    model.means[2] = 5;   // splat 0 farther along +z view
    model.means[5] = 1;
    model.means[8] = 1;   // splats 1 and 2 tie
    const view: ViewMatrix = {
      rotation: new Float64Array([1, 0, 0, 0, 1, 0, 0, 0, 1]),
      translation: new Float64Array(3),
      center: new Float64Array(3),
    };
    const batch = projectSplats(model, view,
      { ...CAM, near: 0.1 }, { ...DEFAULT_SETTINGS });
    const order = depthOrder(batch);
    const depths = Array.from(order).map((i) => batch.depth[i]);
    expect(depths).toEqual([...depths].sort((a, b) => a - b));
    expect(order[0]).not.toBe(0);
    expect(Array.from(order.slice(0, 2))).toEqual([1, 2]); // stable tie
  });

  it("matches the trainer's render of the toy scene (cross-renderer PSNR)", () => {
    const model = parsePly(load("toy.ply"));
    const pose = JSON.parse(readFileSync(join(FIXTURES, "pose.json"), "utf-8")) as PoseFile;
    const { view, cam } = viewFromPoseFile(pose);
    const rgba = renderFrame(model, view, cam, {
      background: pose.background, shDegree: 3, maxSplats: 0,
    });
    const expected = parsePpm(readFileSync(join(FIXTURES, "expected.ppm")));
    expect(expected.width).toBe(cam.width);
    let sum = 0;
    const count = cam.width * cam.height;
    for (let p = 0; p < count; p++) {
      for (let c = 0; c < 3; c++) {
        const d = (rgba[4 * p + c] - expected.pixels[3 * p + c]) / 255;
        sum += d * d;
      }
    }
    const mse = sum / (count * 3);
    const psnr = 10 * Math.log10(1 / mse);
    expect(psnr).toBeGreaterThanOrEqual(25);
  });

  it("point budget caps the splats considered", () => {
    const model = parsePly(load("toy.ply"));
    const pose = JSON.parse(readFileSync(join(FIXTURES, "pose.json"), "utf-8")) as PoseFile;
    const { view, cam } = viewFromPoseFile(pose);
    const batch = projectSplats(model, view, cam, { ...DEFAULT_SETTINGS, maxSplats: 3 });
    expect(batch.count).toBeLessThanOrEqual(3);
  });

  it("empty model renders pure background", () => {
    const rgba = renderFrame(emptyModel(0), lookAtOrigin(4), CAM,
      { background: [1, 1, 1], shDegree: 3, maxSplats: 0 });
    for (let p = 0; p < 16; p++) expect(rgba[4 * p]).toBe(255);
  });
});
