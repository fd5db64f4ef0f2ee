/** Viewer application: file loading, camera input, render loop. */

import { CameraIntrinsics, OrbitCamera, defaultPose, poseFromHash, poseToHash } from "./camera.js";
import { SplatModel, modelBounds } from "./model.js";
import { DEFAULT_SETTINGS, RenderSettings, renderFrame } from "./render.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner") as HTMLDivElement;
const stats = document.getElementById("stats") as HTMLDivElement;
const fileInput = document.getElementById("file") as HTMLInputElement;
const degreeSelect = document.getElementById("degree") as HTMLSelectElement;
const budgetInput = document.getElementById("budget") as HTMLInputElement;
const bgInput = document.getElementById("bg") as HTMLInputElement;

let model: SplatModel | null = null;
let camera = new OrbitCamera(defaultPose());
const settings: RenderSettings = { ...DEFAULT_SETTINGS };
let dirty = true;

const worker = new Worker(new URL("./worker.js", import.meta.url), { type: "module" });
worker.onmessage = (event) => {
  const msg = event.data;
  if (msg.kind === "error") {
    showError(`could not load model: ${msg.message}`);
    return;
  }
  model = msg.model as SplatModel;
  banner.hidden = true;
  const bounds = modelBounds(model);
  const fromHash = poseFromHash(location.hash);
  camera = new OrbitCamera(fromHash ?? {
    ...defaultPose(bounds.radius * 3),
    target: bounds.center,
  });
  stats.textContent = `${model.count} gaussians`;
  dirty = true;
};

function showError(message: string): void {
  banner.textContent = message;
  banner.hidden = false;
}

function intrinsics(): CameraIntrinsics {
  const width = canvas.width;
  const height = canvas.height;
  const focal = 0.8 * Math.max(width, height);
  return { fx: focal, fy: focal, cx: width / 2, cy: height / 2, width, height, near: 0.2 };
}

function loadFile(file: File): void {
  file.arrayBuffer().then((buffer) => worker.postMessage({ kind: "parse", buffer }, [buffer]))
    .catch((err) => showError(String(err)));
}

fileInput.addEventListener("change", () => {
  if (fileInput.files && fileInput.files[0]) loadFile(fileInput.files[0]);
});
canvas.addEventListener("dragover", (e) => e.preventDefault());
canvas.addEventListener("drop", (e) => {
  e.preventDefault();
  const file = e.dataTransfer?.files?.[0];
  if (file) loadFile(file);
});

let dragging = false;
let lastX = 0, lastY = 0;
canvas.addEventListener("mousedown", (e) => {
  dragging = true;
  lastX = e.clientX;
  lastY = e.clientY;
});
window.addEventListener("mouseup", () => { dragging = false; });
window.addEventListener("mousemove", (e) => {
  if (!dragging) return;
  camera.orbit(e.clientX - lastX, e.clientY - lastY);
  lastX = e.clientX;
  lastY = e.clientY;
  dirty = true;
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  camera.zoom(Math.sign(e.deltaY));
  dirty = true;
}, { passive: false });
window.addEventListener("keydown", (e) => {
  const steps: Record<string, [number, number]> = {
    w: [0, 1], s: [0, -1], a: [-1, 0], d: [1, 0],
  };
  const move = steps[e.key.toLowerCase()];
  if (move) {
    camera.fly(move[0], move[1]);
    dirty = true;
  }
});

degreeSelect.addEventListener("change", () => {
  settings.shDegree = parseInt(degreeSelect.value, 10);
  dirty = true;
});
budgetInput.addEventListener("change", () => {
  settings.maxSplats = Math.max(0, parseInt(budgetInput.value, 10) || 0);
  dirty = true;
});
bgInput.addEventListener("change", () => {
  const hex = bgInput.value;
  const toLinear = (s: number) =>
    s <= 0.04045 ? s / 12.92 : Math.pow((s + 0.055) / 1.055, 2.4);
  settings.background = [
    toLinear(parseInt(hex.slice(1, 3), 16) / 255),
    toLinear(parseInt(hex.slice(3, 5), 16) / 255),
    toLinear(parseInt(hex.slice(5, 7), 16) / 255),
  ];
  dirty = true;
});

window.addEventListener("hashchange", () => {
  const pose = poseFromHash(location.hash);
  if (pose) {
    camera = new OrbitCamera(pose);
    dirty = true;
  }
});

let lastFrame = performance.now();
function tick(): void {
  if (model && dirty) {
    dirty = false;
    const cam = intrinsics();
    const t0 = performance.now();
    const rgba = renderFrame(model, camera.view(), cam, settings);
    ctx.putImageData(new ImageData(rgba, cam.width, cam.height), 0, 0);
    const dt = performance.now() - t0;
    stats.textContent = `${model.count} gaussians | ${dt.toFixed(0)} ms/frame`;
    history.replaceState(null, "", poseToHash(camera.pose));
    lastFrame = t0;
  }
  requestAnimationFrame(tick);
}
requestAnimationFrame(tick);
void lastFrame;
