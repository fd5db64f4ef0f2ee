"""Regenerate the web viewer's cross-consistency fixtures from the toy scene.

Writes: toy.ply (model export), toy.splat (binary model), pose.json (pinned
camera), expected.ppm (the trainer-side render at that camera, sRGB 8-bit).
Run from the repository root:  python3 scripts/make_viewer_fixture.py
"""
import json
from pathlib import Path

import numpy as np

from splatlab.optimizer import render_view
from splatlab.scene_io import export_ply, linear_to_srgb, save_model
from splatlab.toydata import make_toy_cloud, orbit_camera

OUT = Path(__file__).resolve().parent.parent / "frontend" / "test" / "fixtures"


def write_ppm(path, image):
    srgb = np.round(linear_to_srgb(image) * 255.0).astype(np.uint8)
    h, w = srgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(srgb.tobytes())


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    cloud = make_toy_cloud(7)
    camera = orbit_camera(azimuth=0.9, elevation=0.25, distance=40.0,
                          resolution=128, focal=1280.0)
    export_ply(OUT / "toy.ply", cloud)
    save_model(OUT / "toy.splat", cloud)

    background = np.array([0.05, 0.05, 0.08])
    out, _, _ = render_view(cloud, camera, background)
    write_ppm(OUT / "expected.ppm", out.image)

    pose = {
        "rotation": camera.rotation.tolist(),
        "translation": camera.translation.tolist(),
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height, "near": camera.near,
        "background": background.tolist(),
    }
    (OUT / "pose.json").write_text(json.dumps(pose, indent=2))
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
