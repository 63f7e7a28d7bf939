# Render a rig camera, hide part of the frame behind an "arm", and restore it.
# Writes demos/out/restore_side_by_side.png (live | restored).
import math
from pathlib import Path

import numpy as np

from probepose.geometry import Pose
from probepose.image import band_occlusion, inject_perturbation, write_png
from probepose.restoration import restore_view, side_by_side
from probepose.simcam import CameraRig, Workspace, probe_orientation, render_view

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

ws = Workspace()  # the shipped 0.8 m Voronoi texture on z = 0
rig = CameraRig.default()
probe = Pose(probe_orientation([1.0, 0.3, 0.0]), [0.02, -0.04, 0.08])
cam = rig["left"]

clean = render_view(probe @ cam.extrinsic, cam.intrinsics, ws)

# a 40% band, roughly what a forearm in front of the camera looks like
live = inject_perturbation(clean, band_occlusion(640, 360, 0.4, np.random.default_rng(1)))

restored = restore_view(live, ws.pattern)
mae = np.abs(restored.image.astype(float) - clean).mean()
print(f"inlier ratio {restored.inlier_ratio:.2f}, restored-vs-clean MAE {mae:.2f} grey levels")

write_png(out / "restore_side_by_side.png", side_by_side(live, restored))
print("wrote", out / "restore_side_by_side.png")
