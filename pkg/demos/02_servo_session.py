# One visual-servoing session: a simulated camera chases a target frame.
# The printed trace shows the measured residual shrinking every iteration.
import math

import numpy as np

from probepose.geometry import pose_errors
from probepose.harness import random_camera_pose, random_offset
from probepose.servo import run_session
from probepose.simcam import Intrinsics, Workspace, render_view

rng = np.random.default_rng(3)
k, ws = Intrinsics.default(), Workspace()

gt = random_camera_pose(rng)       # where the "real" camera is
init = random_offset(gt, rng)      # where the simulation starts (<= 30 mm / 10 deg away)
target = render_view(gt, k, ws)

dt, da = pose_errors(init, gt)
print(f"start: {dt * 1e3:.1f} mm / {math.degrees(da):.2f} deg from the target")

res = run_session(target, k, ws, init)
for it, t, r in res.trace:
    print(f"  iter {it:2d}: |t| = {t * 1e3:8.4f} mm   |theta u| = {math.degrees(r):7.4f} deg")

dt, da = pose_errors(res.camera_pose, gt)
print(f"converged={res.converged} after {res.iterations} iterations; "
      f"final error {dt * 1e3:.3f} mm / {math.degrees(da):.3f} deg, weight {res.weight:.3f}")
