# Follow a short U-shaped probe path with both cameras and compare
# left-only, right-only and fused estimates. Takes about a minute.
from pathlib import Path

from probepose.harness import generate_trajectory, run_experiment, write_outputs

traj = generate_trajectory("u_shape", samples=8)
result = run_experiment(traj, profile="clean", camera_mode="dual", seed=0)

for mode, s in result.report.breakdown.items():
    print(f"{mode:>5}: {s.trans_avg:.3f} +/- {s.trans_std:.3f} mm, "
          f"{s.rot_avg:.3f} +/- {s.rot_std:.3f} deg, max drift {s.trans_max:.3f} mm")

out = Path(__file__).with_name("out") / "u_shape_clean"
write_outputs(result, out)
print("report, pose CSVs and SVG plots in", out)
