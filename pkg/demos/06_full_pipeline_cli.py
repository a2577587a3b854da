"""Drive the full pipeline through the command-line interface.

Uses the packaged scene descriptions: simulates a ramp recording and the
offset reference to build a calibration file, then simulates, reconstructs,
decomposes, and evaluates the noisy two-material scene.
"""

import subprocess
import sys
from pathlib import Path

root = Path(__file__).parent.parent
scenes_dir = root / "scenes"
work = Path(__file__).parent / "out" / "cli"
work.mkdir(parents=True, exist_ok=True)


def run(*args):
    cmd = [sys.executable, "-m", "eventpol", *args]
    print("$", " ".join(str(a) for a in cmd[2:]))
    subprocess.run(cmd, check=True)
    print()


calib = work / "sensor.calb"

# 1. Contrast thresholds from a ramp recording.
run("simulate", scenes_dir / "ramp.json", work / "ramp.evt")
run("calibrate", "--mode", "threshold", work / "ramp.evt", "--out", calib)

# 2. Plate offsets from the reference-target recording.  All packaged
#    recordings come from the same simulated instrument (offsets 0.12 and
#    0.57 rad), so this calibration applies to the scene below.
run("simulate", scenes_dir / "offsets_reference.json", work / "reference.evt")
run(
    "calibrate", "--mode", "offsets", work / "reference.evt",
    "--out", calib, "--grid-step-deg", "1.0",
)

# 3. Simulate and reconstruct the noisy two-material scene.
run("simulate", scenes_dir / "desk.json", work / "desk.evt")
run(
    "reconstruct", work / "desk.evt", work / "desk.mmv",
    "--calibration", calib, "--seed", "7",
)

# 4. Physical decomposition maps and error metrics against ground truth.
run("decompose", work / "desk.mmv", work / "maps")
run("evaluate", work / "desk.mmv", str(work / "desk.evt") + ".gt.mmv")

print(f"all outputs under {work}")
