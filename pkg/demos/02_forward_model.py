"""The modulated-intensity forward model.

Sweeps one video frame (pi radians of light-side plate rotation), compares
the 16-entry system-row form against the explicit polarizer/retarder matrix
chain, and shows the log-derivative that event timing measures.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

import eventpol as ep

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

phase = np.linspace(0.0, np.pi, 2000, endpoint=False)
i1, i2 = 0.12, 0.57

fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
for name, m in [
    ("air", np.eye(4)),
    ("lp@45", ep.linear_polarizer(np.pi / 4)),
    ("depolarizer@0.8", ep.ideal_depolarizer(0.8)),
]:
    intensity = ep.intensity_profile(phase, i1, i2, m)
    axes[0].plot(phase, intensity, label=name)
    a, da = ep.system_rows(phase, i1, i2)
    m_vec = ep.vectorize(m)
    axes[1].plot(phase, (da @ m_vec) / (a @ m_vec), label=name)
axes[0].set_ylabel("intensity (model units)")
axes[0].legend()
axes[1].set_ylabel("d log I / d phase")
axes[1].set_xlabel("light-side phase (rad)")
axes[1].set_ylim(-40, 40)
fig.tight_layout()
fig.savefig(out / "modulated_intensity.png", dpi=120)
print(f"wrote {out / 'modulated_intensity.png'}")

# The row form equals the explicit matrix chain times a constant factor 4
# (the two polarizer 1/2 factors).
m = ep.linear_polarizer(np.pi / 4)
chain = np.array(
    [
        (
            ep.linear_polarizer(0.0)
            @ ep.quarter_wave_plate(ep.SPEED_RATIO * w + i2)
            @ m
            @ ep.quarter_wave_plate(w + i1)
            @ ep.linear_polarizer(0.0)
            @ ep.unpolarized_stokes()
        )[0]
        for w in phase[::50]
    ]
)
model = ep.intensity_profile(phase[::50], i1, i2, m)
print("max |model - 4 * chain| =", np.abs(model - 4 * chain).max())

# The derivative rows agree with finite differences.
h = 1e-6
a_p, _ = ep.system_rows(phase + h, i1, i2)
a_m, _ = ep.system_rows(phase - h, i1, i2)
_, da = ep.system_rows(phase, i1, i2)
fd = (a_p - a_m) / (2 * h)
print("max finite-difference deviation =", np.abs(da - fd).max())
