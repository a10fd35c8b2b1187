# %% [markdown]
# # Collection optics
#
# A photon leaving the focus of the paraboloid comes back parallel to the
# mirror axis; a thin lens then forms the image where the mask sits. Points
# off the focus land on a slightly warped grid, so straight mask lines look
# bowed from the sample.

# %%
import math
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from eghost.optics import (Ray, back_project, distortion_map, effective_magnification, preset, reflect,
                           sagitta, trace_to_image)

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

sys16, sys19 = preset("grating-run"), preset("cat-run")
m = sys16.mirror
print(f"lens to image: {sys16.lens_to_image_mm:.2f} mm (M=16), {sys19.lens_to_image_mm:.2f} mm (M=19)")
print(f"effective M: {effective_magnification(sys16):.3f}, {effective_magnification(sys19):.3f}")

# %% [markdown]
# Rays from the focus, sampled over the collection cone around the beam axis.

# %%
rng = np.random.default_rng(0)
angles = []
for _ in range(2000):
    th = math.acos(1 - rng.random() * (1 - math.cos(m.aperture_half_angle)))
    ph = 2 * math.pi * rng.random()
    d = math.cos(th) * m.b + math.sin(th) * (math.cos(ph) * m.a + math.sin(ph) * m.e1)
    try:
        out = reflect(Ray((0, 0, 0), d), m)
    except Exception:
        continue
    angles.append(np.arctan2(np.linalg.norm(np.cross(out.d, m.a)), out.d @ m.a))
print(f"{len(angles)} rays kept, worst angle to the axis {max(angles):.1e} rad")

# %% [markdown]
# Distortion over the beam footprint, relative to a perfect -M scaling.

# %%
tab = distortion_map(sys16, 20.0, 21)
err = np.hypot(tab[:, 2] - tab[:, 4], tab[:, 3] - tab[:, 5])
print(f"max departure from linear map over +-20 um: {err.max():.1f} um in the image plane")

fig, ax = plt.subplots(figsize=(5, 5))
ax.quiver(tab[:, 0], tab[:, 1], tab[:, 2] - tab[:, 4], tab[:, 3] - tab[:, 5])
ax.set_xlabel("x (um)")
ax.set_ylabel("y (um)")
ax.set_title("image-plane distortion")
fig.savefig(OUT / "01_distortion.png", dpi=120)

# %% [markdown]
# A straight 60 um grating line traced back into the sample plane.

# %%
Y = np.linspace(-15, 15, 61) * 16
line = np.column_stack([np.full_like(Y, 60.0), Y])
back = back_project(line, sys16)
print(f"sample-plane line x ~ {back[:, 0].mean():.3f} um, bow {sagitta(back) * 1e3:.0f} nm over 30 um")
print(f"round trip error {np.abs(trace_to_image(back, sys16) - line).max():.1e} um")
