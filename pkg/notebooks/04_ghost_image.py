# %% [markdown]
# # Ghost image of the cat mask
#
# The electron camera sees a plain disc. Keeping only electrons that have a
# photon partner in the window shows the mask, demagnified and flipped,
# on top of an accidental floor shaped like the disc.

# %%
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from eghost.coincidence import CoincidenceWindow, accidental_rate, estimate_offset, match_coincidences, \
    time_difference_histogram
from eghost.config import build_config
from eghost.reconstruction import (accumulate_ghost_image, binarize, demagnified_mask, dice, interior_region,
                                   raw_image, subtract_accidentals)
from eghost.source import simulate_run

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

cfg = build_config("cat-run")
mask, optics, B = cfg.mask(), cfg.optics(), cfg.binning()
e, p, _ = simulate_run(cfg.sim_config(), mask, optics)
h = time_difference_histogram(e, p)
w = CoincidenceWindow(int(round(estimate_offset(h)[0])), 25_000)
pairs = match_coincidences(e, p, w)
raw = raw_image(e, B)
ghost = accumulate_ghost_image(pairs, e, B, w)
acc, acc_err = accidental_rate(h, w)
sub = subtract_accidentals(ghost, raw, acc)
print(f"{len(pairs)} pairs, of which ~{acc:.0f} +- {acc_err:.0f} accidental")

# %%
region = interior_region(raw)
truth = demagnified_mask(mask, optics, B) & region
d0 = dice(binarize(ghost.counts, region=region), truth)
d1 = dice(binarize(sub.counts, region=region), truth)
print(f"Dice vs the demagnified mask: {d0:.3f} before, {d1:.3f} after subtraction")

fig, axs = plt.subplots(1, 3, figsize=(12, 4))
ext = [B.origin_um[0], B.origin_um[0] + B.shape[1] * B.bin_um, B.origin_um[1], B.origin_um[1] + B.shape[0] * B.bin_um]
for ax, img, title in zip(axs, (raw.counts, sub.counts, truth), ("raw electrons", "ghost (subtracted)", "mask seen from sample")):
    ax.imshow(img, origin="lower", extent=ext, cmap="gray")
    ax.set_title(title)
fig.savefig(OUT / "04_cat.png", dpi=120)
