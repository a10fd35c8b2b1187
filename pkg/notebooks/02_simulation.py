# %% [markdown]
# # Simulated event streams
#
# Electrons arrive as a Poisson stream; a fraction make a photon pair
# partner that is traced through the optics, cut by the mask and detected
# with some efficiency. Both detectors add their own noise: leaked
# electrons, dark counts, timing jitter and the time-tagger grid.

# %%
from dataclasses import replace

import numpy as np

from eghost.config import build_config
from eghost.coincidence import estimate_offset, g2, time_difference_histogram
from eghost.source import simulate_run

cfg = build_config("cat-run")
sim = replace(cfg.sim_config(), run_duration_s=30.0)
e, p, truth = simulate_run(sim, cfg.mask(), cfg.optics())
print(f"{len(e)} electrons, {len(p)} photons in {sim.run_duration_s:.0f} s")
print(f"pairs made {truth.n_pairs}, through the mask {truth.transmitted.sum()}, "
      f"detected {truth.photon_detected.sum()}, both recorded {truth.n_true_coincidences}")
print(f"dark counts {truth.n_dark_counts}, leaked electrons {truth.n_background_electrons}")

# %% [markdown]
# The time-tag grid: every photon time is a multiple of 1562.5 ps, floored.

# %%
q = 125 * sim.timestamp_quantum_ticks / 2
print("distinct residues mod grid:", np.unique(np.round(p.t[:1000] % q)).size)

# %% [markdown]
# Correlation over the default +-1 us window.

# %%
h = time_difference_histogram(e, p)
g = g2(h)
off, err = estimate_offset(h)
k = int(np.argmax(h.counts))
print(f"peak g2 {g.g2[k]:.1f} at tau = {g.tau_ps[k] / 1e3:.0f} ns; offset estimate {off / 1e3:.1f} +- {err / 1e3:.1f} ns")
far = np.abs(g.tau_ps - off) > 200_000
print(f"background g2 {g.g2[far].mean():.3f}")
