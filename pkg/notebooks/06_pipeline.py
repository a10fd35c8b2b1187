# %% [markdown]
# # End-to-end run
#
# The same chain through the command-line entry point on a shortened cat
# run. Every artifact carries the seed and the config hash; the manifest
# lists their sha256 sums.

# %%
import json
import tempfile
from pathlib import Path

from eghost.cli import main

tmp = Path(tempfile.mkdtemp())
cfg = tmp / "short.toml"
cfg.write_text('[run]\npreset = "cat-run"\nseed = 3\n\n[simulation]\nrun_duration_s = 30.0\n')
rc = main(["all", "--config", str(cfg), "--out-dir", str(tmp / "out")])
print("exit status", rc)

manifest = json.loads((tmp / "out" / "manifest.json").read_text())
for name in sorted(manifest["files"]):
    print(f"  {name}")
print((tmp / "out" / "reconstruct" / "metrics.txt").read_text())
