"""
Plan-aware tracking vs a naive reference
========================================

Runs the bundled demo scenario: the planner's path is tracked by the NMPC,
and so is a straight rest-to-rest move to the BS/peer midpoint. Both
closed-loop runs see the real tilt of the airframe. Same as
``tiltrelay compare`` on the command line.
"""

# %%
from importlib import resources
from pathlib import Path

import numpy as np

from tiltrelay.experiments import run_compare
from tiltrelay.scenario import load_scenario

cfg = load_scenario(resources.files("tiltrelay") / "scenarios" / "demo.yaml")
out = Path("out/demo")
res = run_compare(cfg, out)
for k, v in res.summary["bits"].items():
    print(f"{k:9s} {v:8.2f} bits/Hz")
print("nmpc / plan     ", round(res.summary["nmpc_over_plan"], 4))
print("nmpc / baseline ", round(res.summary["nmpc_over_baseline"], 4))

# %%
data = np.genfromtxt(out / "compare.csv", delimiter=",", names=True)
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    for k in ("plan", "nmpc", "baseline"):
        ax[0].plot(data["t"], data[f"rate_{k}"], label=k)
        ax[1].plot(data["t"], data[f"bits_{k}"], label=k)
    ax[0].set_title("normalized rate")
    ax[1].set_title("normalized cumulative bits")
    for a in ax:
        a.set_xlabel("t [s]")
        a.legend()
    fig.tight_layout()
    fig.savefig(out / "compare.png", dpi=120)
    print("wrote", out / "compare.png")
