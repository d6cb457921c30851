"""
Adaptive timesteps from a coarse run
====================================

The whole chain on a small channel: coarse run, backward dual sweep,
indicators, timestep plan and fine run, in the three modes.  The
full-size chain is ``python -m adaptive_euler pipeline --out run``.
"""

# %%
import numpy as np

from adaptive_euler import scenario as sc
from adaptive_euler.scenario import ChannelConfig, Perturbation, PerturbationSpec

cfg = ChannelConfig(nx0=16, ny0=2, L_coarse=1, L_fine=3, T=3e-3, steady_tol=1e-10,
                    perturbation=PerturbationSpec((Perturbation(0.2, 6e-4, 1.2e-3, 5e-5),)))

results = {mode: sc.run_pipeline(cfg, mode) for mode in ("implicit", "eximp", "uniform")}

# %%
br = results["implicit"].breakdown
print("coarse steps:", br.n_steps, " eta_k =", br.eta_k, " eta_h =", br.eta_h)
print("indicator peak at t =", br.times[br.localized.argmax()])

# %%
for mode, res in results.items():
    plan = res.plan
    print(f"{mode:8s} {len(plan):5d} steps ({plan.count('explicit')} explicit), "
          f"largest dt {plan.dts.max():.2e}, smallest {plan.dts.min():.2e}, J = {res.J:.6e}")

# %%
# Wall-pressure difference of the adaptive runs against the uniform one.
ref = results["uniform"].fine
for mode in ("implicit", "eximp"):
    d = sc.trace_difference(results[mode].fine, ref)
    print(f"{mode}: relative L2 trace difference {d:.2e}")
