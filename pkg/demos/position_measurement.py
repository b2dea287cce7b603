"""A broad Gaussian sits over two box sites.

Branch weights match the |psi|^2 integral over each box.  The second half
prints how the radiation overlap of the two branches decays as the photon
shells grow, for fixed site centres and for centres that drift apart with R.
"""
import numpy as np

from slicesim import parse_config, run_scenario

for x0 in (0.0, 2.0):
    report = run_scenario(parse_config(f'[scenario]\nname = "position_measurement"\n[packet]\nx0 = {x0}\n'))
    born, oracle = report.metrics["born_weights"], report.metrics["window_norms"]
    print(f"x0 = {x0}: born {born}  window integrals {oracle}")

tail = report.metrics["overlap_tail"]
R = np.asarray(report.curves["distinguishability"]["R"])
print("\n     R    (1-D)R/w fixed    (1-D)R/w with D = beta R")
for r, a, b in list(zip(R, tail["fixed_centers_values"], tail["proportional_values"]))[::5]:
    print(f"{r:7.1f}    {a:10.4f}         {b:10.4f}")
