"""A device whose own position is in superposition measures a particle.

The joint ledger holds one branch per (device offset, site) pair with
positive weight.  Summing over the device offset coherently cancels where
the transverse phase flips sign; summing weights does not.
"""
from slicesim import parse_config, run_scenario

base = '[scenario]\nname = "nested_fuzzy"\n'
after = run_scenario(parse_config(base))
before = run_scenario(parse_config(base + '[scenario.params]\nmeta_order = "before"\n'))

print("positive branches:", after.metrics["positive_branches"], after.metrics["branches_per_configuration"])
print("before vs after max delta:", after.metrics["meta_order_max_delta"])
same = [a["weight"] - b["weight"] for a, b in zip(after.branches, before.branches)]
print("row-wise weight deltas (before/after):", max(map(abs, same)))
for s in after.metrics["fuzzy_sites"]:
    print(f"site {s['site']}: coherent {s['coherent']:.3e}  incoherent {s['incoherent']:.3e}")
