"""Finite-difference check of every layer's backward pass and of whole networks."""

from au3d.neuralnet import ArchitectureDescriptor
from au3d.neuralnet.gradcheck import check_network, run_all

results = run_all(seeds=(0, 1))
results += [check_network(ArchitectureDescriptor(variant=v), seed=0, batch=2, max_entries=3)
            for v in ("binary", "3class")]
for r in results:
    print(f"{r.name:28s} max rel error {r.max_rel_error:.2e}")
worst = max(r.max_rel_error for r in results)
print(f"worst {worst:.2e} ({'pass' if worst < 1e-4 else 'FAIL'} at 1e-4)")
