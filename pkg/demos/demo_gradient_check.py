"""Check every gradient of the model against central finite differences.

Run: python demos/demo_gradient_check.py
"""
import time

from gmrec import run_fmcheck, run_gradcheck

t0 = time.perf_counter()
worst = run_gradcheck(instances=5, d=8, seed=0, step=1e-5)
print(f"gradients vs central differences over 5 random instances")
print(f"  worst relative error: {worst:.3e}   ({time.perf_counter() - t0:.1f}s)")
assert worst < 1e-4

t0 = time.perf_counter()
deviation = run_fmcheck(n=25, d_max=8, seed=0)
print(f"reduced pipeline vs analytic factorization-machine formula, 25 instances")
print(f"  max |difference|: {deviation:.3e}   ({time.perf_counter() - t0:.2f}s)")
assert deviation < 1e-9
