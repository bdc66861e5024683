"""The reduced pipeline collapses to the factorization-machine formula.

With every interaction modeled by an elementwise product over the union of
both node sets, a linear fuse u_i + half the summed products, and a match
that sums both graph representations' elements, the model's score equals
the classic second-order form: per-attribute weights plus pairwise dot
products. This demo evaluates both routes on a handful of random samples.

Run: python demos/demo_fm_identity.py
"""
import numpy as np

from gmrec import (
    AttributeId,
    AttributeValuePair,
    DataSample,
    fm_predict,
    fm_reduction_predict,
    init_embeddings,
)

rng = np.random.default_rng(7)
for trial in range(5):
    p = int(rng.integers(1, 5))
    q = int(rng.integers(1, 5))
    users = [AttributeId(i, "user") for i in range(p)]
    items = [AttributeId(p + j, "item") for j in range(q)]
    vals = rng.uniform(-2.0, 2.0, size=p + q)
    sample = DataSample(
        user_chars=tuple(AttributeValuePair(a, float(v)) for a, v in zip(users, vals[:p])),
        item_chars=tuple(AttributeValuePair(a, float(v)) for a, v in zip(items, vals[p:])),
        label=1.0,
    )
    table = init_embeddings(users + items, dim=int(rng.integers(2, 9)), seed=trial)
    reduced = fm_reduction_predict(sample, table)
    analytic = fm_predict(sample, table)
    print(f"trial {trial}: pipeline={reduced:+.12f}  formula={analytic:+.12f}  "
          f"|diff|={abs(reduced - analytic):.2e}")
