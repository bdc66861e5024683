"""Randomized self-checks: gradients vs finite differences, and the
factorization-machine identity of the reduced pipeline."""
from __future__ import annotations

import numpy as np

from .autodiff import Tape, gradient_check
from .data import ITEM, USER, AttributeId, AttributeValuePair, DataSample, init_embeddings
from .model import (
    CANONICAL,
    VariantConfig,
    _forward,
    _forward_plain,
    build_plan,
    init_model_params,
)
from .variants import fm_predict, fm_reduction_predict


def random_instance(d: int, seed: int, max_attrs: int = 4):
    """A random sample plus seeded model parameters over a matching universe."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
    p = int(rng.integers(1, max_attrs + 1))
    q = int(rng.integers(1, max_attrs + 1))
    user_ids = [AttributeId(i, USER) for i in range(p)]
    item_ids = [AttributeId(p + j, ITEM) for j in range(q)]
    vals = rng.uniform(0.5, 1.5, size=p + q)
    sample = DataSample(
        user_chars=tuple(AttributeValuePair(a, float(v)) for a, v in zip(user_ids, vals[:p])),
        item_chars=tuple(AttributeValuePair(a, float(v)) for a, v in zip(item_ids, vals[p:])),
        label=1.0,
    )
    init_seed = int(rng.integers(0, 2**31))
    return sample, user_ids + item_ids, init_seed


def run_gradcheck(
    instances: int = 20,
    d: int = 8,
    seed: int = 0,
    step: float = 1e-5,
    max_attrs: int = 4,
    variant: VariantConfig = CANONICAL,
) -> float:
    """Worst relative error over seeded random instances of the full forward.

    The difference quotients evaluate the untracked twin of the forward,
    which is bit-identical to the tape path (asserted in the test suite).
    """
    worst = 0.0
    for k in range(instances):
        sample, universe, init_seed = random_instance(d, seed + k, max_attrs)
        mp = init_model_params(universe, d, init_seed, variant)
        plan = build_plan([sample], mp.table, variant)

        def forward():
            tape = Tape()
            return tape.sum_reduce(_forward(tape, plan, mp, variant, row_local=False).scores)

        def value():
            return float(_forward_plain(plan, mp, variant)[0])

        worst = max(worst, gradient_check(forward, mp.parameters(), step, value_fn=value))
    return float(worst)


def run_fmcheck(n: int = 50, d_max: int = 8, seed: int = 0, max_attrs: int = 4) -> float:
    """Max |reduced-pipeline score - analytic FM score| over random instances."""
    worst = 0.0
    for k in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7, k]))
        d = int(rng.integers(1, d_max + 1))
        p = int(rng.integers(1, max_attrs + 1))
        q = int(rng.integers(1, max_attrs + 1))
        user_ids = [AttributeId(i, USER) for i in range(p)]
        item_ids = [AttributeId(p + j, ITEM) for j in range(q)]
        table = init_embeddings(user_ids + item_ids, d, int(rng.integers(0, 2**31)))
        vals = rng.uniform(-2.0, 2.0, size=p + q)
        sample = DataSample(
            user_chars=tuple(
                AttributeValuePair(a, float(v)) for a, v in zip(user_ids, vals[:p])
            ),
            item_chars=tuple(
                AttributeValuePair(a, float(v)) for a, v in zip(item_ids, vals[p:])
            ),
            label=1.0,
        )
        deviation = abs(fm_reduction_predict(sample, table) - fm_predict(sample, table))
        worst = max(worst, deviation)
    return float(worst)
