import math

import numpy as np
import pytest

from gmrec.autodiff import Parameter, Tape, gradient_check
from gmrec.data import sample_user_key, universe_of
from gmrec.errors import ContractError, SamplingError
from gmrec.metrics import auc
from gmrec.model import CANONICAL, init_model_params, score_samples
from gmrec.training import (
    AdamState,
    SplitDataset,
    TrainConfig,
    adam_step,
    bce_loss,
    item_pool_of,
    l2_penalty,
    negative_sample,
    regularized_risk,
    split_per_user,
    train,
)

from conftest import make_sample
from oracles import sigmoid


def make_labeled_samples(n_users, per_user, rng, n_item_pool=None, id_base=1000):
    """Users share a pool of item characteristics; labels alternate."""
    n_item_pool = n_item_pool or (2 * per_user)
    samples = []
    for u in range(n_users):
        user_sample = make_sample(2, 1, id_offset=id_base + 10 * u)
        items = rng.choice(n_item_pool, size=per_user, replace=False)
        for k, item in enumerate(items):
            proto = make_sample(1, 2, id_offset=50_000 + 10 * int(item))
            samples.append(
                type(proto)(
                    user_chars=user_sample.user_chars,
                    item_chars=proto.item_chars,
                    label=float(k % 2 == 0),
                )
            )
    return samples


class TestBceLoss:
    def test_half_probability(self):
        assert abs(bce_loss(0.5, 1.0) - math.log(2.0)) < 1e-12

    def test_confident_correct_is_near_zero(self):
        assert bce_loss(1.0 - 1e-12, 1.0) < 1e-11

    def test_wrong_with_point_nine(self):
        assert abs(bce_loss(0.9, 0.0) - (-math.log(0.1))) < 1e-12

    def test_clamping_keeps_loss_finite(self):
        assert math.isfinite(bce_loss(0.0, 1.0))
        assert math.isfinite(bce_loss(1.0, 0.0))


class TestPenalty:
    def test_squared_norm_example(self):
        p = Parameter([3.0, 4.0])
        tape = Tape()
        out = l2_penalty(tape, [tape.param(p)], 0.1)
        assert abs(float(out.data) - 2.5) < 1e-15

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            l2_penalty(Tape(), [], 0.1)


class TestRegularizedRisk:
    def _setup(self, rng, n=4):
        samples = [
            make_sample(2, 2, vals=list(rng.uniform(0.5, 1.5, size=4)), label=float(k % 2))
            for k in range(n)
        ]
        mp = init_model_params(universe_of(samples), 8, 3)
        return samples, mp

    def test_lambda_zero_is_mean_bce(self, rng):
        samples, mp = self._setup(rng)
        risk = regularized_risk(samples, mp, 0.0)
        scores = score_samples(samples, mp)
        expected = np.mean(
            [bce_loss(float(sigmoid(s)), smp.label) for s, smp in zip(scores, samples)]
        )
        assert abs(float(risk.data) - expected) < 1e-12

    def test_matches_sum_of_parts_oracle(self, rng):
        samples, mp = self._setup(rng)
        lam = 0.01
        risk = regularized_risk(samples, mp, lam)
        scores = score_samples(samples, mp)
        bce_part = np.mean(
            [bce_loss(float(sigmoid(s)), smp.label) for s, smp in zip(scores, samples)]
        )
        norm_part = sum(float((p.values ** 2).sum()) for p in mp.parameters())
        assert abs(float(risk.data) - (bce_part + lam * norm_part)) < 1e-12

    def test_empty_batch_rejected(self, rng):
        _, mp = self._setup(rng)
        with pytest.raises(ContractError):
            regularized_risk([], mp, 0.0)

    def test_gradients_pass_finite_difference_check(self, rng):
        samples, mp = self._setup(rng, n=3)

        def forward():
            return regularized_risk(samples, mp, 0.001)

        assert gradient_check(forward, mp.parameters(), step=1e-5) < 1e-4


class TestAdam:
    def test_first_step_moves_by_lr_sign(self):
        p = Parameter([1.0, -1.0, 2.0])
        state = AdamState([p])
        g = np.array([0.3, -0.7, 0.001])
        adam_step([p], state, lr=0.01, gradients=[g])
        expected = np.array([1.0, -1.0, 2.0]) - 0.01 * np.sign(g) * (
            np.abs(g) / (np.abs(g) + 1e-8)
        )
        assert np.allclose(p.values, expected, rtol=0, atol=1e-9)

    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = Parameter([1.0, 2.0])
        state = AdamState([p])
        for _ in range(5):
            p.zero_grad()
            adam_step([p], state, lr=0.1)
        assert np.array_equal(p.values, [1.0, 2.0])

    def test_three_steps_descend_quadratic(self):
        # f(t) = t^2 from t = 1 with lr 0.1: |t| strictly decreases
        p = Parameter(np.ones(()))
        state = AdamState([p])
        values = [float(np.abs(p.values))]
        for _ in range(3):
            adam_step([p], state, lr=0.1, gradients=[2.0 * p.values])
            values.append(float(np.abs(p.values)))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_state_mismatch_rejected(self):
        p = Parameter([1.0])
        q = Parameter([1.0])
        state = AdamState([p])
        with pytest.raises(ContractError):
            adam_step([p, q], state, lr=0.1)


class TestSplitPerUser:
    def test_ten_samples_split_622(self, rng):
        samples = make_labeled_samples(3, 10, rng)
        split = split_per_user(samples, seed=0)
        for counts in split.by_user.values():
            assert counts == (6, 2, 2)

    def test_five_samples_split_311(self, rng):
        samples = make_labeled_samples(2, 5, rng)
        split = split_per_user(samples, seed=0)
        for counts in split.by_user.values():
            assert counts == (3, 1, 1)

    def test_same_seed_identical(self, rng):
        samples = make_labeled_samples(4, 8, rng)
        a = split_per_user(samples, seed=3)
        b = split_per_user(samples, seed=3)
        assert a.train == b.train and a.valid == b.valid and a.test == b.test

    def test_disjoint_and_complete(self, rng):
        samples = make_labeled_samples(4, 9, rng)
        split = split_per_user(samples, seed=1)
        ids = lambda part: {id(s) for s in part}
        assert not (ids(split.train) & ids(split.valid))
        assert not (ids(split.train) & ids(split.test))
        assert not (ids(split.valid) & ids(split.test))
        assert len(split.train) + len(split.valid) + len(split.test) == len(samples)

    def test_short_users_all_to_train_with_warning(self, rng):
        samples = make_labeled_samples(1, 4, rng)
        with pytest.warns(UserWarning):
            split = split_per_user(samples, seed=0)
        assert len(split.train) == 4
        assert not split.valid and not split.test


class TestNegativeSample:
    def _positives(self, rng, n_users=3, per_user=4):
        samples = make_labeled_samples(n_users, per_user, rng, n_item_pool=3 * per_user)
        return [s for s in samples if s.label == 1.0], samples

    def test_counts_and_disjointness(self, rng):
        positives, all_samples = self._positives(rng)
        pool = item_pool_of(all_samples)
        negatives = negative_sample(positives, pool, seed=0)
        assert len(negatives) == len(positives)
        by_user_pos = {}
        for s in positives:
            by_user_pos.setdefault(sample_user_key(s), set()).add(tuple(s.item_chars))
        for s in negatives:
            assert s.label == 0.0
            assert tuple(s.item_chars) not in by_user_pos[sample_user_key(s)]

    def test_forced_choice_with_pool_of_one_extra(self, rng):
        positives, _ = self._positives(rng, n_users=1, per_user=1)
        extra = make_sample(1, 2, id_offset=90_000)
        pool = [positives[0].item_chars, extra.item_chars]
        negatives = negative_sample(positives, pool, seed=0)
        assert len(negatives) == 1
        assert negatives[0].item_chars == extra.item_chars

    def test_same_seed_identical(self, rng):
        positives, all_samples = self._positives(rng)
        pool = item_pool_of(all_samples)
        a = negative_sample(positives, pool, seed=5)
        b = negative_sample(positives, pool, seed=5)
        assert a == b

    def test_pool_exhaustion_names_user(self, rng):
        positives, _ = self._positives(rng, n_users=1, per_user=3)
        pool = [positives[0].item_chars]
        with pytest.raises(SamplingError, match="user"):
            negative_sample(positives, pool, seed=0)


class TestTrain:
    def _split(self, rng, n_users=6, per_user=6):
        samples = make_labeled_samples(n_users, per_user, rng)
        return split_per_user(samples, seed=0)

    def test_zero_epochs_returns_initial_params(self, rng):
        split = self._split(rng)
        config = TrainConfig(dim=4, epochs=0, seed=1, batch_size=8)
        result = train(split, config)
        fresh = init_model_params(
            universe_of(split.train + split.valid + split.test), 4, 1, CANONICAL
        )
        for a, b in zip(result.params.parameters(), fresh.parameters()):
            assert np.array_equal(a.values, b.values)
        assert result.logs == []

    def test_same_seed_bit_identical_logs(self, rng):
        split = self._split(rng)
        config = TrainConfig(dim=4, epochs=3, seed=2, batch_size=8)
        a = train(split, config)
        b = train(split, config)
        assert [str(x) for x in a.logs] == [str(x) for x in b.logs]
        for pa, pb in zip(a.params.parameters(), b.params.parameters()):
            assert np.array_equal(pa.values, pb.values)

    def test_single_sample_descent(self, rng):
        sample = make_sample(2, 2, label=1.0)
        split = SplitDataset(train=[sample], valid=[], test=[])
        config = TrainConfig(dim=8, learning_rate=1e-4, lam=0.0, epochs=1, seed=0, batch_size=1)
        mp0 = init_model_params(universe_of([sample]), 8, 0, CANONICAL)
        before = bce_loss(float(sigmoid(score_samples([sample], mp0)[0])), 1.0)
        result = train(split, config)
        after = bce_loss(float(sigmoid(score_samples([sample], result.params)[0])), 1.0)
        assert after < before

    def test_non_finite_loss_aborts(self, rng):
        # overflow-scale values through the polynomial variant: the very
        # first forward produces inf/nan and training must stop with a
        # diagnostic rather than keep stepping.
        from gmrec.errors import TrainingError
        from gmrec.model import VariantConfig

        bad = make_sample(2, 2, vals=[1e200, 1e200, 1e200, 1e200], label=1.0)
        split = SplitDataset(train=[bad], valid=[], test=[])
        variant = VariantConfig(inner="bi", cross="bi", fuse="sum")
        config = TrainConfig(dim=4, epochs=1, seed=0, batch_size=1, variant=variant)
        with np.errstate(invalid="ignore", over="ignore"):
            with pytest.raises(TrainingError):
                train(split, config)

    def test_returns_best_validation_params(self, rng):
        split = self._split(rng, n_users=8, per_user=8)
        config = TrainConfig(dim=8, epochs=6, seed=3, batch_size=16, patience=100)
        result = train(split, config)
        assert 1 <= result.best_epoch <= 6
        best_logged = max(log.val_auc for log in result.logs)
        scored = score_samples(split.valid, result.params)
        from gmrec.metrics import ScoredSample

        recomputed = auc(
            [
                ScoredSample(sample_user_key(s), float(v), s.label)
                for s, v in zip(split.valid, scored)
            ]
        )
        assert abs(recomputed - best_logged) < 1e-12
