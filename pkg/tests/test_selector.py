import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pairs, small_model
from rtl.data import SOURCE, TARGET, PairBatch, SentencePair
from rtl.numerics import finite_diff_check
from rtl.selector import (
    DROP,
    KEEP,
    EpisodeRecord,
    SelectionLog,
    SelectorNets,
    build_states,
    compute_reward,
    discounted_returns,
    filter_batch,
    policy_forward,
    policy_objective_grad,
    policy_update,
    read_selection_log,
    sample_actions,
    state_width,
    value_loss_grad,
    value_update,
)
from rtl.transfer import head_names


def nets_for(dim=5, hidden=7, seed=0):
    return SelectorNets(dim, hidden, np.random.default_rng(seed))


def zero_value(nets):
    for name in nets.value_names:
        nets.params[name][...] = 0.0


class TestStates:
    def test_width(self):
        assert state_width(32) == 38
        assert state_width(800) == 806

    def test_zero_heads(self, tiny):
        model, _, src, _ = tiny
        for d in (SOURCE, TARGET):
            for name in head_names(d):
                model.params[name][...] = 0.0
        s = build_states(src, model)
        assert s.shape == (len(src), 38)
        np.testing.assert_allclose(s[:, 32:34], math.log(2), atol=1e-12)
        np.testing.assert_array_equal(s[:, 34:], 0.5)

    def test_pure_and_valid(self, tiny):
        model, _, src, _ = tiny
        before = model.params.copy()
        s = build_states(src, model)
        s2 = build_states(src, model)
        assert s.tobytes() == s2.tobytes()
        for name in model.params.names():
            assert model.params[name].tobytes() == before[name].tobytes()
            assert np.all(model.params.grad(name) == 0.0)
        assert np.all(s[:, 32:34] >= 0)
        np.testing.assert_allclose(s[:, 34:36].sum(1), 1.0, atol=1e-12)
        np.testing.assert_allclose(s[:, 36:38].sum(1), 1.0, atol=1e-12)

    def test_rejects_target_batch(self, tiny):
        model, _, _, tgt = tiny
        with pytest.raises(ValueError):
            build_states(tgt, model)


class TestPolicy:
    def test_zero_params_uniform(self):
        nets = nets_for()
        for name in nets.policy_names:
            nets.params[name][...] = 0.0
        np.testing.assert_array_equal(policy_forward(np.ones((3, 5)), nets), 0.5)

    def test_rows_sum_to_one(self):
        p = policy_forward(np.random.default_rng(0).normal(size=(50, 5)) * 10, nets_for())
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_output_shift_invariance(self):
        nets = nets_for()
        s = np.random.default_rng(1).normal(size=(6, 5))
        before = policy_forward(s, nets)
        shift = np.random.default_rng(2).normal(size=(7, 1))
        nets.params["policy.W1"][...] += shift  # same vector added to both output rows
        np.testing.assert_allclose(policy_forward(s, nets), before, atol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(Exception):
            policy_forward(np.ones((2, 4)), nets_for())


class TestSampling:
    def test_saturated(self):
        rng = np.random.default_rng(0)
        assert np.all(sample_actions(np.tile([0.0, 1.0], (50, 1)), rng).actions == KEEP)
        assert np.all(sample_actions(np.tile([1.0, 0.0], (50, 1)), rng).actions == DROP)

    def test_frequency(self):
        a = sample_actions(np.tile([0.3, 0.7], (10000, 1)), np.random.default_rng(0)).actions
        assert 0.68 <= a.mean() <= 0.72

    def test_greedy(self):
        probs = np.array([[0.2, 0.8], [0.9, 0.1]])
        assert sample_actions(probs, np.random.default_rng(0), greedy=True).actions.tolist() == [1, 0]

    def test_seeded(self):
        p = np.tile([0.5, 0.5], (100, 1))
        a = sample_actions(p, np.random.default_rng(3)).actions
        b = sample_actions(p, np.random.default_rng(3)).actions
        np.testing.assert_array_equal(a, b)


class TestFilter:
    def batch(self):
        pairs = [SentencePair((2,), (3,), 0), SentencePair((4, 5), (6,), 1), SentencePair((7,), (8, 9), 1)]
        return PairBatch.from_pairs(pairs, SOURCE, index=[10, 11, 12])

    def test_all_keep(self):
        b = self.batch()
        assert filter_batch(b, [1, 1, 1]) is b

    def test_all_drop(self):
        assert filter_batch(self.batch(), [0, 0, 0]) is None

    def test_subset(self):
        out = filter_batch(self.batch(), [1, 0, 1])
        assert out.index.tolist() == [10, 12]
        assert out.labels.tolist() == [0, 1]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            filter_batch(self.batch(), [1, 0])


class TestReward:
    def test_all_and_half(self, tiny):
        model, pairs, _, _ = tiny
        w, b = head_names(TARGET)
        model.params[w][...] = 0.0
        model.params[b][...] = [0.0, 50.0]  # always predicts 1
        ones = [SentencePair(p.tokens1, p.tokens2, 1) for p in pairs]
        half = ones[:2] + [SentencePair(p.tokens1, p.tokens2, 0) for p in pairs[:2]]
        assert compute_reward(model, ones) == 1.0
        assert compute_reward(model, half) == 0.5

    def test_measured_before_target_change(self, tiny):
        model, pairs, _, _ = tiny
        r = compute_reward(model, pairs)
        kept = r
        model.params[head_names(TARGET)[0]][...] += 100.0
        assert isinstance(r, float) and 0.0 <= r <= 1.0
        assert r == kept

    def test_empty(self, tiny):
        with pytest.raises(ValueError):
            compute_reward(tiny[0], [])


class TestReturns:
    def test_examples(self):
        np.testing.assert_array_equal(discounted_returns([1, 2, 3], 1.0), [6, 5, 3])
        np.testing.assert_array_equal(discounted_returns([1, 1, 1], 0.5), [1.75, 1.5, 1.0])
        np.testing.assert_array_equal(discounted_returns([0.3, 0.9], 0.0), [0.3, 0.9])

    def test_errors(self):
        with pytest.raises(ValueError):
            discounted_returns([], 0.5)
        with pytest.raises(ValueError):
            discounted_returns([1.0], 1.5)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.sampled_from([0.0, 0.5, 0.8, 1.0]))
    @settings(max_examples=100)
    def test_direct_sum_and_recurrence(self, rewards, gamma):
        out = discounted_returns(rewards, gamma)
        n = len(rewards)
        direct = [sum(gamma**k * rewards[b + k] for k in range(n - b)) for b in range(n)]
        np.testing.assert_allclose(out, direct, rtol=0, atol=1e-12)
        for b in range(n - 1):
            assert abs(out[b] - (rewards[b] + gamma * out[b + 1])) <= 1e-12


def record_for(states, actions, rewards, gamma=0.8):
    rec = EpisodeRecord(gamma)
    for s, a, r in zip(states, actions, rewards):
        rec.add(s, a, r, np.arange(len(a)))
    return rec


class TestPolicyUpdate:
    def test_zero_targets_zero_grad(self):
        nets = nets_for()
        s = np.random.default_rng(0).normal(size=(4, 5))
        policy_objective_grad(s, np.array([1, 0, 1, 1]), np.zeros(4), nets)
        for name in nets.policy_names:
            assert np.all(nets.params.grad(name) == 0.0)

    @pytest.mark.parametrize("mode", ["reinforce", "actor_critic"])
    def test_sign(self, mode):
        nets = nets_for(seed=3)
        zero_value(nets)
        s = np.random.default_rng(0).normal(size=(1, 5))
        before = policy_forward(s, nets)[0, KEEP]
        policy_update(record_for([s], [np.array([KEEP])], [0.7]), nets, mode, 0.01)
        assert policy_forward(s, nets)[0, KEEP] > before

    def test_modes_coincide_with_zero_value(self):
        rng = np.random.default_rng(0)
        states = [rng.normal(size=(4, 5)) for _ in range(3)]
        actions = [rng.integers(0, 2, size=4) for _ in range(3)]
        a, b = nets_for(seed=1), nets_for(seed=1)
        zero_value(a)
        zero_value(b)
        policy_update(record_for(states, actions, [0.2, 0.5, 0.9]), a, "reinforce", 0.01)
        policy_update(record_for(states, actions, [0.2, 0.5, 0.9]), b, "actor_critic", 0.01)
        for name in a.params.names():
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test_value_net_untouched(self):
        rng = np.random.default_rng(0)
        nets = nets_for()
        before = nets.params.copy()
        policy_update(record_for([rng.normal(size=(3, 5))], [np.array([1, 0, 1])], [0.5]), nets, "actor_critic", 0.01)
        for name in nets.value_names:
            assert nets.params[name].tobytes() == before[name].tobytes()

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            policy_update(record_for([np.ones((1, 5))], [np.array([1])], [0.5]), nets_for(), "ppo", 0.01)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        nets = nets_for(seed=seed)
        s = rng.normal(size=(6, 5))
        a = rng.integers(0, 2, size=6)
        v = rng.normal(size=6)
        nets.params.zero_grad()
        policy_objective_grad(s, a, v, nets)

        def neg_objective(_):
            p = policy_forward(s, nets)
            return -float(np.mean(v * np.log(p[np.arange(6), a])))

        for name in nets.policy_names:
            assert finite_diff_check(neg_objective, nets.params, name) < 1e-4, name


class TestValueUpdate:
    def test_exact_fit_zero_grad(self):
        nets = nets_for()
        s = np.random.default_rng(0).normal(size=(4, 5))
        target = float(nets.value(s[:1])[0])
        s = np.repeat(s[:1], 4, axis=0)
        nets.params.zero_grad()
        value_loss_grad(s, target, nets)
        for name in nets.value_names:
            np.testing.assert_allclose(nets.params.grad(name), 0.0, atol=1e-15)

    def test_moves_monotonically(self):
        nets = nets_for()
        for name in nets.value_names:
            nets.params[name][...] = 0.0  # constant-output value net
        s = np.random.default_rng(0).normal(size=(4, 5))
        outs = []
        for _ in range(20):
            value_update(record_for([s], [np.ones(4, dtype=int)], [0.6], gamma=0.0), nets, 0.001)
            outs.append(float(nets.value(s).mean()))
        assert all(b > a for a, b in zip(outs, outs[1:]))
        assert all(o < 0.6 for o in outs)

    def test_policy_untouched(self):
        nets = nets_for()
        before = nets.params.copy()
        s = np.random.default_rng(0).normal(size=(4, 5))
        value_update(record_for([s], [np.ones(4, dtype=int)], [0.6]), nets, 0.01)
        for name in nets.policy_names:
            assert nets.params[name].tobytes() == before[name].tobytes()

    def test_gradient(self):
        nets = nets_for()
        s = np.random.default_rng(0).normal(size=(4, 5))
        nets.params.zero_grad()
        value_loss_grad(s, 0.3, nets)
        for name in nets.value_names:
            err = finite_diff_check(lambda _: float(np.mean((nets.value(s) - 0.3) ** 2)), nets.params, name)
            assert err < 1e-4


def test_selection_log_round_trip(tmp_path):
    log = SelectionLog([(1, 1, 3, 4, 0.75), (1, 2, 0, 4, 0.5)], {5: 1, 2: 0, 9: 1})
    from rtl.selector import write_selection_log

    write_selection_log(tmp_path / "log.csv", log, ["rtl 0.1.0"])
    text = (tmp_path / "log.csv").read_text()
    assert text.startswith("# rtl 0.1.0\nepisode,batch,kept,total,reward\n")
    back = read_selection_log(tmp_path / "log.csv")
    assert back.rows == log.rows and back.final_actions == log.final_actions
