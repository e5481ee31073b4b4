"""Power-control law, inner sweeps, target updates, and the outer search."""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import icbalance as ic
from icbalance.balancer import (
    _DeltaEngine,
    delta,
    fairness_gap,
    inner_power_step,
    interference_function,
    linear_search,
    update_targets,
)
from icbalance.errors import ConfigurationError, DegenerateStreamError
from tests.conftest import achieved_targets, contractive_instance, make_instance, scale_targets


class TestDelta:
    def test_scalar_example(self):
        ch = ic.ChannelSet(H=((np.array([[1.0 + 0j]]),),))
        bf = ic.BeamformerSet(U=(np.array([[1.0 + 0j]]),), V=(np.array([[1.0 + 0j]]),))
        pw = ic.PowerAllocation(p=(np.array([4.0]),), p_max=(4.0,))
        assert delta(ch, bf, pw, 1, 1) == pytest.approx(1.0, rel=1e-12)

    def test_equals_power_over_sinr(self, small_instance):
        cfg, ch, bf = small_instance
        pw = ic.PowerAllocation.equal_split(cfg)
        sinrs = ic.sinr_all(ch, bf, pw)
        i = 0
        for k in range(1, cfg.K + 1):
            for l in range(1, cfg.d[k - 1] + 1):
                want = pw.get(k, l) / sinrs[i]
                assert delta(ch, bf, pw, k, l) == pytest.approx(want, rel=1e-10)
                i += 1

    def test_independent_of_own_power(self, small_instance):
        # delta depends on everyone's powers except the stream's own entry
        cfg, ch, bf = small_instance
        pw = ic.PowerAllocation.from_flat([2.0, 3.0, 4.0, 2.0, 1.0, 5.0], cfg.d, cfg.p_max)
        base = delta(ch, bf, pw, 1, 1)
        bumped = pw.with_user(1, [6.0, 3.0])
        assert delta(ch, bf, bumped, 1, 1) == pytest.approx(base, rel=1e-9)
        # but changing another stream's power must move it
        other = pw.with_user(2, [0.1, 0.1])
        assert delta(ch, bf, other, 1, 1) != pytest.approx(base, rel=1e-6)

    def test_engine_matches_reference_route(self):
        for seed in (51, 52, 53):
            cfg, ch, bf = make_instance(seed)
            rng = np.random.default_rng(seed)
            engine = _DeltaEngine(ch, bf, cfg.d)
            for _ in range(3):
                flat = rng.uniform(0.05, 5.0, cfg.total_streams)
                pw = ic.PowerAllocation.from_flat(flat, cfg.d, cfg.p_max)
                fast = np.concatenate(engine.deltas(flat))
                i = 0
                for k in range(1, cfg.K + 1):
                    for l in range(1, cfg.d[k - 1] + 1):
                        assert fast[i] == pytest.approx(
                            delta(ch, bf, pw, k, l), rel=1e-9)
                        i += 1

    def test_nulled_stream_raises(self):
        # receive filter orthogonal to the effective channel kills the gain
        H = ((np.eye(2, dtype=complex),),)
        U = (np.array([[1.0], [0.0]], dtype=complex),)
        V = (np.array([[0.0], [1.0]], dtype=complex),)
        ch = ic.ChannelSet(H=H)
        bf = ic.BeamformerSet(U=U, V=V)
        pw = ic.PowerAllocation(p=(np.array([1.0]),), p_max=(1.0,))
        with pytest.raises(DegenerateStreamError):
            delta(ch, bf, pw, 1, 1)


class TestInnerPowerStep:
    def test_slack_budget(self):
        out = inner_power_step([1.0, 2.0], [4.0, 4.0], 20.0)
        assert list(out) == [4.0, 8.0]

    def test_cap_binds_ascending_order(self):
        out = inner_power_step([1.0, 2.0], [4.0, 4.0], 10.0)
        assert list(out) == [4.0, 6.0]

    def test_cap_binds_reversed_deltas(self):
        out = inner_power_step([2.0, 1.0], [4.0, 4.0], 10.0)
        assert list(out) == [6.0, 4.0]

    def test_rejects_bad_inputs(self):
        with pytest.raises(ConfigurationError):
            inner_power_step([1.0, -1.0], [1.0, 1.0], 1.0)
        with pytest.raises(ConfigurationError):
            inner_power_step([1.0], [1.0, 1.0], 1.0)
        with pytest.raises(ConfigurationError):
            inner_power_step([1.0], [1.0], 0.0)

    @given(
        st.lists(st.floats(min_value=1e-3, max_value=1e3), min_size=1, max_size=6),
        st.data(),
        st.floats(min_value=1e-3, max_value=1e3),
    )
    @settings(max_examples=200, deadline=None)
    def test_budget_never_exceeded(self, deltas, data, budget):
        targets = data.draw(st.lists(
            st.floats(min_value=1e-3, max_value=1e3),
            min_size=len(deltas), max_size=len(deltas)))
        out = inner_power_step(deltas, targets, budget)
        assert np.all(out >= 0.0)
        total = float(np.sum(out))
        assert total <= budget
        wanted = np.asarray(targets) * np.asarray(deltas)
        if np.any(out < wanted - 1e-12 * wanted):
            # the cap bound somewhere, so the budget is fully spent
            assert budget - total <= 1e-10 * budget

    def test_residual_goes_to_largest_delta(self):
        out = inner_power_step([1.0, 3.0, 2.0], [5.0, 5.0, 5.0], 16.0)
        # served in delta order: 5, then 10, then the residual 1 for delta=3
        assert out[0] == 5.0
        assert out[2] == 10.0
        assert out[1] == pytest.approx(1.0, abs=1e-12)


class TestInterferenceFunction:
    def test_elementwise_product(self):
        got = interference_function([1.0, 2.0], [3.0, 4.0])
        assert list(got) == [3.0, 8.0]

    def test_accepts_per_user_lists(self):
        got = interference_function([[1.0], [2.0]], [[3.0], [4.0]])
        assert list(got) == [3.0, 8.0]

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigurationError):
            interference_function([0.0, 1.0], [1.0, 1.0])

    def test_standard_function_properties(self, small_instance):
        # positivity, monotonicity, and strict sub-homogeneity of the
        # interference side I(p) = Gamma * delta(p), sampled on one instance
        cfg, ch, bf = small_instance
        engine = _DeltaEngine(ch, bf, cfg.d)
        ts, _ = achieved_targets(cfg, ch, bf, ic.PowerAllocation.equal_split(cfg))
        gm = ts.flat()
        rng = np.random.default_rng(0)
        for _ in range(40):
            p = rng.uniform(0.05, 4.0, cfg.total_streams)
            bump = rng.uniform(0.0, 1.0, cfg.total_streams)
            alpha = rng.uniform(1.1, 4.0)
            I_p = gm * np.concatenate(engine.deltas(p))
            I_up = gm * np.concatenate(engine.deltas(p + bump))
            I_ap = gm * np.concatenate(engine.deltas(alpha * p))
            assert np.all(I_p > 0.0)
            assert np.all(I_up >= I_p - 1e-12)
            assert np.all(alpha * I_p > I_ap)


class TestRunInnerLoop:
    def test_targets_met_at_start_stops_immediately(self):
        cfg, ch, bf = make_instance(17)
        p0 = ic.PowerAllocation.equal_split(cfg)
        ts, _ = achieved_targets(cfg, ch, bf, p0)
        pw, n = ic.run_inner_loop(ch, bf, ts, cfg)
        assert n <= 2
        assert np.max(np.abs(pw.flat() - p0.flat())) <= 1e-9

    def test_contractive_targets_reach_fixed_point(self):
        for seed in (3, 4):
            cfg, ch, bf, ts, lim, fp = contractive_instance(seed)
            pw, n = ic.run_inner_loop(ch, bf, ts, cfg)
            assert n < cfg.inner_limit
            assert np.max(np.abs(pw.flat() - fp)) <= 1e-6

    def test_fixed_point_unique_across_starts(self):
        cfg, ch, bf, ts, lim, fp = contractive_instance(5)
        a, _ = ic.run_inner_loop(ch, bf, ts, cfg)
        big = [10.0 * np.asarray(u) for u in
               ic.split_flat(ic.PowerAllocation.equal_split(cfg).flat(), cfg.d)]
        b, _ = ic.run_inner_loop(ch, bf, ts, cfg, p_init=big)
        assert np.max(np.abs(a.flat() - b.flat())) <= 1e-6
        assert np.max(np.abs(a.flat() - fp)) <= 1e-6

    def test_infeasible_targets_hit_iteration_cap(self):
        cfg, ch, bf = make_instance(17)
        ts, _ = achieved_targets(cfg, ch, bf, ic.PowerAllocation.equal_split(cfg))
        hard = dataclasses.replace(cfg, epsilon=1e-15, inner_limit=12)
        pw, n = ic.run_inner_loop(ch, bf, scale_targets(ts, 2.0), hard)
        assert n == hard.inner_limit
        for k in range(1, cfg.K + 1):
            assert float(np.sum(pw.per_user(k))) == pytest.approx(cfg.p_max[k - 1], abs=1e-9)

    def test_async_schedule_deterministic_and_convergent(self):
        cfg, ch, bf, ts, lim, fp = contractive_instance(6)
        a, _ = ic.run_inner_loop(ch, bf, ts, cfg, schedule="async", schedule_seed=9)
        b, _ = ic.run_inner_loop(ch, bf, ts, cfg, schedule="async", schedule_seed=9)
        assert np.array_equal(a.flat(), b.flat())
        assert np.max(np.abs(a.flat() - fp)) <= 1e-6

    def test_unknown_schedule_rejected(self, small_instance):
        cfg, ch, bf = small_instance
        ts, _ = achieved_targets(cfg, ch, bf, ic.PowerAllocation.equal_split(cfg))
        with pytest.raises(ConfigurationError):
            ic.run_inner_loop(ch, bf, ts, cfg, schedule="round-robin")

    def test_trace_starts_at_initial_point(self, small_instance):
        cfg, ch, bf = small_instance
        ts, _ = achieved_targets(cfg, ch, bf, ic.PowerAllocation.equal_split(cfg))
        pw, n, trace = ic.run_inner_loop(ch, bf, ts, cfg, record_trace=True)
        assert len(trace) == n + 1
        assert np.array_equal(trace[0], ic.PowerAllocation.equal_split(cfg).flat())
        assert np.array_equal(trace[-1], pw.flat())


class TestUpdateTargets:
    def test_equal_weights_average(self):
        ts = update_targets([(5.0, 10.0)], [(1.0, 1.0)])
        assert list(ts.Gamma[0]) == [7.5, 7.5]
        assert ts.Gamma_common[0] == 7.5

    def test_second_round_example(self):
        ts = update_targets([(5.5, 7.5)], [(1.0, 1.0)])
        assert list(ts.Gamma[0]) == [6.5, 6.5]

    def test_uneven_weights(self):
        ts = update_targets([(5.0, 10.0)], [(1.0, 6.0)])
        assert ts.Gamma[0][0] == pytest.approx(15.0 / 7.0, rel=1e-15)
        assert ts.Gamma[0][1] == pytest.approx(90.0 / 7.0, rel=1e-15)
        assert ts.Gamma_common[0] == pytest.approx(15.0 / 7.0, rel=1e-15)
        assert np.allclose(ts.beta_norm[0], [1.0 / 7.0, 6.0 / 7.0])

    def test_rejects_nonpositive_sinr(self):
        with pytest.raises(ConfigurationError):
            update_targets([(0.0, 1.0)], [(1.0, 1.0)])


class TestFairnessGap:
    def test_balanced_point_is_zero(self):
        gaps, total = fairness_gap([(6.125, 6.125)], [(1.0, 1.0)])
        assert total == 0.0

    def test_equal_weight_example(self):
        gaps, total = fairness_gap([(5.0, 10.0)], [(1.0, 1.0)])
        assert total == pytest.approx(2.5, rel=1e-15)

    def test_weighted_balance(self):
        gaps, total = fairness_gap([(2.0, 12.0)], [(1.0, 6.0)])
        assert total == 0.0

    def test_raw_mode_uses_unweighted_minimum(self):
        sinrs, beta = [(3.0, 6.0)], [(1.0, 6.0)]
        _, weighted = fairness_gap(sinrs, beta, mode="weighted")
        _, raw = fairness_gap(sinrs, beta, mode="raw")
        assert weighted == pytest.approx(1.0)
        assert raw == pytest.approx(-1.0)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigurationError):
            fairness_gap([(1.0,)], [(1.0,)], mode="strict")


class TestLinearSearch:
    def test_three_round_script(self):
        # canned achievements shrink the target until the gap closes
        script = {1: [(5.5, 7.5)], 2: [(5.75, 6.5)], 3: [(6.125, 6.125)]}

        def evaluate(ts, m):
            return script[m], None

        out = linear_search([(5.0, 10.0)], evaluate, [(1.0, 1.0)], epsilon=1e-3)
        assert out.converged
        assert out.outer_iters == 3
        got = [ts.Gamma_common[0] for ts in out.targets]
        assert got == pytest.approx([7.5, 6.5, 6.125], rel=1e-15)
        assert np.all(np.diff(got) < 0)
        assert out.final_gap == 0.0

    def test_outer_limit_reached_flags_not_converged(self):
        def evaluate(ts, m):
            return [(5.0, 10.0)], None

        out = linear_search([(5.0, 10.0)], evaluate, [(1.0, 1.0)],
                            epsilon=1e-9, outer_limit=4)
        assert not out.converged
        assert out.outer_iters == 4


class TestBalance:
    def test_equal_weights_smoke(self):
        converged = 0
        for seed in range(200, 212):
            cfg, ch, bf = make_instance(seed)
            res = ic.balance(ch, bf, cfg)
            if not res.converged:
                continue
            converged += 1
            per_user = ic.split_flat(res.sinr_final, cfg.d)
            for u in per_user:
                assert float(np.max(u) / np.min(u)) <= 1.02
            # powers respect budgets by construction, spot-check anyway
            for k in range(1, cfg.K + 1):
                assert float(np.sum(res.powers.per_user(k))) <= cfg.p_max[k - 1] + 1e-9
        assert converged >= 10

    def test_weighted_ratio(self):
        cfg, ch, bf = make_instance(300, beta=((1.0, 1.0), (1.0, 1.0), (1.0, 6.0)))
        res = ic.balance(ch, bf, cfg)
        assert res.converged
        per_user = ic.split_flat(res.sinr_final, cfg.d)
        assert per_user[2][1] / per_user[2][0] == pytest.approx(6.0, rel=0.01)

    def test_targets_monotone_under_equal_weights(self):
        # budgets bind from the first outer round on these instances, so the
        # target sequence shrinks; near convergence it may wiggle at the scale
        # the inner loop's power tolerance allows, never more
        for seed in (201, 205, 209):
            cfg, ch, bf = make_instance(seed)
            res = ic.balance(ch, bf, cfg)
            tr = np.stack(res.target_trace)
            assert np.all(np.diff(tr, axis=0) <= cfg.epsilon)
            assert np.all(tr[-1] < tr[0])

    def test_outer_cap_does_not_raise(self):
        cfg, ch, bf = make_instance(207, epsilon=1e-14)
        res = ic.balance(ch, bf, cfg, outer_limit=3)
        assert not res.converged
        assert res.outer_iters == 3

    def test_sinr_trace_consistent_with_powers(self):
        cfg, ch, bf = make_instance(204)
        res = ic.balance(ch, bf, cfg)
        direct = ic.sinr_all(ch, bf, res.powers)
        assert np.allclose(res.sinr_final, direct, rtol=1e-12)
