"""Reward terms: frozen hand-derived values and branch properties."""

import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from shieldsim.config import RewardParams
from shieldsim.rewards import RewardInputs, compute_reward

P = RewardParams()
V_UPPER = 50.0 / 3.6


def _inputs(**kw):
    base = dict(v=0.0, a_agent=0.0, a_shield=0.0, on_intersection=False,
                collision=False, near_collision=False, d_la=100.0, d_free=100.0)
    base.update(kw)
    return RewardInputs(**base)


def test_cruise_example():
    # v=10, free road, no shield, no events, fps=24
    rb = compute_reward(_inputs(v=10.0), P)
    assert rb.r_velocity == pytest.approx(0.3)
    assert rb.r_acceleration == 0.0
    assert rb.r_distance == 0.0
    assert rb.r_shield == 0.0
    assert rb.total == pytest.approx(0.3 / 24.0)
    assert rb.total == pytest.approx(0.0125)


def test_collision_example():
    rb = compute_reward(_inputs(v=5.0, collision=True, a_agent=3.0, a_shield=-7.0), P)
    assert rb.r_collision == pytest.approx(-3.0 * 5.0 - 25.0)
    assert rb.r_collision == pytest.approx(-40.0)
    assert rb.r_shield == pytest.approx(-0.1 * 7.0)
    assert rb.r_acceleration == pytest.approx(-0.01 * (2.0 ** 7 - 1.0))
    assert rb.r_acceleration == pytest.approx(-1.27)


def test_velocity_branch_at_exact_upper():
    # v == v_upper: the "else" branch applies (condition is strictly >)
    rb = compute_reward(_inputs(v=V_UPPER), P)
    assert rb.r_velocity == pytest.approx(0.03 * V_UPPER)
    assert rb.r_velocity == pytest.approx(0.4166666666666667)
    above = compute_reward(_inputs(v=V_UPPER + 1.0), P)
    assert above.r_velocity == pytest.approx(-0.06)


def test_stationary_zero_cases():
    rb = compute_reward(_inputs(v=0.0, d_free=40.0), P)
    assert rb.r_velocity == 0.0
    assert rb.r_distance == 0.0  # requires v > 0
    rb2 = compute_reward(_inputs(v=0.0, on_intersection=True), P)
    assert rb2.total == pytest.approx(-P.k_intersection / P.fps)


def test_near_collision_like_collision():
    a = compute_reward(_inputs(v=4.0, collision=True), P)
    b = compute_reward(_inputs(v=4.0, near_collision=True), P)
    assert a.r_collision == b.r_collision


def test_distance_term():
    rb = compute_reward(_inputs(v=8.0, d_free=40.0), P)
    assert rb.r_distance == pytest.approx(0.2 * (100.0 - 40.0) / 100.0)
    # shield engaged: distance term off, shield term on
    rb2 = compute_reward(_inputs(v=8.0, d_free=40.0, a_agent=3.0, a_shield=-7.0), P)
    assert rb2.r_distance == 0.0
    assert rb2.r_shield == pytest.approx(-0.7)


def test_invalid_d_free_rejected():
    with pytest.raises(ValueError):
        compute_reward(_inputs(d_free=101.0), P)


@given(v=st.floats(0.0, 30.0), a=st.sampled_from([-7.0, -3.0, -1.5, 0.0, 1.5, 3.0]),
       pa=st.sampled_from([-7.0, -3.0, -1.5, 0.0, 1.5, 3.0]),
       d_free=st.floats(0.0, 100.0))
@settings(max_examples=300, deadline=None)
def test_branch_exclusivity_and_signs(v, a, pa, d_free):
    rb = compute_reward(_inputs(v=v, a_agent=pa, a_shield=a, d_free=d_free), P)
    # for v > 0 exactly one of shield/distance fires (distance may be 0-valued)
    if a < pa:
        assert rb.r_distance == 0.0
    else:
        assert rb.r_shield == 0.0
    assert rb.r_acceleration <= 0.0
    assert (rb.r_acceleration == 0.0) == (a == 0.0)
    if v <= V_UPPER:
        assert rb.r_velocity >= 0.0
    else:
        assert rb.r_velocity <= 0.0


def test_velocity_peak_at_upper():
    peak = compute_reward(_inputs(v=V_UPPER), P).r_velocity
    for v in (0.0, 5.0, V_UPPER - 0.1, V_UPPER + 0.1, 20.0):
        assert compute_reward(_inputs(v=v), P).r_velocity <= peak + 1e-12


def test_linear_in_each_k():
    inp = _inputs(v=9.0, a_agent=3.0, a_shield=-1.5, on_intersection=True)
    base = compute_reward(inp, P)
    doubled = dataclasses.replace(P, k_a=P.k_a * 2)
    rb2 = compute_reward(inp, doubled)
    assert rb2.r_acceleration == pytest.approx(2 * base.r_acceleration)
    assert rb2.r_velocity == base.r_velocity


def test_fps_normalization_invariant():
    """Summed non-collision reward over one second is fps-independent."""
    inp = _inputs(v=7.0, a_agent=1.5, a_shield=1.5, on_intersection=True, d_free=60.0)
    totals = []
    for fps in (24, 48):
        params = dataclasses.replace(P, fps=fps)
        rb = compute_reward(inp, params)
        totals.append(rb.total * fps)  # constant trajectory: per-second sum
    assert totals[0] == pytest.approx(totals[1], abs=1e-9)


def test_total_composition():
    inp = _inputs(v=9.0, a_agent=3.0, a_shield=-7.0, on_intersection=True,
                  near_collision=True, d_free=30.0)
    rb = compute_reward(inp, P)
    expected = rb.r_collision + (rb.r_velocity + rb.r_acceleration +
                                 rb.r_intersection + rb.r_shield +
                                 rb.r_distance) / P.fps
    assert rb.total == pytest.approx(expected, abs=1e-15)
