import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dosebo.escalation import (
    RegionSpec,
    RegionState,
    RegionViolation,
    advance,
    filter_candidates,
    is_fully_expanded,
    region_contains,
)

GRID = np.array([(a / 4, b / 4) for a in range(5) for b in range(5)])


def _state(iteration, rate=0.25, evaluated=(), exclusion=0.0):
    spec = RegionSpec(dims=2, rate=rate, exclusion_side=exclusion)
    return RegionState(spec, iteration=iteration, evaluated=tuple(evaluated))


# Story: the first expansion admits exactly the origin triangle; the
# boundary itself belongs to the region (closed half-space).
def test_first_expansion_is_the_origin_triangle():
    got = filter_candidates(_state(1), GRID)
    want = {(0.0, 0.0), (0.0, 0.25), (0.25, 0.0)}
    assert {tuple(d) for d in got} == want
    # boundary membership is closed: w'd == rate*q is inside
    assert region_contains(_state(1), (0.25, 0.0))
    assert region_contains(_state(1), (0.0, 0.25))
    assert not region_contains(_state(1), (0.25, 0.25))


def test_second_expansion_triangle_vertices():
    state = _state(2)
    # the region polygon w'd <= 0.5 has vertices (0,0), (0.5,0), (0,0.5)
    for vertex in ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5)):
        assert region_contains(state, vertex)
    for outside in ((0.5 + 1e-12, 0.0), (0.0, 0.5 + 1e-12), (0.5, 0.25)):
        assert not region_contains(state, outside)
    got = {tuple(d) for d in filter_candidates(state, GRID)}
    assert got == {(0.0, 0.0), (0.0, 0.25), (0.25, 0.0), (0.0, 0.5), (0.25, 0.25), (0.5, 0.0)}


# Story: the region covers the whole cube once rate*q reaches the weighted
# far corner: q=8 for rate 0.25 in two dimensions, q=4 for rate 0.5.
def test_full_expansion_thresholds():
    assert not is_fully_expanded(_state(7, rate=0.25))
    assert is_fully_expanded(_state(8, rate=0.25))
    assert not is_fully_expanded(_state(3, rate=0.5))
    assert is_fully_expanded(_state(4, rate=0.5))


# Story: an evaluated dose must not be re-selectable until the region is
# fully expanded, after which exclusions lapse.
def test_evaluated_doses_excluded_until_fully_expanded():
    evaluated = [(0.0, 0.0), (0.25, 0.0)]
    for q in range(1, 8):
        kept = {tuple(d) for d in filter_candidates(_state(q, evaluated=evaluated), GRID)}
        assert not kept & set(evaluated)
    kept = {tuple(d) for d in filter_candidates(_state(8, evaluated=evaluated), GRID)}
    assert set(evaluated) <= kept
    assert len(kept) == len(GRID)


def test_exclusion_hypercube_uses_infinity_norm():
    # side 0.2 removes everything within 0.1 of an evaluated dose, per axis
    state = _state(8, evaluated=[(0.5, 0.5)], exclusion=0.2)
    # fully expanded disables the exclusion entirely
    assert len(filter_candidates(state, GRID)) == len(GRID)

    state = _state(6, evaluated=[(0.5, 0.5)], exclusion=0.2)
    near = np.array([[0.5, 0.5], [0.55, 0.45], [0.61, 0.5], [0.5, 0.39], [0.39, 0.39]])
    kept = filter_candidates(state, near)
    # |gap|_inf <= 0.1 is cut: exact center and (0.55, 0.45); the rest stay
    assert {tuple(d) for d in kept} == {(0.61, 0.5), (0.5, 0.39), (0.39, 0.39)}


def test_zero_side_excludes_exact_matches_only():
    state = _state(4, evaluated=[(0.25, 0.25)], exclusion=0.0)
    kept = {tuple(d) for d in filter_candidates(state, GRID)}
    assert (0.25, 0.25) not in kept
    assert (0.25, 0.5) in kept and (0.5, 0.25) in kept


def test_advance_outside_region_is_a_violation():
    state = _state(1)
    with pytest.raises(RegionViolation, match="outside"):
        advance(state, (0.5, 0.5))
    nxt = advance(state, (0.25, 0.0))
    assert nxt.iteration == 2
    assert nxt.evaluated == ((0.25, 0.0),)


def test_spec_validation():
    with pytest.raises(ValueError, match="positive"):
        RegionSpec(dims=2, rate=0.0)
    with pytest.raises(ValueError, match="l < rate"):
        RegionSpec(dims=2, rate=0.25, exclusion_side=0.25)
    with pytest.raises(ValueError, match="weights"):
        RegionSpec(dims=2, rate=0.25, weights=(1.0,))
    # weights default to ones
    assert RegionSpec(dims=3, rate=0.5).weights == (1.0, 1.0, 1.0)


def test_weighted_region_uses_weighted_sum():
    spec = RegionSpec(dims=2, rate=0.5, weights=(2.0, 1.0))
    state = RegionState(spec, iteration=1)
    assert region_contains(state, (0.25, 0.0))  # 2*0.25 = 0.5 <= 0.5
    assert not region_contains(state, (0.26, 0.0))
    assert region_contains(state, (0.0, 0.5))
    # full expansion needs rate*q >= sum(w) = 3
    assert not is_fully_expanded(RegionState(spec, iteration=5))
    assert is_fully_expanded(RegionState(spec, iteration=6))


# Story: whatever sequence of in-region doses is evaluated, the region only
# grows, and every evaluated dose was admissible at its time.
@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=12))
def test_advance_growth_property(picks):
    state = _state(0)
    for ai, bi in picks:
        dose = (ai / 4, bi / 4)
        admissible = region_contains(state, dose)
        if admissible:
            before = state.iteration
            state = advance(state, dose)
            assert state.iteration == before + 1
        else:
            with pytest.raises(RegionViolation):
                advance(state, dose)
    # everything recorded was inside the cube and the count matches growth
    assert len(state.evaluated) == state.iteration


# Story: filtering is monotone in q: a larger region never loses candidates
# (with exclusions off).
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10), st.integers(0, 10))
def test_region_filter_monotone(q1, q2):
    lo, hi = sorted((q1, q2))
    a = {tuple(d) for d in filter_candidates(_state(lo), GRID, use_exclusion=False)}
    b = {tuple(d) for d in filter_candidates(_state(hi), GRID, use_exclusion=False)}
    assert a <= b
