"""Sequential expansion of the admissible dose region during run-in.

The region at iteration q is the lower half-space {w'd <= rate*q} intersected
with the unit cube, so dosing starts at the origin and creeps toward higher
combinations one expansion step per evaluated dose. Small exclusion
neighborhoods around already-evaluated doses keep the run-in from resampling
them until the region covers the whole cube.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class RegionViolation(ValueError):
    """A dose was submitted outside the current escalation region."""


@dataclass(frozen=True)
class RegionSpec:
    dims: int
    rate: float
    weights: tuple[float, ...] = ()
    exclusion_side: float = 0.0

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError("dims must be >= 1")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        w = self.weights or (1.0,) * self.dims
        w = tuple(float(v) for v in w)
        if len(w) != self.dims or any(v <= 0 for v in w):
            raise ValueError("weights must be %d positive reals" % self.dims)
        # l_k is "much smaller" than the expansion rate; enforce the testable part
        if not (0.0 <= self.exclusion_side < self.rate):
            raise ValueError("exclusion_side must satisfy 0 <= l < rate")
        object.__setattr__(self, "weights", w)

    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class RegionState:
    spec: RegionSpec
    iteration: int = 0
    evaluated: tuple[tuple[float, ...], ...] = field(default=())

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError("iteration must be nonnegative")


def _dose_row(dose, dims: int) -> np.ndarray:
    d = np.asarray(dose, dtype=float).reshape(-1)
    if d.shape[0] != dims:
        raise ValueError("dose has %d coordinates, region expects %d" % (d.shape[0], dims))
    return d


def region_contains(state: RegionState, dose) -> bool:
    """True iff the dose lies in the closed half-space w'd <= rate*iteration."""
    d = _dose_row(dose, state.spec.dims)
    return bool(state.spec.weight_array() @ d <= state.spec.rate * state.iteration)


def is_fully_expanded(state: RegionState) -> bool:
    """True once the far corner of the cube is admissible: rate*q >= sum(w)."""
    return state.spec.rate * state.iteration >= float(sum(state.spec.weights))


def filter_candidates(state: RegionState, candidates, use_exclusion: bool = True) -> np.ndarray:
    """Candidates inside the region, minus exclusion neighborhoods.

    Exclusion removes candidates within an axis-aligned hypercube of side
    exclusion_side centered at any evaluated dose (side 0 removes exact
    matches only). It applies only while the region is still growing.
    """
    cands = np.atleast_2d(np.asarray(candidates, dtype=float))
    if cands.size == 0:
        return cands.reshape(0, state.spec.dims)
    w = state.spec.weight_array()
    keep = cands @ w <= state.spec.rate * state.iteration
    cands = cands[keep]
    if not use_exclusion or is_fully_expanded(state) or not state.evaluated:
        return cands
    half = state.spec.exclusion_side / 2.0
    for point in state.evaluated:
        gaps = np.abs(cands - np.asarray(point, dtype=float))
        cands = cands[~(gaps.max(axis=1) <= half)]
        if cands.size == 0:
            break
    return cands


def advance(state: RegionState, newly_evaluated) -> RegionState:
    """Record an evaluated dose and expand the region one step."""
    d = _dose_row(newly_evaluated, state.spec.dims)
    if not region_contains(state, d):
        raise RegionViolation("dose %s is outside the current escalation region" % (tuple(d),))
    return RegionState(
        spec=state.spec,
        iteration=state.iteration + 1,
        evaluated=state.evaluated + (tuple(float(v) for v in d),),
    )
