"""Subgoal-conditioned execution by replaying learned patterns.

Each factor ``j`` of a fitted pattern tensor ``O`` is treated as a skill:
its state rows give where the skill starts and ends, its action rows give
an open-loop action sequence. Execution repeatedly picks the skill whose
starting state is closest to the current state, plays its actions through
the environment and re-selects once the skill's final state is reached or
its budget runs out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import NormalizationInfo
from .driving import Course, step as driving_step
from .tensorops import as_tensor3


class PatternExhausted(IndexError):
    """Raised when playback asks for a lag outside the pattern."""


@dataclass(frozen=True)
class ExecutionConfig:
    # Termination radius, measured in normalized state units.
    epsilon: float = 0.05
    max_steps: int = 200
    # None means 2 * L.
    max_subtask_steps: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_steps < 1 or (self.max_subtask_steps is not None and self.max_subtask_steps < 1):
            raise ValueError("step budgets must be >= 1")

    def subtask_budget(self, L: int) -> int:
        return self.max_subtask_steps if self.max_subtask_steps is not None else 2 * L


@dataclass
class Rollout:
    states: np.ndarray  # (steps + 1, d_s), starting state first
    actions: np.ndarray  # (steps, d_a)
    subgoals: np.ndarray  # (steps,) factor played at each step
    terminated: bool
    steps: int

    @property
    def switches(self) -> int:
        """Number of times the played factor changes."""
        return int(np.count_nonzero(np.diff(self.subgoals))) if self.steps else 0

    def summary(self) -> dict:
        return {"terminated": self.terminated, "steps": self.steps, "switches": self.switches}


def pattern_span(O, j: int, rel_tol: float = 1e-12) -> tuple[int, int] | None:
    """First and last lag of factor ``j`` that carry nonzero energy, or None if the slice is empty."""
    O = as_tensor3(O, "O")
    energy = O[:, j, :].sum(axis=0)
    nz = np.flatnonzero(energy > rel_tol * max(float(O.max()), 1e-300))
    if nz.size == 0:
        return None
    return int(nz[0]), int(nz[-1])


def select_subgoal(s, O, norm: NormalizationInfo) -> int:
    """Factor whose first pattern state is nearest (Euclidean, normalized units) to ``s``.

    Ties go to the smaller index; factors with an all-zero slice are never chosen.
    """
    O = as_tensor3(O, "O")
    k = norm.n_state
    if O.shape[0] != len(norm.row_min):
        raise ValueError("O rows do not match the normalization info")
    z = norm.scale_state(s)
    best, best_d = None, np.inf
    for j in range(O.shape[1]):
        span = pattern_span(O, j)
        if span is None:
            continue
        d = float(np.linalg.norm(z - O[:k, j, span[0]]))
        if d < best_d:
            best, best_d = j, d
    if best is None:
        raise ValueError("every factor of O is all zero")
    return best


def playback_action(O, j: int, lag: int, norm: NormalizationInfo) -> np.ndarray:
    """Action rows of ``O[:, j, lag]`` mapped back to environment units."""
    O = as_tensor3(O, "O")
    if not 0 <= lag < O.shape[2]:
        raise PatternExhausted(f"lag {lag} outside [0, {O.shape[2]})")
    return norm.unscale_action(O[norm.n_state:, j, lag])


def execute_task(start, O, norm: NormalizationInfo, cfg: ExecutionConfig = ExecutionConfig(),
                 course: Course = Course(), step_fn=driving_step) -> Rollout:
    """Drive from ``start`` by chaining pattern playbacks until the course end or the step budget.

    A subtask ends after at least one step once the normalized state is
    within ``epsilon`` of the pattern's last state, or when the pattern's
    lags or ``cfg.max_subtask_steps`` run out.
    """
    O = as_tensor3(O, "O")
    k = norm.n_state
    budget = cfg.subtask_budget(O.shape[2])
    state = np.asarray(start, dtype=np.float64)
    states, actions, subgoals = [state], [], []
    while not course.at_end(state) and len(actions) < cfg.max_steps:
        j = select_subgoal(state, O, norm)
        first, last = pattern_span(O, j)
        target = O[:k, j, last]
        lag, played = first, 0
        while len(actions) < cfg.max_steps and played < budget:
            try:
                a = playback_action(O, j, lag, norm)
            except PatternExhausted:
                break
            state = step_fn(state, float(a[0]) if a.size == 1 else a)
            states.append(state)
            actions.append(a)
            subgoals.append(j)
            lag += 1
            played += 1
            if course.at_end(state) or lag > last:
                break
            if np.linalg.norm(norm.scale_state(state) - target) <= cfg.epsilon:
                break
    d_a = len(norm.row_min) - k
    return Rollout(
        states=np.array(states),
        actions=np.array(actions).reshape(-1, d_a),
        subgoals=np.array(subgoals, dtype=int),
        terminated=bool(course.at_end(state)),
        steps=len(actions),
    )
