"""Deterministic unicycle course with two reference paths that cross twice.

State is ``(x, y, theta)``, the action is the heading increment ``dtheta``
and the car moves one unit per step::

    x' = x + cos(theta),  y' = y + sin(theta),  theta' = theta + dtheta

Both reference paths start at the origin on the left edge and follow
``y = amp * sin(3 * pi * x / width)``, so they meet again at one and two
thirds of the course width. Task 0 has a positive amplitude (starts facing
up), task 1 a negative one (starts facing down). The amplitudes differ,
which makes the two tasks reach the crossings at different times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED = 1.0


@dataclass(frozen=True)
class Course:
    width: float = 90.0
    amplitudes: tuple[float, float] = (12.0, -6.0)
    lookahead: int = 3
    max_steer: float = 0.6

    @property
    def crossings(self) -> tuple[float, float]:
        return (self.width / 3.0, 2.0 * self.width / 3.0)

    def path_y(self, task: int, x):
        return self.amplitudes[task] * np.sin(3.0 * np.pi * np.asarray(x) / self.width)

    def path_slope(self, task: int, x):
        k = 3.0 * np.pi / self.width
        return self.amplitudes[task] * k * np.cos(k * np.asarray(x))

    def start_state(self, task: int) -> np.ndarray:
        return np.array([0.0, 0.0, float(np.arctan(self.path_slope(task, 0.0)))])

    def reference(self, task: int, extra: int = 20) -> np.ndarray:
        """Points along the path spaced one unit of arc length apart.

        The path is extended past the right edge along its final tangent so
        the tracker always has a lookahead target.
        """
        xs = np.linspace(0.0, self.width, 20001)
        ys = self.path_y(task, xs)
        seg = np.hypot(np.diff(xs), np.diff(ys))
        s = np.concatenate([[0.0], np.cumsum(seg)])
        n = int(np.floor(s[-1]))
        grid = np.arange(n + 1, dtype=float)
        pts = np.column_stack([np.interp(grid, s, xs), np.interp(grid, s, ys)])
        heading = np.arctan(self.path_slope(task, self.width))
        tail = pts[-1] + np.outer(np.arange(1, extra + 1), [np.cos(heading), np.sin(heading)])
        return np.vstack([pts, tail])

    def segment_of(self, x: float) -> int:
        c1, c2 = self.crossings
        return 0 if x < c1 else (1 if x < c2 else 2)

    def at_end(self, state) -> bool:
        return bool(state[0] >= self.width)


def step(state, dtheta: float) -> np.ndarray:
    x, y, th = state
    return np.array([x + SPEED * np.cos(th), y + SPEED * np.sin(th), th + dtheta])


def pure_pursuit(state, target, max_steer: float) -> float:
    """Heading increment that puts the car on an arc through ``target``."""
    dx = target[0] - state[0]
    dy = target[1] - state[1]
    ld = max(np.hypot(dx, dy), 1e-9)
    alpha = np.arctan2(dy, dx) - state[2]
    alpha = (alpha + np.pi) % (2.0 * np.pi) - np.pi
    return float(np.clip(2.0 * SPEED * np.sin(alpha) / ld, -max_steer, max_steer))


def demonstrate(course: Course, task: int, rng: np.random.Generator, heading_sd: float = 0.02,
                max_steps: int = 400):
    """Roll out the noisy pure-pursuit demonstrator on one task.

    The demonstrator follows a time-indexed reference: at step ``t`` it aims
    at reference point ``t + lookahead`` and its subgoal is the course
    segment (before, between, after the crossings) of reference point ``t``.

    Returns
    -------
    states : (T, 3) array
    actions : (T, 1) array
    labels : (T,) int array
    """
    ref = course.reference(task)
    state = course.start_state(task)
    states, actions, labels = [], [], []
    for t in range(max_steps):
        target = ref[min(t + course.lookahead, len(ref) - 1)]
        a = pure_pursuit(state, target, course.max_steer) + heading_sd * rng.standard_normal()
        states.append(state)
        actions.append(a)
        labels.append(course.segment_of(ref[min(t, len(ref) - 1)][0]))
        if course.at_end(state):
            break
        state = step(state, a)
    else:
        raise RuntimeError(f"demonstrator did not reach the course end within {max_steps} steps")
    return np.array(states), np.array(actions)[:, None], np.array(labels, dtype=int)
