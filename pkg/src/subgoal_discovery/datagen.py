"""Synthetic demonstration datasets with ground-truth subgoals.

Color datasets are one-dimensional: the state is a noisy color code
(red=1, yellow=2, blue=3, purple=4), the subgoal is the color being
pursued and the action moves the state onto it,
``a_t = goal_t - s_t`` and ``s_{t+1} = s_t + a_t + noise``.
The Driving dataset comes from :mod:`subgoal_discovery.driving`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .driving import Course, demonstrate

RED, YELLOW, BLUE, PURPLE = 1.0, 2.0, 3.0, 4.0
COLOR_NAMES = {1: "red", 2: "yellow", 3: "blue", 4: "purple"}
COLOR10_TEMPLATES = (
    (RED,) * 3 + (YELLOW,) * 3 + (BLUE,) * 4,
    (BLUE,) * 3 + (YELLOW,) * 3 + (RED,) * 4,
)
GENERATORS = ("color3-simple", "color3-conditional", "color10", "driving")


@dataclass
class Trajectory:
    states: np.ndarray  # (T, d_s)
    actions: np.ndarray  # (T, d_a)
    subgoal_labels: np.ndarray  # (T,) int
    boundaries: list[int]
    task_id: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64).reshape(len(self.states), -1)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(len(self.actions), -1)
        self.subgoal_labels = np.asarray(self.subgoal_labels, dtype=int)
        self.boundaries = [int(b) for b in self.boundaries]
        T = len(self.states)
        if len(self.actions) != T or len(self.subgoal_labels) != T:
            raise ValueError("states, actions and labels must have equal length")
        b = np.asarray(self.boundaries)
        if b.size and (np.any(np.diff(b) <= 0) or b[0] < 1 or b[-1] >= T):
            raise ValueError("boundaries must be strictly increasing and lie in [1, T)")

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trajectories:
            ds = {t.states.shape[1] for t in self.trajectories}
            da = {t.actions.shape[1] for t in self.trajectories}
            if len(ds) > 1 or len(da) > 1:
                raise ValueError("all trajectories must share state and action dimensions")

    @property
    def generator(self) -> str:
        return self.meta.get("generator", "")

    @property
    def d_s(self) -> int:
        return self.trajectories[0].states.shape[1]

    @property
    def d_a(self) -> int:
        return self.trajectories[0].actions.shape[1]

    def __len__(self) -> int:
        return len(self.trajectories)


def _rollout_goals(goals: np.ndarray, s0: float, noise_sd: float, rng) -> tuple[np.ndarray, np.ndarray]:
    T = len(goals)
    noise = rng.normal(0.0, noise_sd, size=T) if noise_sd > 0 else np.zeros(T)
    s = np.empty(T)
    a = np.empty(T)
    s[0] = s0
    for t in range(T):
        a[t] = goals[t] - s[t]
        if t + 1 < T:
            s[t + 1] = s[t] + a[t] + noise[t]
    return s, a


def gen_color3(mode: str = "simple", n_seq: int = 100, T: int = 300, noise_sd: float = 0.1,
               seed: int = 0) -> Dataset:
    """Sequences of 3-step color blocks; labels are the pursued color (0-based)."""
    if mode not in ("simple", "conditional"):
        raise ValueError("mode must be 'simple' or 'conditional'")
    if T % 3 or T < 3:
        raise ValueError("T must be a positive multiple of 3")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    trajs = []
    for _ in range(n_seq):
        colors = rng.integers(1, 4, size=T // 3).astype(float)
        if mode == "conditional":
            recolor = (colors[1:] == YELLOW) & ((colors[:-1] == YELLOW) | (colors[:-1] == BLUE))
            colors[1:][recolor] = PURPLE
        goals = np.repeat(colors, 3)
        s0 = float(rng.integers(1, 4)) + (rng.normal(0.0, noise_sd) if noise_sd > 0 else 0.0)
        s, a = _rollout_goals(goals, s0, noise_sd, rng)
        trajs.append(Trajectory(s, a, goals.astype(int) - 1, list(range(3, T, 3)), 0))
    meta = {"generator": f"color3-{mode}", "params": {"n_seq": n_seq, "T": T, "noise_sd": noise_sd},
            "seed": seed}
    return Dataset(trajs, meta)


def gen_color10(n_seq: int = 100, T: int = 300, noise_sd: float = 0.1, seed: int = 0) -> Dataset:
    """Random concatenations of the two 10-step color templates; labels are template ids."""
    if T % 10 or T < 10:
        raise ValueError("T must be a positive multiple of 10")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    templates = np.asarray(COLOR10_TEMPLATES)
    trajs = []
    for _ in range(n_seq):
        picks = rng.integers(0, 2, size=T // 10)
        goals = templates[picks].ravel()
        s0 = float(rng.integers(1, 4)) + (rng.normal(0.0, noise_sd) if noise_sd > 0 else 0.0)
        s, a = _rollout_goals(goals, s0, noise_sd, rng)
        trajs.append(Trajectory(s, a, np.repeat(picks, 10), list(range(10, T, 10)), 0))
    meta = {"generator": "color10", "params": {"n_seq": n_seq, "T": T, "noise_sd": noise_sd}, "seed": seed}
    return Dataset(trajs, meta)


def gen_driving(n_per_task: int = 50, seed: int = 0, heading_sd: float = 0.02,
                course: Course | None = None) -> Dataset:
    """Noisy pure-pursuit demonstrations of both driving tasks, task 0 first."""
    if n_per_task < 1:
        raise ValueError("n_per_task must be >= 1")
    course = course or Course()
    rng = np.random.default_rng(seed)
    trajs = []
    for task in (0, 1):
        for _ in range(n_per_task):
            s, a, g = demonstrate(course, task, rng, heading_sd)
            bounds = (np.flatnonzero(np.diff(g)) + 1).tolist()
            trajs.append(Trajectory(s, a, g, bounds, task))
    meta = {
        "generator": "driving",
        "params": {"n_per_task": n_per_task, "heading_sd": heading_sd, "width": course.width,
                   "amplitudes": list(course.amplitudes), "lookahead": course.lookahead,
                   "max_steer": course.max_steer},
        "seed": seed,
    }
    return Dataset(trajs, meta)


def course_from_meta(meta: dict) -> Course:
    p = meta.get("params", {})
    return Course(width=p.get("width", 90.0), amplitudes=tuple(p.get("amplitudes", (12.0, -6.0))),
                  lookahead=p.get("lookahead", 3), max_steer=p.get("max_steer", 0.6))


def generate(name: str, seed: int = 0, **params) -> Dataset:
    """Dispatch on a generator name from :data:`GENERATORS`."""
    params = {k: v for k, v in params.items() if v is not None}
    if name == "color3-simple":
        return gen_color3("simple", seed=seed, **params)
    if name == "color3-conditional":
        return gen_color3("conditional", seed=seed, **params)
    if name == "color10":
        return gen_color10(seed=seed, **params)
    if name == "driving":
        return gen_driving(seed=seed, **params)
    raise ValueError(f"unknown generator {name!r}; expected one of {', '.join(GENERATORS)}")


@dataclass(frozen=True)
class NormalizationInfo:
    """Per-row min/max of the raw data matrix; the first ``n_state`` rows are state."""

    row_min: np.ndarray
    row_max: np.ndarray
    n_state: int

    def __post_init__(self):
        if np.any(self.row_max < self.row_min):
            raise ValueError("row_max must be >= row_min")

    @property
    def span(self) -> np.ndarray:
        span = self.row_max - self.row_min
        return np.where(span > 0, span, 1.0)

    def scale(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        shape = (-1,) + (1,) * (raw.ndim - 1)
        out = (raw - self.row_min.reshape(shape)) / self.span.reshape(shape)
        return np.where((self.row_max > self.row_min).reshape(shape), out, 0.0)

    def unscale(self, scaled):
        scaled = np.asarray(scaled, dtype=np.float64)
        shape = (-1,) + (1,) * (scaled.ndim - 1)
        return self.row_min.reshape(shape) + scaled * (self.row_max - self.row_min).reshape(shape)

    def scale_state(self, s):
        k = self.n_state
        s = np.asarray(s, dtype=np.float64)
        span = self.span[:k]
        return np.where(self.row_max[:k] > self.row_min[:k], (s - self.row_min[:k]) / span, 0.0)

    def unscale_action(self, a):
        k = self.n_state
        return self.row_min[k:] + np.asarray(a, dtype=np.float64) * (self.row_max[k:] - self.row_min[k:])

    def to_dict(self) -> dict:
        return {"row_min": self.row_min.tolist(), "row_max": self.row_max.tolist(), "n_state": self.n_state}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationInfo":
        return cls(np.asarray(d["row_min"], float), np.asarray(d["row_max"], float), int(d["n_state"]))


@dataclass(frozen=True)
class DataMatrix:
    X: np.ndarray  # (D, T_total) scaled into [0, 1]
    norm: NormalizationInfo
    # (trajectory index, step) per column; separator columns hold (-1, -1)
    column_map: np.ndarray

    @property
    def separators(self) -> np.ndarray:
        return self.column_map[:, 0] < 0

    def columns_of(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.column_map[:, 0] == i)

    def __iter__(self):
        return iter((self.X, self.norm, self.column_map))


def build_data_matrix(ds: Dataset) -> DataMatrix:
    """Stack ``x_t = (s_t; a_t)`` for all trajectories with a zero column between them.

    Each row is min-max scaled into [0, 1] using the data columns only;
    constant rows map to 0.
    """
    if len(ds) == 0:
        raise ValueError("dataset has no trajectories")
    blocks, cmap = [], []
    for i, tr in enumerate(ds.trajectories):
        if i:
            blocks.append(None)
            cmap.append((-1, -1))
        blocks.append(np.hstack([tr.states, tr.actions]).T)
        cmap.extend((i, t) for t in range(len(tr)))
    data = np.hstack([b for b in blocks if b is not None])
    norm = NormalizationInfo(data.min(axis=1), data.max(axis=1), ds.d_s)
    D = data.shape[0]
    parts = [np.zeros((D, 1)) if b is None else norm.scale(b) for b in blocks]
    X = np.clip(np.hstack(parts), 0.0, 1.0)
    return DataMatrix(X, norm, np.asarray(cmap, dtype=int))
