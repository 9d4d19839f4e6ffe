"""End-to-end helpers shared by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import groupby

import numpy as np

from .datagen import COLOR10_TEMPLATES, DataMatrix, Dataset, NormalizationInfo, build_data_matrix
from .policy import pattern_span
from .seqnmf import FitResult, SeqNmfConfig, fit_restarts
from .subgoals import (
    Segmentation,
    activation_onsets,
    boundary_metrics,
    segment,
    split_at_onsets,
    to_subgoal_matrix,
)

BOUNDARY_METHODS = ("auto", "labels", "onsets")


def fit_dataset(ds: Dataset, cfg: SeqNmfConfig, n_restarts: int = 1, callback=None) -> tuple[DataMatrix, FitResult]:
    dm = build_data_matrix(ds)
    return dm, fit_restarts(dm.X, cfg, n_restarts, separators=dm.separators, callback=callback)


def resolve_method(method: str, generator: str) -> str:
    """``auto`` picks pattern onsets for Color-3, where back-to-back blocks can share a label."""
    if method not in BOUNDARY_METHODS:
        raise ValueError(f"boundary method must be one of {BOUNDARY_METHODS}")
    if method != "auto":
        return method
    return "onsets" if generator.startswith("color3") else "labels"


def _local_onsets(onsets: np.ndarray, cols: np.ndarray) -> np.ndarray:
    inside = onsets[(onsets >= cols[0]) & (onsets <= cols[-1])]
    return np.searchsorted(cols, inside)


@dataclass
class TrajectoryEval:
    segmentation: Segmentation
    predicted: list[int]
    truth: list[int]
    precision: float
    recall: float
    f1: float

    @property
    def n_runs(self) -> int:
        return len(self.segmentation.labeled_runs())


@dataclass
class FitEval:
    method: str
    tol: int
    trajectories: list[TrajectoryEval] = field(default_factory=list)

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(t, attr) for t in self.trajectories]))

    @property
    def f1(self) -> float:
        return self.mean("f1")

    def run_counts(self) -> list[int]:
        return [t.n_runs for t in self.trajectories]

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "tol": self.tol,
            "precision": self.mean("precision"),
            "recall": self.mean("recall"),
            "f1": self.f1,
            "run_count_histogram": np.bincount(self.run_counts()).tolist(),
        }


def evaluate_fit(ds: Dataset, dm: DataMatrix, res: FitResult, method: str = "auto", tol: int = 1,
                 min_weight: float = 0.5) -> FitEval:
    """Segment every trajectory and score predicted boundaries against the ground truth."""
    method = resolve_method(method, ds.generator)
    L = res.config.L
    G = to_subgoal_matrix(res.O, res.H)
    onsets = activation_onsets(res.O, res.H, L) if method == "onsets" else None
    out = FitEval(method, tol)
    for i, tr in enumerate(ds.trajectories):
        cols = dm.columns_of(i)
        seg = segment(G.columns(cols), min_weight, L)
        if method == "onsets":
            pred = [int(t) for t in _local_onsets(onsets, cols) if t > 0]
        else:
            pred = seg.boundaries.tolist()
        m = boundary_metrics(pred, tr.boundaries, tol)
        out.trajectories.append(TrajectoryEval(seg, pred, list(tr.boundaries), m.precision, m.recall, m.f1))
    return out


# Color-10 pattern checks


def color_signature(O, j: int, norm: NormalizationInfo) -> tuple[int, ...]:
    """Order of pursued colors along factor ``j``, with repeats collapsed.

    The pursued color at each lag is ``s + a`` in raw units (the state
    trails the goal by one step, the action closes the gap). Values are
    rounded to the nearest of red=1, yellow=2, blue=3.
    """
    span = pattern_span(O, j)
    if span is None:
        return ()
    raw = norm.unscale(np.asarray(O)[:, j, span[0]:span[1] + 1])
    goal = raw[0] + raw[norm.n_state]
    codes = np.clip(np.rint(goal), 1, 3).astype(int)
    return tuple(int(k) for k, _ in groupby(codes))


def template_signatures() -> set[tuple[int, ...]]:
    return {tuple(int(k) for k, _ in groupby(t)) for t in COLOR10_TEMPLATES}


def block_coverage(ds: Dataset, dm: DataMatrix, res: FitResult, length: int = 10, slack: int = 1,
                   min_weight: float = 0.5) -> float:
    """Share of steps lying in segmentation blocks whose length is ``length +- slack``.

    Blocks are labeled runs cut further at pattern onsets, so back-to-back
    repeats of one pattern count as separate blocks.
    """
    L = res.config.L
    G = to_subgoal_matrix(res.O, res.H)
    onsets = activation_onsets(res.O, res.H, L)
    covered = total = 0
    for i in range(len(ds)):
        cols = dm.columns_of(i)
        seg = segment(G.columns(cols), min_weight, L)
        blocks = split_at_onsets(seg, _local_onsets(onsets, cols))
        covered += sum(e - s for s, e, _ in blocks if abs((e - s) - length) <= slack)
        total += len(cols)
    return covered / total if total else 0.0
