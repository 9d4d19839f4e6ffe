"""Turn fitted factors into per-step subgoal weights, segmentations and boundary scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .tensorops import as_matrix, as_tensor3

UNASSIGNED = -1


@dataclass(frozen=True)
class SubgoalMatrix:
    G: np.ndarray  # (J, T); nonzero-energy columns sum to 1
    zero_columns: np.ndarray  # (T,) bool

    @property
    def J(self) -> int:
        return self.G.shape[0]

    def columns(self, idx) -> "SubgoalMatrix":
        return SubgoalMatrix(self.G[:, idx], self.zero_columns[idx])


@dataclass(frozen=True)
class Segmentation:
    labels: np.ndarray  # (T,) int, UNASSIGNED where no factor dominates
    boundaries: np.ndarray  # indices t with labels[t] != labels[t - 1]

    def runs(self) -> list[tuple[int, int, int]]:
        """``(start, stop, label)`` for each maximal run of one label (stop exclusive)."""
        edges = [0, *self.boundaries.tolist(), len(self.labels)]
        return [(a, b, int(self.labels[a])) for a, b in zip(edges[:-1], edges[1:])]

    def labeled_runs(self) -> list[tuple[int, int, int]]:
        return [r for r in self.runs() if r[2] != UNASSIGNED]


@dataclass(frozen=True)
class BoundaryMetrics:
    precision: float
    recall: float
    f1: float
    matches: list[tuple[int, int]]

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def factor_energy(O, H) -> np.ndarray:
    """Per-factor contribution to each reconstructed column, summed over rows.

    ``E[j, t] = sum_d sum_l O[d, j, l] * H[j, t - l]``.
    """
    O = as_tensor3(O, "O")
    H = as_matrix(H, "H")
    if O.shape[1] != H.shape[0]:
        raise ValueError(f"O has J={O.shape[1]} but H has {H.shape[0]} rows")
    W = O.sum(axis=0)  # (J, L)
    T = H.shape[1]
    E = np.zeros_like(H)
    for lag in range(min(W.shape[1], T)):
        E[:, lag:] += W[:, lag, None] * H[:, : T - lag]
    return E


def to_subgoal_matrix(O, H) -> SubgoalMatrix:
    """Share of each factor in the reconstruction energy of every column."""
    E = factor_energy(O, H)
    total = E.sum(axis=0)
    zero = total <= 0
    G = np.zeros_like(E)
    G[:, ~zero] = E[:, ~zero] / total[~zero]
    return SubgoalMatrix(G, zero)


def _bridge_gaps(labels: np.ndarray, max_gap: float) -> np.ndarray:
    labels = labels.copy()
    T = len(labels)
    t = 0
    while t < T:
        if labels[t] != UNASSIGNED:
            t += 1
            continue
        end = t
        while end < T and labels[end] == UNASSIGNED:
            end += 1
        if 0 < t and end < T and end - t < max_gap and labels[t - 1] == labels[end]:
            labels[t:end] = labels[t - 1]
        t = end
    return labels


def segment(G: SubgoalMatrix, min_weight: float = 0.5, L: int = 1) -> Segmentation:
    """Label each column with its dominant factor.

    Columns whose largest weight is below ``min_weight`` (or which carry no
    energy at all) are unassigned. Unassigned gaps shorter than ``L / 2`` are
    filled when the labels on both sides agree.
    """
    if not 0 <= min_weight < 1:
        raise ValueError("min_weight must lie in [0, 1)")
    W = G.G
    labels = np.argmax(W, axis=0).astype(int)
    labels[(W.max(axis=0) < min_weight) | G.zero_columns] = UNASSIGNED
    labels = _bridge_gaps(labels, L / 2.0)
    boundaries = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    return Segmentation(labels, boundaries)


def boundary_metrics(pred, truth, tol: int = 1) -> BoundaryMetrics:
    """Precision/recall/F1 of one-to-one boundary matching within ``tol`` steps.

    Pairs are matched greedily, closest first. Two empty sets score 1.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    pred = sorted(int(p) for p in pred)
    truth = sorted(int(t) for t in truth)
    if not pred and not truth:
        return BoundaryMetrics(1.0, 1.0, 1.0, [])
    pairs = sorted(
        (abs(p - q), p, q) for p in pred for q in truth if abs(p - q) <= tol
    ) if len(pred) * len(truth) < 4_000_000 else _window_pairs(pred, truth, tol)
    used_p, used_t, matches = set(), set(), []
    for _, p, q in pairs:
        if p not in used_p and q not in used_t:
            used_p.add(p)
            used_t.add(q)
            matches.append((p, q))
    m = len(matches)
    precision = m / len(pred) if pred else 0.0
    recall = m / len(truth) if truth else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return BoundaryMetrics(precision, recall, f1, sorted(matches))


def _window_pairs(pred, truth, tol):
    truth_arr = np.asarray(truth)
    out = []
    for p in pred:
        lo, hi = np.searchsorted(truth_arr, [p - tol, p + tol + 1])
        out.extend((abs(p - q), p, int(q)) for q in truth_arr[lo:hi])
    return sorted(out)


def activation_onsets(O, H, L: int | None = None, rel_height: float = 0.25) -> np.ndarray:
    """Columns where some pattern instance starts.

    The activity of a column is ``sum_j H[j, t] * mass(O_j)``; onsets are its
    peaks that reach ``rel_height`` times the 99th percentile of the activity
    and lie at least ``ceil(L / 2)`` apart.
    """
    O = as_tensor3(O, "O")
    H = as_matrix(H, "H")
    L = O.shape[2] if L is None else L
    activity = O.sum(axis=(0, 2)) @ H
    ref = np.quantile(activity, 0.99) if activity.size else 0.0
    if ref <= 0:
        return np.array([], dtype=int)
    padded = np.concatenate([[0.0], activity, [0.0]])
    peaks, _ = find_peaks(padded, height=rel_height * ref, distance=max(1, math.ceil(L / 2)))
    return peaks - 1


def split_at_onsets(seg: Segmentation, onsets) -> list[tuple[int, int, int]]:
    """Labeled runs further cut at onsets that fall strictly inside a run."""
    cuts = set(int(o) for o in onsets)
    blocks = []
    for a, b, lab in seg.labeled_runs():
        inner = sorted(c for c in cuts if a < c < b)
        edges = [a, *inner, b]
        blocks.extend((s, e, lab) for s, e in zip(edges[:-1], edges[1:]))
    return blocks
